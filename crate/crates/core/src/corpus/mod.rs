//! Report records, dataset I/O and the synthetic corruption generator.

mod corrupt;
mod generate;
mod lexicon;
mod records;

pub use corrupt::{CorruptionKind, CorruptionOp, Corruptor, KindMap};
pub use generate::{
    bundled_references, compose_references, derive_seed, format_references, generate_tiered,
    parse_references, read_references, Reference, Tier, TierBand, TierSpec, TieredGenerator,
    BUNDLED_SEED,
};
pub use lexicon::{join_sentences, split_sentences, Lexicon, SwapTable};
pub use records::{parse_records, read_records, records_to_string, write_records};

use crate::scoring::SubScores;

/// A candidate report scored against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRecord {
    pub id: String,
    pub reference_text: String,
    pub candidate_text: String,
    pub subs: SubScores,
    /// Native total score.
    pub total: f64,
    /// Total in quality orientation (higher is better). Not stored on disk.
    pub quality: f64,
    pub tier: Tier,
}

impl ReportRecord {
    /// Reference id encoded in the record id (`<reference>#<tier>`), or the
    /// whole id when there is no `#`.
    pub fn reference_id(&self) -> &str {
        self.id.rsplit_once('#').map_or(&self.id, |(r, _)| r)
    }
}
