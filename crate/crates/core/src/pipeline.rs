//! End-to-end experiments on a synthetic planted-ranking corpus.
//!
//! compose references -> generate tiers -> split by reference -> pair ->
//! normalize margins -> train -> correlate total reward with planted quality,
//! next to BLEU-4 and ROUGE-L on the same held-out records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{compose_references, generate_tiered, ReportRecord, TierSpec};
use crate::error::{Error, Result};
use crate::eval::{
    add_criterion_correlations, binarize, bleu4, evaluate_metric, fit_thresholds, rouge_l, subscore_accuracy,
    CriterionStat, EvalReport,
};
use crate::features::{FeatureSpec, Featurizer};
use crate::loss::LossTerms;
use crate::model::{score_report, Arch, RewardModel};
use crate::pairing::{make_pairs, normalize_all, PairLine};
use crate::scoring::ScoringSystem;
use crate::train::{prepare_pairs, EpochLog, TrainConfig, TrainPair, Trainer};

/// Lambda values swept by [`ablate_lambda`].
pub const LAMBDA_GRID: [f64; 6] = [0.5, 0.8, 1.0, 1.2, 2.0, 3.0];

/// Loss-term variants compared by [`ablate_terms`].
pub const TERMS_GRID: [LossTerms; 3] = [LossTerms::TotalOnly, LossTerms::IndividualOnly, LossTerms::Both];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset name or path to a system definition.
    pub system: String,
    pub references: usize,
    /// References reserved for evaluation; their records never reach training.
    pub held_out: usize,
    /// Seed for composing references and generating candidates.
    pub seed: u64,
    pub features: FeatureSpec,
    pub arch: Arch,
    pub normalize: bool,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: "radcliq6".into(),
            references: 200,
            held_out: 50,
            seed: 7,
            features: FeatureSpec::default(),
            arch: Arch::Linear,
            normalize: true,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.held_out == 0 || self.held_out >= self.references {
            return Err(Error::validation(
                "held_out",
                format!("must be in 1..{} for {} references", self.references, self.references),
            ));
        }
        self.features.validate()?;
        self.train.validate()
    }
}

/// Records split by reference plus featurized training pairs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub system: ScoringSystem,
    pub featurizer: Featurizer,
    pub train_records: Vec<ReportRecord>,
    pub test_records: Vec<ReportRecord>,
    pub pair_lines: Vec<PairLine>,
    pub pairs: Vec<TrainPair<f64>>,
}

/// Builds the corpus and training pairs. The last `held_out` references
/// (in composition order) form the test split.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let system = ScoringSystem::load(&config.system)?;
    let refs = compose_references(config.references, config.seed);
    let tiers = TierSpec::default_for(&system)?;
    let records = generate_tiered(&refs, &system, &tiers, config.seed)?;
    let cut = refs.len() - config.held_out;
    let test_ids: std::collections::HashSet<&str> = refs[cut..].iter().map(|r| r.id.as_str()).collect();
    let (test_records, train_records): (Vec<_>, Vec<_>) =
        records.into_iter().partition(|r| test_ids.contains(r.reference_id()));
    let pairs = make_pairs(&train_records, &system)?;
    let pairs = if config.normalize { normalize_all(&pairs, &system)? } else { pairs };
    let pair_lines: Vec<PairLine> = pairs.iter().map(PairLine::from).collect();
    let featurizer = Featurizer::new(config.features.clone())?;
    let featurized = prepare_pairs(&featurizer, &pair_lines)?;
    Ok(Prepared {
        system,
        featurizer,
        train_records,
        test_records,
        pair_lines,
        pairs: featurized,
    })
}

/// Trains a freshly initialized model; initialization uses the training seed.
pub fn train_model(
    prepared: &Prepared,
    arch: Arch,
    train: &TrainConfig,
) -> Result<(RewardModel<f64>, Vec<EpochLog>)> {
    let model = RewardModel::init(
        prepared.featurizer.spec().clone(),
        arch,
        prepared.system.name(),
        prepared.system.len(),
        train.seed,
    )?;
    let mut t = Trainer::new(model, train.clone())?;
    t.run(&prepared.pairs)?;
    let log = t.log().to_vec();
    Ok((t.into_model(), log))
}

/// Per-criterion rewards for each record.
pub fn score_records(
    model: &RewardModel<f64>,
    featurizer: &Featurizer,
    records: &[ReportRecord],
) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| Ok(score_report(model, featurizer, &r.id, &r.reference_text, &r.candidate_text)?.values))
        .collect()
}

/// Learned-metric report: total reward against quality, per-criterion
/// correlations against quality components and, for binary systems,
/// accuracies with thresholds fitted on `threshold_records`.
pub fn evaluate_model(
    name: &str,
    model: &RewardModel<f64>,
    featurizer: &Featurizer,
    system: &ScoringSystem,
    records: &[ReportRecord],
    threshold_records: Option<&[ReportRecord]>,
) -> Result<EvalReport> {
    if model.n_out() != system.len() {
        return Err(Error::validation(
            "model",
            format!("model has {} outputs but system `{}` has {} criteria", model.n_out(), system.name(), system.len()),
        ));
    }
    let rewards = score_records(model, featurizer, records)?;
    let totals: Vec<f64> = rewards.iter().map(|r| r.iter().sum()).collect();
    let human: Vec<f64> = records.iter().map(|r| r.quality).collect();
    let mut report = evaluate_metric(name, &totals, &human)?;
    let ids: Vec<String> = system.criteria().iter().map(|c| c.id.clone()).collect();
    let comps = records
        .iter()
        .map(|r| system.quality_components(&r.subs))
        .collect::<Result<Vec<_>>>()?;
    add_criterion_correlations(&mut report, &ids, &rewards, &comps)?;
    if let (true, Some(fit)) = (system.is_binary(), threshold_records) {
        let fit_rewards = score_records(model, featurizer, fit)?;
        let fit_truth: Vec<_> = fit.iter().map(|r| r.subs.clone()).collect();
        let th = fit_thresholds(system, &fit_rewards, &fit_truth)?;
        let truth: Vec<_> = records.iter().map(|r| r.subs.clone()).collect();
        for (id, accuracy) in subscore_accuracy(system, &binarize(&rewards, &th), &truth)? {
            report.per_criterion.push(CriterionStat::Accuracy { id, accuracy });
        }
    }
    Ok(report)
}

/// BLEU-4 and ROUGE-L against planted quality.
pub fn baseline_reports(records: &[ReportRecord]) -> Result<Vec<EvalReport>> {
    let human: Vec<f64> = records.iter().map(|r| r.quality).collect();
    let bleu = records
        .iter()
        .map(|r| bleu4(&r.reference_text, &r.candidate_text))
        .collect::<Result<Vec<_>>>()?;
    let rouge = records
        .iter()
        .map(|r| rouge_l(&r.reference_text, &r.candidate_text))
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![evaluate_metric("bleu4", &bleu, &human)?, evaluate_metric("rouge_l", &rouge, &human)?])
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub model: RewardModel<f64>,
    pub log: Vec<EpochLog>,
    /// Learned metric first, then the baselines.
    pub reports: Vec<EvalReport>,
    pub train_pairs: usize,
    pub test_records: usize,
}

impl ExperimentOutcome {
    pub fn learned(&self) -> &EvalReport {
        &self.reports[0]
    }

    pub fn report(&self, name: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.metric_name == name)
    }
}

pub fn run_prepared(prepared: &Prepared, arch: Arch, train: &TrainConfig) -> Result<ExperimentOutcome> {
    let (model, log) = train_model(prepared, arch, train)?;
    let learned = evaluate_model(
        "learned",
        &model,
        &prepared.featurizer,
        &prepared.system,
        &prepared.test_records,
        Some(&prepared.train_records),
    )?;
    let mut reports = vec![learned];
    reports.extend(baseline_reports(&prepared.test_records)?);
    Ok(ExperimentOutcome {
        model,
        log,
        reports,
        train_pairs: prepared.pairs.len(),
        test_records: prepared.test_records.len(),
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let prepared = prepare(config)?;
    run_prepared(&prepared, config.arch, &config.train)
}

/// One trained cell of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub report: EvalReport,
}

pub fn ablate_lambda(config: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<AblationCell>> {
    let prepared = prepare(config)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let mut train = config.train.clone();
            train.loss.lambda = lambda;
            let out = run_prepared(&prepared, config.arch, &train)?;
            Ok(AblationCell { label: format!("lambda={lambda}"), report: out.reports[0].clone() })
        })
        .collect()
}

pub fn terms_label(t: LossTerms) -> &'static str {
    match t {
        LossTerms::TotalOnly => "total_only",
        LossTerms::IndividualOnly => "individual_only",
        LossTerms::Both => "both",
    }
}

pub fn ablate_terms(config: &ExperimentConfig, grid: &[LossTerms]) -> Result<Vec<AblationCell>> {
    let prepared = prepare(config)?;
    grid.iter()
        .map(|&terms| {
            let mut train = config.train.clone();
            train.loss.terms = terms;
            let out = run_prepared(&prepared, config.arch, &train)?;
            Ok(AblationCell { label: terms_label(terms).to_string(), report: out.reports[0].clone() })
        })
        .collect()
}

/// Renders ablation cells as one table whose columns are the cells.
pub fn render_ablation(cells: &[AblationCell], csv: bool) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    if csv {
        out.push_str("setting,kendall_tau,kendall_p,spearman_rho,spearman_p,n\n");
        for c in cells {
            let r = &c.report;
            let _ = writeln!(out, "{},{:?},{:?},{:?},{:?},{}", c.label, r.kendall_tau, r.kendall_p, r.spearman_rho, r.spearman_p, r.n);
        }
        return out;
    }
    let width = cells.iter().map(|c| c.label.len()).max().unwrap_or(0).max(8);
    let _ = write!(out, "{:<8}", "");
    for c in cells {
        let _ = write!(out, "  {:>width$}", c.label);
    }
    out.push('\n');
    for (name, get) in [
        ("tau", (|r: &EvalReport| r.kendall_tau) as fn(&EvalReport) -> f64),
        ("rho", |r: &EvalReport| r.spearman_rho),
    ] {
        let _ = write!(out, "{name:<8}");
        for c in cells {
            let _ = write!(out, "  {:>width$.4}", get(&c.report));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            references: 12,
            held_out: 4,
            features: FeatureSpec::hashed(256, &[1, 2], &[3]).unwrap(),
            ..Default::default()
        }
    }

    #[test]
    fn split_keeps_references_apart() {
        let p = prepare(&small()).unwrap();
        assert_eq!(p.test_records.len(), 12);
        assert_eq!(p.train_records.len(), 24);
        for t in &p.test_records {
            assert!(p.train_records.iter().all(|r| r.reference_id() != t.reference_id()));
        }
        assert!(p.pair_lines.iter().all(|l| l.normalized && l.total_margin > 0.0));
    }

    #[test]
    fn experiment_is_deterministic() {
        let a = run_experiment(&small()).unwrap();
        let b = run_experiment(&small()).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.reports.len(), 3);
        assert!(a.report("bleu4").is_some());
    }

    #[test]
    fn weighted_system_reports_accuracy() {
        let cfg = ExperimentConfig { system: "mrscore7".into(), ..small() };
        let out = run_experiment(&cfg).unwrap();
        let acc = out
            .learned()
            .per_criterion
            .iter()
            .filter(|c| matches!(c, CriterionStat::Accuracy { .. }))
            .count();
        assert_eq!(acc, 7);
    }

    #[test]
    fn bad_split_is_rejected() {
        let cfg = ExperimentConfig { held_out: 12, ..small() };
        assert!(matches!(prepare(&cfg), Err(Error::Validation { .. })));
    }

    #[test]
    fn config_parses_partial_toml() {
        let c = ExperimentConfig::from_toml("references = 30\n[train]\nepochs = 2\n[train.loss]\nlambda = 2.0\n").unwrap();
        assert_eq!(c.references, 30);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.loss.lambda, 2.0);
        assert_eq!(c.train.batch_size, 6);
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn ablation_table_has_a_column_per_cell() {
        let cells = ablate_lambda(&ExperimentConfig { train: TrainConfig { epochs: 1, ..Default::default() }, ..small() }, &LAMBDA_GRID).unwrap();
        assert_eq!(cells.len(), 6);
        let t = render_ablation(&cells, false);
        assert!(t.lines().next().unwrap().contains("lambda=0.5"));
        assert_eq!(render_ablation(&cells, true).lines().count(), 7);
    }
}
