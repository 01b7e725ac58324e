//! Evaluation: rank statistics, per-criterion accuracy and baseline metrics.

pub mod accuracy;
pub mod labels;
pub mod report;
pub mod stats;
pub mod text_metrics;

pub use accuracy::{binarize, fit_thresholds, subscore_accuracy};
pub use labels::{apply_labels, parse_labels, read_labels, Labels};
pub use report::{add_criterion_correlations, evaluate_metric, render_csv, render_table, to_quality, CriterionStat, EvalReport};
pub use stats::{kendall_exact_p, kendall_tau, mid_ranks, spearman, spearman_exact_p, Correlation, MAX_EXACT_N};
pub use text_metrics::{bleu4, rouge_l};
