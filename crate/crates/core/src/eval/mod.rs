//! Fine-tuning, metrics, bootstrap intervals and paired statistics.

mod ablation;
mod finetune;
mod metrics;
mod report;
mod stats;

pub use ablation::{ablation_csv, fraction_ablation, stratified_subsets, ABLATION_HEADER};
pub use finetune::{evaluate, finetune, init_classifier, FinetuneOutcome, CLASSIFIER_PREFIX};
pub use metrics::{
    argmax, auroc_binary, auroc_macro_ovr, auroc_per_class, bootstrap_ci, label_smooth, quantile_sorted, resamples,
    sens_spec_from_predictions, sens_spec_macro, BootstrapCi,
};
pub use report::{read_reports, reports_csv, EvalReport, ReportRow, REPORT_HEADER};
pub use stats::{cohens_d, compare, paired_t_test, radar_normalize, PairedComparison, COMPARISON_HEADER};
