//! Classification metrics: confusion matrices, precision/recall/F1 with
//! micro, macro and weighted averaging, ROC curves and AUC, per-evaluation
//! reports and cross-validation summaries.

mod confusion;
mod prf;
mod report;
mod roc;
mod summary;

pub use confusion::{confusion, ConfusionMatrix};
pub use prf::{aggregate, mean, prf1, tally, weighted_mean, Average, Prf, Score, Tally};
pub use report::{argmax, Aggregates, Headline, MetricsReport, PerClass, ReportFlags, Triple};
pub use roc::{multiclass_auc, roc_auc, MulticlassAuc, RocCurve};
pub use summary::{combine_confusion, mean_sd, summarize, CvSummary, SummaryMetric, SummaryRow};
