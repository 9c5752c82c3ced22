//! Evaluation protocols: cross-modal retrieval, zero-shot and few-shot
//! multi-label classification, and paired AUC significance testing.
//!
//! Every ranking breaks ties by ascending index, so metrics are
//! bit-reproducible.

mod metrics;
mod probe;
mod report;
mod retrieval;
mod stratify;
mod zeroshot;

pub use metrics::{
    auc, delong_covariance, delong_test, macro_metrics, normal_cdf, pr_auc, LabelMetric,
    MacroMetrics, StatTestResult,
};
pub use probe::{probe_loss, train_linear_probe, ClassifierHead, ProbeConfig, ProbeFit};
pub use report::{MetricReport, MetricRow};
pub use retrieval::{match_by_ids, match_ranks, recall_at, topk_recall, Direction, RetrievalResult};
pub use stratify::iterative_stratified_sample;
pub use zeroshot::{prompt_pair, zero_shot_from_prompts, zero_shot_scores};

use crate::tensor::Tensor;

/// Copy of `t` with every row scaled to unit length (zero rows stay zero).
pub fn unit_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    if let Some(&d) = t.shape().get(1) {
        if d > 0 {
            for row in out.data_mut().chunks_mut(d) {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|x| *x /= norm);
                }
            }
        }
    }
    out
}
