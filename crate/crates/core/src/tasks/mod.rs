//! Fine-tuning heads, evaluation metrics, retrieval, and the screening pipeline.

pub mod data;
mod finetune;
mod metrics;
mod screen;

use thiserror::Error;

pub use data::{classify_generate, retrieval_generate, ClassifySpec, Labeled, RetrievalData, RetrievalSpec};
pub use finetune::{
    affinity_finetune, classify_finetune, classify_null_control, embed, evaluate_affinity, evaluate_classify,
    evaluate_retrieval, predict_affinity, predict_proba, retrieval_finetune, score_matrix, sigmoid, split_indices,
    AffinityReport, ClassifyReport, NullControl, RetrievalConfig, RetrievalReport, Schedule,
};
pub use metrics::{
    auc_roc, enrichment_factor, fraction_key, infonce_loss, ranking, regression_metrics, roc_enrichment,
    screening_metrics, RegressionMetrics, ScreeningMetrics, EF_FRACTIONS, RE_FRACTIONS,
};
pub use screen::{coarse_stage, max_min_diverse, pipeline_screen, ScreenCandidate};

use crate::model::ModelError;
use crate::molgraph::GraphError;
use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid metric input: {0}")]
    Metric(String),
    #[error("both classes must be present")]
    SingleClass,
    #[error("no binders in the pool")]
    NoBinders,
    #[error("predictions are constant; R and SD are undefined")]
    ConstantPredictions,
    #[error("temperature must be positive")]
    ZeroTemperature,
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("invalid task config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
