//! Automatic quality analysis of generated and human utterance banks.

mod answerability;
mod bleu;
mod density;
mod report;
mod similarity;
mod stats;
mod tokenize;

pub use answerability::{answerability, OverlapScorer, QaScorer, RemoteQaScorer};
pub use bleu::{bleu, self_bleu, BLEU_EPSILON};
pub use density::{export_density, kde_grid, silverman_bandwidth, DensityGrid, GRID_POINTS};
pub use report::{build_quality_report, NodeSimilarity, QualityReport, TestResult};
pub use similarity::cross_similarity;
pub use stats::{student_t_two_sided_p, t_test, TTest, TTestVariant};
pub use tokenize::{content_tokens, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("candidate has no tokens")]
    EmptyCandidate,
    #[error("reference set is empty")]
    EmptyReferences,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("corpus needs at least {needed} items, got {got}")]
    CorpusTooSmall { needed: usize, got: usize },
    #[error("no node appears in both banks")]
    NoOverlappingNodes,
    #[error("sample needs at least 2 values, got {0}")]
    SampleTooSmall(usize),
    #[error("degenerate variance: both samples are constant")]
    DegenerateVariance,
    #[error(transparent)]
    Encode(#[from] crate::encoding::EncodeError),
    #[error("QA scorer failed: {0}")]
    Scorer(String),
    #[error("write failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
