//! Retrieval, correlation, overlap and decoding measurements.

mod correlation;
mod decoding;
mod loo;
mod metrics;
mod report;

pub use correlation::{aspect_correlation_matrix, CorrelationMatrix, SimilarityAssessment, SimilarityTable};
pub use decoding::{
    decoding_control_report, derangement, AspectPerplexity, DecodingControlReport, DecodingDoc, DecodingMode,
};
pub use loo::{leave_one_out_reconstruction, LooConfig, LooOutcome};
pub use metrics::{binary_label_similarity, mean_rank, mrr, retrieval_ranks, spearman, top_k_overlap};
pub use report::{config_hash, EvalReport};
