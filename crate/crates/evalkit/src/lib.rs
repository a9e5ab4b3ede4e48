//! Attack-quality and impersonation metrics for embedding inversion runs:
//! structural dissimilarity, perceptual distance, closed-set identification,
//! verification TAR@FAR, multi-reconstruction ensembles, and report emission.

pub mod dssim;
pub mod ensemble;
pub mod error;
pub mod identify;
pub mod perceptual;
pub mod plot;
pub mod report;
pub mod scores;
pub mod verify;

pub use dssim::{dssim, dssim_pixels, ssim, ssim_pixels, SsimParams};
pub use ensemble::{ensemble_attack, EnsembleOutcome};
pub use error::EvalError;
pub use identify::{identification_accuracy, CentroidHead, IdentificationOutcome};
pub use perceptual::perceptual_distance;
pub use report::{emit_report, median, quantile, EvaluationReport, MetricSummary};
pub use scores::{similarity, tar_at_far, Similarity, VerificationResult, VerifyMode};
pub use verify::{verify_reconstructions, VerifyOptions, VerifyOutcome};
