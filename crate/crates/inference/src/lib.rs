//! Model attribution from observed embeddings: auxiliary classifiers that
//! name the source (model, layer) of an embedding, attribute predictors
//! that recover architecture/training characteristics, a length-based
//! classifier router, and a deterministic 2-D projection for cluster
//! plots.

mod attributes;
mod classifier;
mod error;
mod mlp;
mod project;
mod router;

pub use attributes::{
    train_attribute_predictor, AttributeAccuracy, AttributeAssignment, AttributePrediction,
    AttributePredictor, AttributeSchema, AttributeSpec,
};
pub use classifier::{
    train_auxiliary_classifier, AuxiliaryClassifier, AuxiliaryClassifierSpec, ClassLabel,
    Prediction, DEFAULT_HIDDEN_WIDTHS,
};
pub use error::InferError;
pub use mlp::{fit_mlp, mlp_specs, FitEpoch, FitReport, MlpTrainConfig};
pub use project::{project_2d, ProjectedPoint};
pub use router::ClassifierRouter;
