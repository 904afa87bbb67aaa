//! Small dense models, their analytic gradients, SGD and evaluation.

mod batch;
mod model;
mod rng;

pub use batch::LabeledBatch;
pub use model::{
    evaluate, train_local, train_regularized, AttributeConfusion, EvalReport, GroupCounts,
    LayerShape, ModelKind, ModelParams, SgdConfig, MLP_HIDDEN_UNITS,
};
pub use rng::RngStream;
