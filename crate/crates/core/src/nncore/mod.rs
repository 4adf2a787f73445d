//! Minimal deterministic training core: tensors, layers with hand-written
//! gradients, and a mask-aware SGD optimizer.

pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use layers::{Layer, LayerSpec, Param, ParamKind};
pub use model::ModelGraph;
pub use optim::{sgd_step, FreezeMask, OptimizerConfig, OptimizerState, StepDrop};
pub use tensor::{argmax_positions, class_layout, positions_per_sample, Scalar, Tensor};
pub use train::{position_accuracy, predict, predict_classes, train_epochs, Dataset};
