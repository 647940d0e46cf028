//! Neural-network controllers.
//!
//! A network maps the inventory state to real outputs; the floor of their positive part
//! is the order. Training unrolls the dynamics for a minibatch of demand paths on a
//! reverse-mode tape and backpropagates the average cost through every period. The floor
//! has zero derivative almost everywhere, so its backward pass uses the derivative of the
//! positive part alone (a straight-through estimator).

mod network;
mod rmsprop;
pub mod tape;
mod train;

pub use network::{Features, Layer, LayerActivation, Network, DEFAULT_HIDDEN, FORMAT_VERSION};
pub use rmsprop::{rmsprop_step, OptimizerState};
pub use tape::{celu, Activation, Tape, Var};
pub use train::{
    empirical_network, sample_paths, train, train_empirical, train_on_paths, unroll, EmpiricalOutcome,
    EmpiricalSchedule, LrStage, TrainOutcome, TrainingConfig, Unrolled,
};
