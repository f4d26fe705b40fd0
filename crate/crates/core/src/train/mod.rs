//! MLP training with quantized activation storage.

mod backprop;
mod network;
mod schedule;
mod trainer;

pub use backprop::{
    accuracy_pct, argmax_rows, backward, compute_gradients, forward, infer, output_delta, sgd_step,
    store_activations, ActivationStorage, ActivationStore, ForwardPass, Gradients, LayerCache,
};
pub(crate) use backprop::{column_sums, linear, mask_in_place, relu, softmax_cross_entropy};
pub use network::{Layer, MlpNetwork};
pub use schedule::{AnnealSchedule, Phase};
pub use trainer::{evaluate, train, TrainConfig, TrainRun};
