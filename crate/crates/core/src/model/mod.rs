pub mod adam;
pub mod checkpoint;
pub mod head;
pub mod params;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState, WeightDecayMode};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use head::{backward, forward_eval, forward_train, mse_loss, Batch, ForwardCache};
pub use params::{init_params, init_params_with_hidden, FusionHeadParams, Gradients, Tensor};
pub use train::{predict, train_model, TrainConfig, TrainHistory, TrainedModel};
