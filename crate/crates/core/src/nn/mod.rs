//! Small NHWC neural-network toolkit on top of candle.

mod im2col;
mod layers;
mod lora;
mod params;
mod train;

pub use im2col::{im2col, PatchGeometry};
pub use layers::{
    avg_pool2, cross_entropy, global_mean, leaky_relu, leaky_relu_grad, silu, upsample2, Conv2d, Dense, GroupNorm,
};
pub use lora::LoraAdapter;
pub use params::{Init, ParamStore, Scope};
pub use train::{adamw, images_to_tensor, tensor_to_vec, OptimizerConfig};
