//! The reference network: declarative spec, parameters, forward/backward, checkpoints.

mod checkpoint;
mod network;
mod spec;

pub use checkpoint::{load_checkpoint, load_checkpoint_for_spec, save_checkpoint, CHECKPOINT_KIND};
pub use network::{
    argmax_rows, beta_key, bias_key, bn_site, gamma_key, param_shapes, weight_key, ForwardCaches, Model, ParamMap,
    HEAD_INIT_STD,
};
pub use spec::{ActShape, LayerSpec, ModelSpec, ShapeTrace};
