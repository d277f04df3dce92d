//! The multi-stream GNN: backbones, mapping construction, layer stack.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Backbone, McMode, ModelConfig, SinkhornCfg};
pub use model::{
    bind_params, model_forward, prepare_bundle, residual_product, ForwardOutput, GraphBundle,
    TapeBinding,
};
pub use params::{init_params, neutralize_mappings, ParamStore};
