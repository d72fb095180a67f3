//! Network assembly, ablation variants, size accounting, self-ensemble
//! inference, checkpoints and feature-map dumps.

mod checkpoint;
mod config;
mod count;
mod ensemble;
mod inspect;
mod layers;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{FuseMode, ModelConfig, ResidualPosition, LN_EPS};
pub use count::{count_flops, count_params, flops_breakdown, param_breakdown};
pub use ensemble::{self_ensemble, self_ensemble_infer, Dihedral};
pub use inspect::{dump_feature_maps, feature_grid, grid_layout, FeatureGrid};
pub use layers::{block_layers, check_params, init_params, layer_table, LayerKind, LayerSpec};
pub use network::{
    cab_forward, esa_forward, esa_geometry, forward, forward_features, hasb_forward, infer, ESA_MIN_SIDE,
    ESA_POOL, ESA_POOL_STRIDE,
};
