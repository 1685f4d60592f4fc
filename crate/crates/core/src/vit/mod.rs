//! Vision Transformer encoder and projection head.

mod config;
mod model;
mod patch;

pub use config::ViTConfig;
pub use model::{
    encode, encode_batch, encode_view, init_encoder, init_params, init_projection_head, project, project_batch,
    ENCODER_PREFIX, HEAD_PREFIX,
};
pub(crate) use model::trunc_normal;
pub use patch::{bilinear_matrix, interpolate_pos_embed, patchify};
