//! Material masked autoencoder: patchification, random masking, a ViT
//! encoder with a `[cls]` token, a light decoder and masked-only MSE
//! pre-training.

mod checkpoint;
mod config;
mod loss;
mod model;
mod patch;
mod reconstruct;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{visible_count, MmaeConfig};
pub use loss::{masked_mse, masked_mse_value, normalize_patches};
pub use model::{encoder_block_prefix, Mmae, INIT_SCHEME, INIT_STD};
pub use patch::{
    patch_pixel_index, patchify, sample_mask, sincos_pos_embed, unpatchify, unpatchify_values, MaskPlan,
};
pub use reconstruct::{reconstruct, Triptych, MASK_GRAY};
pub use train::{
    eval_plans, evaluate_masked_mse, load_tokens, mean_pixel, mean_pixel_baseline, per_image_masked_mse, predict,
    pretrain, pretrain_tokens, write_curve_csv, CurvePoint, PretrainConfig, PretrainOutput,
};

pub(crate) use model::{linear, Linear};
