use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Masked-autoencoder geometry and width/depth settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmaeConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub encoder_heads: usize,
    pub decoder_dim: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    /// Hidden width of each block's MLP as a multiple of its model width.
    pub mlp_ratio: usize,
    pub mask_ratio: f64,
    /// Reconstruct per-patch standardized pixels instead of raw ones.
    pub normalize_targets: bool,
}

impl Default for MmaeConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl MmaeConfig {
    /// 64² images in 8-pixel patches; trains in minutes on one core.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            embed_dim: 64,
            encoder_depth: 4,
            encoder_heads: 4,
            decoder_dim: 48,
            decoder_depth: 2,
            decoder_heads: 4,
            mlp_ratio: 4,
            mask_ratio: 0.85,
            normalize_targets: false,
        }
    }

    /// ViT-Base sized encoder over 224² images in 16-pixel patches.
    pub fn paper() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            embed_dim: 768,
            encoder_depth: 12,
            encoder_heads: 12,
            decoder_dim: 512,
            decoder_depth: 8,
            decoder_heads: 16,
            mlp_ratio: 4,
            mask_ratio: 0.85,
            normalize_targets: false,
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn visible_count(&self) -> usize {
        visible_count(self.n_patches(), self.mask_ratio)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image size {} is not a multiple of patch size {}",
                self.image_size, self.patch_size
            ));
        }
        for (name, dim, heads) in [
            ("embed_dim", self.embed_dim, self.encoder_heads),
            ("decoder_dim", self.decoder_dim, self.decoder_heads),
        ] {
            if dim == 0 || dim % 4 != 0 {
                return bad(format!("{name} = {dim} must be a positive multiple of 4"));
            }
            if heads == 0 || dim % heads != 0 {
                return bad(format!("{name} = {dim} is not divisible into {heads} heads"));
            }
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        let v = self.visible_count();
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) || v == 0 || v == self.n_patches() {
            return bad(format!(
                "mask ratio {} leaves {v} of {} patches visible",
                self.mask_ratio,
                self.n_patches()
            ));
        }
        Ok(())
    }
}

/// `floor((1 − ratio) · n)`.
pub fn visible_count(n_patches: usize, mask_ratio: f64) -> usize {
    // The small offset stops products that are whole numbers in exact
    // arithmetic from flooring one short after rounding.
    ((1.0 - mask_ratio) * n_patches as f64 + 1e-9).floor() as usize
}
