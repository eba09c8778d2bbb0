use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{visible_count, MmaeConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::microgen::RasterImage;

/// `index[t * p² + j]` is the flat pixel index of element `j` of patch `t`,
/// patches ordered row-major over the grid and pixels row-major inside.
pub fn patch_pixel_index(image_size: usize, patch_size: usize) -> Vec<usize> {
    let g = image_size / patch_size;
    let mut idx = Vec::with_capacity(image_size * image_size);
    for gr in 0..g {
        for gc in 0..g {
            for r in 0..patch_size {
                for c in 0..patch_size {
                    idx.push((gr * patch_size + r) * image_size + gc * patch_size + c);
                }
            }
        }
    }
    idx
}

fn check_image(img: &RasterImage, cfg: &MmaeConfig) -> Result<()> {
    if img.height != cfg.image_size || img.width != cfg.image_size {
        return Err(Error::shape(
            "patchify",
            format!(
                "image is {}×{}, model expects {}²",
                img.height, img.width, cfg.image_size
            ),
        ));
    }
    if cfg.patch_size == 0 || cfg.image_size % cfg.patch_size != 0 {
        return Err(Error::shape(
            "patchify",
            format!("patch {} does not tile {}", cfg.patch_size, cfg.image_size),
        ));
    }
    Ok(())
}

/// `[n_patches, patch_size²]` token matrix with pixels scaled to `[0, 1]`.
pub fn patchify(img: &RasterImage, cfg: &MmaeConfig) -> Result<Tensor> {
    check_image(img, cfg)?;
    let idx = patch_pixel_index(cfg.image_size, cfg.patch_size);
    let data = idx.iter().map(|&i| img.pixels[i] as f64 / 255.0).collect();
    Tensor::new(vec![cfg.n_patches(), cfg.patch_dim()], data)
}

/// Scatters tokens back to a row-major pixel grid of values in `[0, 1]`.
pub fn unpatchify_values(tokens: &Tensor, cfg: &MmaeConfig) -> Result<Vec<f64>> {
    if tokens.shape() != [cfg.n_patches(), cfg.patch_dim()] {
        return Err(Error::shape(
            "unpatchify",
            format!(
                "{:?} tokens for {} patches of {}",
                tokens.shape(),
                cfg.n_patches(),
                cfg.patch_dim()
            ),
        ));
    }
    let idx = patch_pixel_index(cfg.image_size, cfg.patch_size);
    let mut out = vec![0.0; idx.len()];
    for (&i, &v) in idx.iter().zip(tokens.data()) {
        out[i] = v;
    }
    Ok(out)
}

/// Inverse of [`patchify`]; values are clamped to `[0, 1]` and rounded to 8 bits.
pub fn unpatchify(tokens: &Tensor, cfg: &MmaeConfig) -> Result<RasterImage> {
    let values = unpatchify_values(tokens, cfg)?;
    RasterImage::new(cfg.image_size, cfg.image_size, to_gray(&values))
}

pub(crate) fn to_gray(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Which patches the encoder sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub n_patches: usize,
    /// Sorted ascending.
    pub visible: Vec<usize>,
    /// Sorted ascending; the complement of `visible`.
    pub masked: Vec<usize>,
    pub seed: u64,
}

impl MaskPlan {
    /// Every patch visible, as used for transfer and saliency.
    pub fn all_visible(n_patches: usize) -> Self {
        Self {
            n_patches,
            visible: (0..n_patches).collect(),
            masked: Vec::new(),
            seed: 0,
        }
    }

    pub fn is_masked(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_patches];
        self.masked.iter().for_each(|&i| m[i] = true);
        m
    }
}

/// Uniformly random subset of `floor((1 − ratio) · n)` visible patches.
pub fn sample_mask(n_patches: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::invalid(format!("mask ratio {mask_ratio} outside (0, 1)")));
    }
    let v = visible_count(n_patches, mask_ratio);
    if v == 0 || v >= n_patches {
        return Err(Error::invalid(format!(
            "mask ratio {mask_ratio} leaves {v} of {n_patches} patches visible"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visible = index::sample(&mut rng, n_patches, v).into_vec();
    visible.sort_unstable();
    let mut is_vis = vec![false; n_patches];
    visible.iter().for_each(|&i| is_vis[i] = true);
    let masked = (0..n_patches).filter(|&i| !is_vis[i]).collect();
    Ok(MaskPlan {
        n_patches,
        visible,
        masked,
        seed,
    })
}

/// Fixed 2-D sine-cosine embedding: `[grid², dim]`, first half encoding the
/// patch row and second half the column.
pub fn sincos_pos_embed(grid: usize, dim: usize) -> Tensor {
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|i| 1.0 / 10000f64.powf(i as f64 / quarter as f64))
        .collect();
    let mut data = Vec::with_capacity(grid * grid * dim);
    for r in 0..grid {
        for c in 0..grid {
            for pos in [r as f64, c as f64] {
                data.extend(omega.iter().map(|w| (pos * w).sin()));
                data.extend(omega.iter().map(|w| (pos * w).cos()));
            }
        }
    }
    Tensor::new(vec![grid * grid, dim], data).expect("dim is a multiple of 4")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(n: usize) -> RasterImage {
        RasterImage::new(n, n, (0..n * n).map(|i| (i * 7 % 256) as u8).collect()).unwrap()
    }

    #[test]
    fn paper_geometry() {
        let cfg = MmaeConfig::paper();
        let t = patchify(&ramp(224), &cfg).unwrap();
        assert_eq!(t.shape(), [196, 256]);
        let plan = sample_mask(196, 0.85, 1).unwrap();
        assert_eq!((plan.visible.len(), plan.masked.len()), (29, 167));
    }

    #[test]
    fn constant_image_tokens() {
        let cfg = MmaeConfig::desk();
        let t = patchify(&RasterImage::filled(64, 64, 51), &cfg).unwrap();
        assert!(t.data().iter().all(|&v| v == 51.0 / 255.0));
    }

    #[test]
    fn first_patch_is_top_left_block() {
        let cfg = MmaeConfig { image_size: 16, patch_size: 4, ..MmaeConfig::desk() };
        let img = ramp(16);
        let t = patchify(&img, &cfg).unwrap();
        assert_eq!(t.row(0)[4], img.get(1, 0) as f64 / 255.0);
        assert_eq!(t.row(1)[0], img.get(0, 4) as f64 / 255.0);
        assert_eq!(t.row(4)[0], img.get(4, 0) as f64 / 255.0);
    }

    #[test]
    fn size_mismatch_rejected() {
        assert!(patchify(&ramp(32), &MmaeConfig::desk()).is_err());
    }

    #[test]
    fn desk_mask_counts() {
        assert_eq!(sample_mask(64, 0.75, 3).unwrap().visible.len(), 16);
        assert!(sample_mask(64, 0.999, 3).is_err());
        assert!(sample_mask(64, 1.0, 3).is_err());
    }

    #[test]
    fn masked_frequency_is_uniform() {
        let (n, draws) = (64, 10_000);
        let mut counts = vec![0usize; n];
        for s in 0..draws {
            for &i in &sample_mask(n, 0.75, s as u64).unwrap().masked {
                counts[i] += 1;
            }
        }
        let sigma = (0.75f64 * 0.25 / draws as f64).sqrt();
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.75).abs() <= 4.0 * sigma, "{f}");
        }
    }

    #[test]
    fn pos_embed_rows_distinct() {
        let pe = sincos_pos_embed(8, 64);
        assert_eq!(pe.shape(), [64, 64]);
        for a in 0..64 {
            for b in a + 1..64 {
                assert!(pe.row(a) != pe.row(b));
            }
        }
        // Row 0 is position (0, 0): sines vanish and cosines are one.
        assert!(pe.row(0)[..16].iter().all(|&v| v == 0.0));
        assert!(pe.row(0)[16..32].iter().all(|&v| v == 1.0));
    }

    proptest! {
        #[test]
        fn unpatchify_inverts_patchify(pixels in proptest::collection::vec(any::<u8>(), 256)) {
            let cfg = MmaeConfig { image_size: 16, patch_size: 4, ..MmaeConfig::desk() };
            let img = RasterImage::new(16, 16, pixels).unwrap();
            let back = unpatchify(&patchify(&img, &cfg).unwrap(), &cfg).unwrap();
            prop_assert_eq!(back.pixels, img.pixels);
        }

        #[test]
        fn mask_partitions_patches(n in 2usize..300, ratio in 0.01f64..0.99, seed in any::<u64>()) {
            if let Ok(plan) = sample_mask(n, ratio, seed) {
                prop_assert_eq!(plan.visible.len(), visible_count(n, ratio));
                let mut all: Vec<usize> = plan.visible.iter().chain(&plan.masked).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert!(plan.visible.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
