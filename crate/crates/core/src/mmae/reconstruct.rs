use std::path::Path;

use super::checkpoint::Checkpoint;
use super::loss::row_stats;
use super::patch::{patchify, sample_mask, to_gray, unpatchify_values};
use super::train::predict;
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::microgen::RasterImage;

/// Gray level painted over masked patches in the masked view.
pub const MASK_GRAY: u8 = 128;
const GAP: usize = 4;

/// Ground truth, masked input and reconstruction of one image.
#[derive(Debug, Clone)]
pub struct Triptych {
    pub original: RasterImage,
    pub masked: RasterImage,
    /// Model output at masked patches, original pixels elsewhere.
    pub reconstruction: RasterImage,
    /// Model output at every patch.
    pub raw: RasterImage,
    pub masked_patches: Vec<usize>,
}

impl Triptych {
    /// The three panels side by side, separated by white gutters.
    pub fn to_image(&self) -> RasterImage {
        let (h, w) = (self.original.height, self.original.width);
        let total = 3 * w + 2 * GAP;
        let mut px = vec![255u8; h * total];
        for (k, img) in [&self.original, &self.masked, &self.reconstruction].into_iter().enumerate() {
            for r in 0..h {
                let dst = r * total + k * (w + GAP);
                px[dst..dst + w].copy_from_slice(&img.pixels[r * w..(r + 1) * w]);
            }
        }
        RasterImage::new(h, total, px).expect("sizes match")
    }

    /// Writes `<stem>_triptych.png` and `<stem>_raw.png` into `dir`.
    pub fn write_png(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.to_image().write_png(&dir.join(format!("{stem}_triptych.png")))?;
        self.raw.write_png(&dir.join(format!("{stem}_raw.png")))
    }
}

/// Masks `image` with a seeded plan and reconstructs it with the checkpoint.
pub fn reconstruct(ckpt: &Checkpoint, image: &RasterImage, mask_ratio: f64, seed: u64) -> Result<Triptych> {
    let cfg = *ckpt.config();
    let tokens = patchify(image, &cfg)?;
    let plan = sample_mask(cfg.n_patches(), mask_ratio, seed)?;
    let mut pred = predict(&ckpt.model, std::slice::from_ref(&tokens), std::slice::from_ref(&plan), 1)?.remove(0);
    if cfg.normalize_targets {
        let c = pred.cols();
        let stats: Vec<(f64, f64)> = (0..tokens.rows()).map(|r| row_stats(tokens.row(r))).collect();
        for (row, (mean, std)) in pred.data_mut().chunks_mut(c).zip(stats) {
            row.iter_mut().for_each(|v| *v = *v * std + mean);
        }
    }
    let is_masked = plan.is_masked();
    let c = tokens.cols();
    let compose = |fill: &dyn Fn(usize, usize) -> f64| {
        Tensor::from_fn(tokens.shape(), |i| {
            let (r, j) = (i / c, i % c);
            if is_masked[r] {
                fill(r, j)
            } else {
                tokens.data()[i]
            }
        })
    };
    let gray = MASK_GRAY as f64 / 255.0;
    let masked_view = compose(&|_, _| gray);
    let recon = compose(&|r, j| pred.data()[r * c + j]);
    let img = |t: &Tensor| -> Result<RasterImage> {
        RasterImage::new(cfg.image_size, cfg.image_size, to_gray(&unpatchify_values(t, &cfg)?))
    };
    Ok(Triptych {
        original: image.clone(),
        masked: img(&masked_view)?,
        reconstruction: img(&recon)?,
        raw: img(&pred)?,
        masked_patches: plan.masked,
    })
}
