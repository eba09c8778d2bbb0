//! Gradient saliency: absolute gradient of a component's squared prediction
//! error with respect to the input pixels, and color overlays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::microgen::{write_grid_csv, write_png, RasterImage};
use crate::mmae::{patch_pixel_index, Checkpoint, Mmae};
use crate::transfer::{Component, HeadSpec, TargetScaler};

/// A differentiable regressor over normalized pixels.
pub trait SaliencyModel {
    fn image_size(&self) -> usize;

    /// Standardized predictions `[1, 3]` for `pixels`, a `[size²]` row-major
    /// vector of values in `[0, 1]`.
    fn predict(&self, tape: &mut Tape, pixels: Var) -> Result<Var>;

    fn scaler(&self) -> TargetScaler;
}

/// Encoder plus regression head, all patches visible.
#[derive(Debug, Clone)]
pub struct EncoderRegressor {
    model: Mmae,
    spec: HeadSpec,
    index: Vec<usize>,
}

impl EncoderRegressor {
    pub fn new(model: &Mmae, spec: &HeadSpec, head: &ParamStore) -> Result<Self> {
        spec.check_params(head, model.embed_dim())?;
        let mut model = model.clone();
        for (_, p) in head.iter() {
            model.params.insert(p.name.clone(), p.value.clone());
        }
        // Parameters are inputs here, not variables.
        model.params.freeze_all();
        let cfg = model.config();
        Ok(Self {
            index: patch_pixel_index(cfg.image_size, cfg.patch_size),
            spec: spec.clone(),
            model,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let (spec, head) = ckpt
            .head
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no regression head".into()))?;
        Self::new(&ckpt.model, spec, head)
    }
}

impl SaliencyModel for EncoderRegressor {
    fn image_size(&self) -> usize {
        self.model.config().image_size
    }

    fn predict(&self, tape: &mut Tape, pixels: Var) -> Result<Var> {
        let cfg = *self.model.config();
        let n = cfg.n_patches();
        let tokens = tape.gather_elems(pixels, &self.index, &[n, cfg.patch_dim()])?;
        let positions: Vec<usize> = (0..n).collect();
        let z = self.model.encode_tokens(tape, tokens, &positions, 1)?;
        let cls = tape.gather_rows(z, &[0])?;
        self.spec.forward(tape, &self.model.params, cls)
    }

    fn scaler(&self) -> TargetScaler {
        self.spec.scaler
    }
}

/// Whether the squared error is taken on z-scored or GPa-valued targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TargetSpace {
    #[default]
    Standardized,
    Physical,
}

/// Non-negative per-pixel attribution with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub component: Component,
    pub target_space: TargetSpace,
    pub prediction_gpa: f64,
    pub label_gpa: f64,
    pub checkpoint_id: String,
    pub image_id: String,
}

impl SaliencyMap {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_grid_csv(path, self.width, &self.values)
    }
}

/// Signed gradient of the component's squared error with respect to the
/// normalized pixels, the prediction in GPa, and the loss.
pub fn loss_gradient(
    model: &dyn SaliencyModel,
    image: &RasterImage,
    component: Component,
    label_gpa: f64,
    space: TargetSpace,
) -> Result<(Vec<f64>, f64, f64)> {
    let n = model.image_size();
    if image.height != n || image.width != n {
        return Err(Error::shape("saliency", format!("image {}×{}, model expects {n}²", image.height, image.width)));
    }
    let c = component.index();
    let scaler = model.scaler();
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![n * n], image.normalized())?, true)?;
    let pred = model.predict(&mut tape, x)?;
    let yhat = tape.gather_elems(pred, &[c], &[1])?;
    let (yhat, target) = match space {
        TargetSpace::Standardized => (yhat, (label_gpa - scaler.mean[c]) / scaler.std[c]),
        TargetSpace::Physical => {
            let s = tape.scale(yhat, scaler.std[c])?;
            let mean = tape.constant(Tensor::new(vec![1], vec![scaler.mean[c]])?)?;
            (tape.add(s, mean)?, label_gpa)
        }
    };
    let y = tape.constant(Tensor::new(vec![1], vec![target])?)?;
    let d = tape.sub(yhat, y)?;
    let sq = tape.mul(d, d)?;
    let loss = tape.mean(sq)?;
    let z = tape.value(pred).data()[c];
    let prediction = z * scaler.std[c] + scaler.mean[c];
    let loss_value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let g = grads.get(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n * n]);
    Ok((g, prediction, loss_value))
}

/// `|∂ (ŷ_c − y_c)² / ∂X|` at the image, reshaped to the image grid.
pub fn saliency(
    model: &dyn SaliencyModel,
    image: &RasterImage,
    component: Component,
    label_gpa: f64,
    space: TargetSpace,
) -> Result<SaliencyMap> {
    let (g, prediction, _) = loss_gradient(model, image, component, label_gpa, space)?;
    Ok(SaliencyMap {
        height: image.height,
        width: image.width,
        values: g.iter().map(|v| v.abs()).collect(),
        component,
        target_space: space,
        prediction_gpa: prediction,
        label_gpa,
        checkpoint_id: String::new(),
        image_id: String::new(),
    })
}

/// 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, &self.data)
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

const COOL: [f64; 3] = [59.0, 76.0, 192.0];
const MID: [f64; 3] = [221.0, 221.0, 221.0];
const WARM: [f64; 3] = [180.0, 4.0, 38.0];
/// Opacity of the saliency colors over the grayscale image.
pub const OVERLAY_ALPHA: f64 = 0.5;

/// Cool-warm diverging ramp: blue at 0, light gray at 0.5, red at 1,
/// linear in RGB on each half.
pub fn cool_warm(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    let (a, b, s) = if t < 0.5 { (COOL, MID, 2.0 * t) } else { (MID, WARM, 2.0 * t - 1.0) };
    std::array::from_fn(|i| a[i] + (b[i] - a[i]) * s)
}

/// Min-max normalizes the map, colors it and blends it over the image.
/// A constant map renders at the ramp midpoint.
pub fn render_overlay(map: &SaliencyMap, image: &RasterImage) -> Result<RgbImage> {
    if map.height != image.height || map.width != image.width {
        return Err(Error::shape(
            "render_overlay",
            format!("map {}×{} over image {}×{}", map.height, map.width, image.height, image.width),
        ));
    }
    let lo = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut data = Vec::with_capacity(3 * map.values.len());
    for (&v, &p) in map.values.iter().zip(&image.pixels) {
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        let color = cool_warm(t);
        for ch in color {
            let mixed = OVERLAY_ALPHA * ch + (1.0 - OVERLAY_ALPHA) * p as f64;
            data.push(mixed.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RgbImage { height: image.height, width: image.width, data })
}
