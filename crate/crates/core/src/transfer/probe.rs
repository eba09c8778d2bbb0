use serde::{Deserialize, Serialize};

use super::data::{r2_score, LabeledSet, TargetScaler, R2};
use super::head::{HeadKind, HeadSpec};
use super::report::ExperimentReport;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::mmae::{Checkpoint, Mmae};

/// Full-batch gradient descent settings for the linear probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearProbeConfig {
    /// L2 penalty on the standardized-feature weights.
    pub ridge: f64,
    pub max_iterations: usize,
    /// Stop once the Frobenius norm of the gradient falls below this.
    pub tolerance: f64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        Self { ridge: 1e-3, max_iterations: 200_000, tolerance: 1e-10 }
    }
}

/// `[cls]` embeddings for every token matrix, all patches visible.
pub fn extract_features(model: &Mmae, tokens: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(tokens.len());
    for chunk in tokens.chunks(32) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        out.extend(model.cls_embeddings(&refs)?);
    }
    Ok(out)
}

/// `[cls]` embedding of one image from the checkpoint's encoder.
pub fn extract_cls(ckpt: &Checkpoint, image: &crate::microgen::RasterImage) -> Result<Vec<f64>> {
    ckpt.model.cls_embedding(&crate::mmae::patchify(image, ckpt.config())?)
}

/// Column means and standard deviations (unit where a column is constant).
pub(crate) fn feature_stats(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for row in x {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
    }
    let mut std = vec![0.0; d];
    for row in x {
        for j in 0..d {
            std[j] += (row[j] - mean[j]).powi(2) / n;
        }
    }
    for s in &mut std {
        *s = if *s > 1e-20 { s.sqrt() } else { 1.0 };
    }
    (mean, std)
}

/// Linear weights fitted to standardized features and targets.
#[derive(Debug, Clone)]
pub struct LinearFit {
    /// `[d][3]` weights on standardized features.
    pub weights: Vec<[f64; 3]>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub scaler: TargetScaler,
    pub iterations: usize,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> [f64; 3] {
        let mut z = [0.0; 3];
        for (j, w) in self.weights.iter().enumerate() {
            let f = (x[j] - self.feature_mean[j]) / self.feature_std[j];
            for c in 0..3 {
                z[c] += f * w[c];
            }
        }
        self.scaler.inverse(&z)
    }

    /// The fit as a linear head acting on raw embeddings.
    pub fn to_head(&self) -> Result<(HeadSpec, ParamStore)> {
        let d = self.weights.len();
        let mut w = vec![0.0; d * 3];
        let mut b = vec![0.0; 3];
        for j in 0..d {
            for c in 0..3 {
                w[j * 3 + c] = self.weights[j][c] / self.feature_std[j];
                b[c] -= self.feature_mean[j] * w[j * 3 + c];
            }
        }
        let spec = HeadSpec { kind: HeadKind::Linear, hidden: 0, scaler: self.scaler };
        let mut store = ParamStore::new();
        store.insert("head.out.weight", Tensor::new(vec![d, 3], w)?);
        store.insert("head.out.bias", Tensor::new(vec![3], b)?);
        Ok((spec, store))
    }
}

/// Minimizes `mean‖Zw − y‖² + ridge‖w‖²` over standardized features `Z` and
/// targets `y` by Nesterov-accelerated full-batch gradient descent on the
/// Gram matrix.
pub fn fit_linear(features: &[Vec<f64>], targets: &[[f64; 3]], cfg: &LinearProbeConfig) -> Result<LinearFit> {
    if features.len() != targets.len() || features.len() < 2 {
        return Err(Error::invalid("linear probe needs at least 2 paired samples"));
    }
    if !(cfg.ridge > 0.0) {
        return Err(Error::Config("linear probe ridge must be positive".into()));
    }
    let scaler = TargetScaler::fit(targets)?;
    let (fm, fs) = feature_stats(features);
    let d = fm.len();
    let n = features.len() as f64;
    let mut gram = vec![0.0; d * d];
    let mut cross = vec![[0.0; 3]; d];
    let mut z = vec![0.0; d];
    for (row, t) in features.iter().zip(targets) {
        for j in 0..d {
            z[j] = (row[j] - fm[j]) / fs[j];
        }
        let y = scaler.transform(t);
        for i in 0..d {
            for j in 0..d {
                gram[i * d + j] += z[i] * z[j] / n;
            }
            for c in 0..3 {
                cross[i][c] += z[i] * y[c] / n;
            }
        }
    }
    for i in 0..d {
        gram[i * d + i] += cfg.ridge;
    }
    let apply = |w: &[[f64; 3]], out: &mut [[f64; 3]]| {
        for i in 0..d {
            let mut acc = [0.0; 3];
            for j in 0..d {
                let g = gram[i * d + j];
                for c in 0..3 {
                    acc[c] += g * w[j][c];
                }
            }
            out[i] = acc;
        }
    };
    // Largest eigenvalue by power iteration, padded for safety.
    let mut v = vec![[1.0; 3]; d];
    let mut av = vec![[0.0; 3]; d];
    let mut lmax = 1.0;
    for _ in 0..200 {
        apply(&v, &mut av);
        let norm = av.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let vnorm = v.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        lmax = norm / vnorm;
        v.iter_mut().zip(&av).for_each(|(a, b)| *a = b.map(|x| x / norm));
    }
    let step = 1.0 / (2.0 * 1.05 * lmax);
    let mut w = vec![[0.0; 3]; d];
    let mut prev = w.clone();
    let mut look = w.clone();
    let mut grad = vec![[0.0; 3]; d];
    let mut t = 1.0f64;
    let mut iterations = cfg.max_iterations;
    for it in 0..cfg.max_iterations {
        apply(&look, &mut grad);
        let mut gnorm = 0.0;
        for i in 0..d {
            for c in 0..3 {
                grad[i][c] = 2.0 * (grad[i][c] - cross[i][c]);
                gnorm += grad[i][c] * grad[i][c];
            }
        }
        if gnorm.sqrt() < cfg.tolerance {
            w.clone_from(&look);
            iterations = it;
            break;
        }
        prev.clone_from(&w);
        for i in 0..d {
            for c in 0..3 {
                w[i][c] = look[i][c] - step * grad[i][c];
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        // Restart when the step opposes the momentum direction.
        let mut dot = 0.0;
        for i in 0..d {
            for c in 0..3 {
                dot += grad[i][c] * (w[i][c] - prev[i][c]);
            }
        }
        if dot > 0.0 {
            t = 1.0;
            look.clone_from(&w);
        } else {
            for i in 0..d {
                for c in 0..3 {
                    look[i][c] = w[i][c] + momentum * (w[i][c] - prev[i][c]);
                }
            }
            t = t_next;
        }
    }
    if iterations == cfg.max_iterations {
        log::warn!("linear probe stopped at the iteration cap ({iterations})");
    }
    Ok(LinearFit { weights: w, feature_mean: fm, feature_std: fs, scaler, iterations })
}

/// Linear probe on precomputed embeddings; returns the validation R² and the fit.
pub fn linear_probe_features(
    train_x: &[Vec<f64>],
    train_y: &[[f64; 3]],
    val_x: &[Vec<f64>],
    val_y: &[[f64; 3]],
    cfg: &LinearProbeConfig,
) -> Result<(R2, LinearFit)> {
    let fit = fit_linear(train_x, train_y, cfg)?;
    let preds: Vec<[f64; 3]> = val_x.iter().map(|x| fit.predict(x)).collect();
    Ok((r2_score(&preds, val_y)?, fit))
}

/// Result of a linear probe: report plus the fitted head.
#[derive(Debug, Clone)]
pub struct ProbeOutput {
    pub report: ExperimentReport,
    pub head: (HeadSpec, ParamStore),
}

/// Fits a linear map from frozen `[cls]` embeddings to the three targets.
///
/// The encoder is only read; the report is on the validation split in GPa.
pub fn fit_linear_probe(
    ckpt: &Checkpoint,
    train: &LabeledSet,
    val: &LabeledSet,
    cfg: &LinearProbeConfig,
    seed: u64,
) -> Result<ProbeOutput> {
    let tx = extract_features(&ckpt.model, &train.tokens)?;
    let vx = extract_features(&ckpt.model, &val.tokens)?;
    let (r2, fit) = linear_probe_features(&tx, &train.targets, &vx, &val.targets, cfg)?;
    Ok(ProbeOutput {
        report: ExperimentReport {
            experiment: "probe".into(),
            mask_ratio: ckpt.meta.mask_ratio,
            mode: "linear".into(),
            head: HeadKind::Linear,
            k: 0,
            n_data: train.len() + val.len(),
            r2,
            seed,
            split_seed: seed,
            config: serde_json::to_value(cfg)?,
        },
        head: fit.to_head()?,
    })
}
