use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::config::MmaeConfig;
use super::loss::{masked_mse, masked_mse_value, normalize_patches};
use super::model::{Mmae, INIT_SCHEME};
use super::patch::{patchify, sample_mask, MaskPlan};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::error::{Error, Result};
use crate::microgen::{derive_seed, DatasetManifest};

/// Seed streams kept apart so that, e.g., changing the epoch count does not
/// change the initialization.
const STREAM_INIT: u64 = 0x1001;
const STREAM_SHUFFLE: u64 = 0x2002;
const STREAM_MASK: u64 = 0x3003;
const STREAM_MONITOR: u64 = 0x4004;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Linear warm-up length; the rate then follows a half cosine to `min_lr`.
    pub warmup_epochs: usize,
    pub min_lr: f64,
    /// Images whose fixed-mask loss is tracked after every epoch.
    pub monitor_images: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.95,
                eps: 1e-8,
            },
            warmup_epochs: 2,
            min_lr: 1e-5,
            monitor_images: 256,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.adam.lr > 0.0) || self.min_lr < 0.0 {
            return Err(Error::Config(format!("invalid pre-training settings {self:?}")));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, steps_per_epoch: usize) -> f64 {
        let warm = self.warmup_epochs * steps_per_epoch;
        let total = self.epochs * steps_per_epoch;
        if step < warm {
            return self.adam.lr * (step + 1) as f64 / warm as f64;
        }
        let t = (step - warm) as f64 / (total - warm).max(1) as f64;
        self.min_lr + 0.5 * (self.adam.lr - self.min_lr) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    /// Masked MSE on the monitor images under fixed masks; epoch 0 is the
    /// untrained model.
    pub masked_mse: f64,
    /// Mean step loss during the epoch (NaN for epoch 0).
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurvePoint>,
}

/// Token matrices for every image in the manifest.
pub fn load_tokens(manifest: &DatasetManifest, cfg: &MmaeConfig) -> Result<Vec<Tensor>> {
    manifest
        .records
        .iter()
        .map(|r| patchify(&manifest.load_image(r)?, cfg))
        .collect()
}

/// Fixed masks for evaluation: image `i` uses `derive_seed(seed, i)`.
pub fn eval_plans(n_images: usize, cfg: &MmaeConfig, mask_ratio: f64, seed: u64) -> Result<Vec<MaskPlan>> {
    (0..n_images)
        .map(|i| sample_mask(cfg.n_patches(), mask_ratio, derive_seed(seed, i as u64)))
        .collect()
}

fn targets_for(cfg: &MmaeConfig, tokens: &Tensor) -> Tensor {
    if cfg.normalize_targets {
        normalize_patches(tokens)
    } else {
        tokens.clone()
    }
}

/// Raw model output for each image under its plan, in target space.
pub fn predict(model: &Mmae, tokens: &[Tensor], plans: &[MaskPlan], batch_size: usize) -> Result<Vec<Tensor>> {
    let n = model.config().n_patches();
    let mut out = Vec::with_capacity(tokens.len());
    for (chunk, pchunk) in tokens.chunks(batch_size.max(1)).zip(plans.chunks(batch_size.max(1))) {
        let mut tape = Tape::new();
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let r = model.reconstruct_batch(&mut tape, &refs, pchunk)?;
        let rv = tape.value(r);
        for b in 0..chunk.len() {
            let rows = rv.data()[b * n * rv.cols()..(b + 1) * n * rv.cols()].to_vec();
            out.push(Tensor::new(vec![n, rv.cols()], rows)?);
        }
    }
    Ok(out)
}

/// Per-image masked MSE of the model under the given plans.
pub fn per_image_masked_mse(model: &Mmae, tokens: &[Tensor], plans: &[MaskPlan]) -> Result<Vec<f64>> {
    let preds = predict(model, tokens, plans, 32)?;
    preds
        .iter()
        .zip(tokens)
        .zip(plans)
        .map(|((p, t), plan)| masked_mse_value(p, &targets_for(model.config(), t), plan))
        .collect()
}

/// Mean masked MSE of the model over `tokens` with fixed seeded masks.
pub fn evaluate_masked_mse(model: &Mmae, tokens: &[Tensor], mask_ratio: f64, seed: u64) -> Result<f64> {
    let plans = eval_plans(tokens.len(), model.config(), mask_ratio, seed)?;
    let l = per_image_masked_mse(model, tokens, &plans)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64)
}

/// Masked MSE of predicting `mean_pixel` everywhere, under the same masks as
/// [`evaluate_masked_mse`].
pub fn mean_pixel_baseline(tokens: &[Tensor], cfg: &MmaeConfig, mean_pixel: f64, mask_ratio: f64, seed: u64) -> Result<f64> {
    let plans = eval_plans(tokens.len(), cfg, mask_ratio, seed)?;
    let mut s = 0.0;
    for (t, plan) in tokens.iter().zip(&plans) {
        let target = targets_for(cfg, t);
        let fill = if cfg.normalize_targets { 0.0 } else { mean_pixel };
        s += masked_mse_value(&Tensor::full(target.shape(), fill), &target, plan)?;
    }
    Ok(s / tokens.len() as f64)
}

/// Mean pixel value over a token set.
pub fn mean_pixel(tokens: &[Tensor]) -> f64 {
    let n: usize = tokens.iter().map(Tensor::len).sum();
    tokens.iter().flat_map(|t| t.data()).sum::<f64>() / n as f64
}

/// Pre-trains a fresh model on token matrices with masked-patch MSE.
///
/// Every image gets a fresh mask at every step; the result depends only on
/// the inputs and `seed`.
pub fn pretrain_tokens(tokens: &[Tensor], cfg: &MmaeConfig, train: &PretrainConfig, seed: u64) -> Result<PretrainOutput> {
    cfg.validate()?;
    train.validate()?;
    if tokens.is_empty() {
        return Err(Error::invalid("pre-training needs at least one image"));
    }
    let mut model = Mmae::new(*cfg, derive_seed(seed, STREAM_INIT))?;
    let ids = model.params.trainable_ids();
    let mut opt = AdamState::new(train.adam, &model.params, &ids);
    let targets: Vec<Tensor> = tokens.iter().map(|t| targets_for(cfg, t)).collect();
    let monitor = &tokens[..train.monitor_images.clamp(1, tokens.len())];
    let monitor_seed = derive_seed(seed, STREAM_MONITOR);
    let mut curve = vec![CurvePoint {
        epoch: 0,
        masked_mse: evaluate_masked_mse(&model, monitor, cfg.mask_ratio, monitor_seed)?,
        train_loss: f64::NAN,
    }];
    let steps_per_epoch = tokens.len().div_ceil(train.batch_size);
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    let mut step = 0usize;
    let mut tape = Tape::new();
    for epoch in 1..=train.epochs {
        let t0 = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, STREAM_SHUFFLE), epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train.batch_size) {
            let mask_base = derive_seed(derive_seed(seed, STREAM_MASK), step as u64);
            let plans = batch
                .iter()
                .map(|&i| sample_mask(cfg.n_patches(), cfg.mask_ratio, derive_seed(mask_base, i as u64)))
                .collect::<Result<Vec<_>>>()?;
            let inputs: Vec<&Tensor> = batch.iter().map(|&i| &tokens[i]).collect();
            let wanted: Vec<&Tensor> = batch.iter().map(|&i| &targets[i]).collect();
            tape.reset();
            let loss = model
                .reconstruct_batch(&mut tape, &inputs, &plans)
                .and_then(|r| masked_mse(&mut tape, r, &wanted, &plans));
            let loss = match loss {
                Err(Error::NonFinite { op }) => {
                    log::error!("non-finite value in {op} at step {step}, epoch {epoch}");
                    return Err(Error::NonFiniteLoss { step, epoch });
                }
                other => other?,
            };
            let value = tape.value(loss).item();
            let grads = tape.backward(loss)?;
            model.params.accumulate(&grads)?;
            opt.lr = train.lr_at(step, steps_per_epoch);
            adam_step(&mut model.params, &mut opt)?;
            epoch_loss += value * batch.len() as f64;
            step += 1;
        }
        let point = CurvePoint {
            epoch,
            masked_mse: evaluate_masked_mse(&model, monitor, cfg.mask_ratio, monitor_seed)?,
            train_loss: epoch_loss / tokens.len() as f64,
        };
        log::info!(
            "epoch {epoch}/{}: train {:.5}, monitor {:.5} ({:.1}s, seed {seed})",
            train.epochs,
            point.train_loss,
            point.masked_mse,
            t0.elapsed().as_secs_f64()
        );
        curve.push(point);
    }
    let meta = CheckpointMeta {
        kind: "pretrained".into(),
        seed,
        steps: step as u64,
        epochs: train.epochs,
        final_loss: curve.last().map(|p| p.masked_mse),
        mask_ratio: cfg.mask_ratio,
        init: INIT_SCHEME.into(),
        settings: serde_json::to_value(train)?,
    };
    Ok(PretrainOutput {
        checkpoint: Checkpoint::new(model, meta),
        curve,
    })
}

/// Loads the manifest's images and pre-trains on them.
pub fn pretrain(manifest: &DatasetManifest, cfg: &MmaeConfig, train: &PretrainConfig, seed: u64) -> Result<PretrainOutput> {
    let tokens = load_tokens(manifest, cfg)?;
    pretrain_tokens(&tokens, cfg, train, seed)
}

/// Writes `epoch,masked_mse,train_loss,seed` rows.
pub fn write_curve_csv(path: &Path, curve: &[CurvePoint], seed: u64, config_hash: &str) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,masked_mse,train_loss,seed,config_hash")?;
    for p in curve {
        let train = if p.train_loss.is_nan() { String::new() } else { format!("{}", p.train_loss) };
        writeln!(f, "{},{},{},{},{}", p.epoch, p.masked_mse, train, seed, config_hash)?;
    }
    f.flush()?;
    Ok(())
}
