use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{r2_score, LabeledSet, TargetScaler, R2};
use super::head::{HeadKind, HeadSpec};
use super::probe::{extract_features, fit_linear_probe, LinearProbeConfig};
use super::report::ExperimentReport;
use crate::autodiff::{adam_step, AdamConfig, AdamState, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::microgen::derive_seed;
use crate::mmae::{encoder_block_prefix, Checkpoint, CheckpointMeta, Mmae};

const STREAM_HEAD: u64 = 0x5005;
const STREAM_SHUFFLE: u64 = 0x6006;

/// Which encoder parameters a transfer run may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    /// Frozen encoder with a linear head fitted by least squares descent.
    Linear,
    /// Last `k` encoder blocks (and the final norm when `k ≥ 1`) plus the head.
    Partial(usize),
    /// Every encoder parameter plus the head.
    Full,
}

impl ProbeMode {
    /// Blocks fine-tuned for an encoder of the given depth.
    pub fn blocks(self, depth: usize) -> usize {
        match self {
            Self::Linear => 0,
            Self::Partial(k) => k,
            Self::Full => depth,
        }
    }
}

impl std::str::FromStr for ProbeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "full" => Ok(Self::Full),
            _ => s
                .strip_prefix("partial:")
                .and_then(|k| k.parse().ok())
                .map(Self::Partial)
                .ok_or_else(|| Error::invalid(format!("mode `{s}` is not linear, partial:K or full"))),
        }
    }
}

impl std::fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Linear => f.write_str("linear"),
            Self::Partial(k) => write!(f, "partial:{k}"),
            Self::Full => f.write_str("full"),
        }
    }
}

impl Serialize for ProbeMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProbeMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Fine-tuning schedule and head shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub head: HeadKind,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam settings; `adam.lr` applies to the head.
    pub adam: AdamConfig,
    /// Learning-rate multiplier for encoder parameters.
    pub encoder_lr_scale: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            head: HeadKind::Feedforward,
            hidden: 64,
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            encoder_lr_scale: 0.1,
        }
    }
}

/// Transfer settings for every mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub linear: LinearProbeConfig,
    pub finetune: FinetuneConfig,
}

/// Per-epoch fine-tuning trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_r2: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutput {
    pub checkpoint: Checkpoint,
    pub report: ExperimentReport,
    pub history: Vec<EpochStats>,
}

/// Marks the parameters a mode may update as trainable, all others frozen.
pub fn apply_freezing(model: &mut Mmae, k: usize) -> Result<()> {
    let depth = model.config().encoder_depth;
    if k > depth {
        return Err(Error::Config(format!("cannot fine-tune {k} of {depth} blocks")));
    }
    let tuned: Vec<String> = (depth - k..depth).map(encoder_block_prefix).collect();
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = &model.params.get(id).name;
        let on = if k == depth {
            name.starts_with("encoder.")
        } else {
            tuned.iter().any(|p| name.starts_with(p.as_str())) || (k >= 1 && name.starts_with("encoder.norm."))
        };
        model.params.set_trainable(id, on);
    }
    Ok(())
}

fn mode_label(mode: ProbeMode, depth: usize) -> (&'static str, usize) {
    match mode {
        ProbeMode::Linear => ("linear", 0),
        m if m.blocks(depth) == depth => ("full", depth),
        m => ("partial", m.blocks(depth)),
    }
}

/// Cached encoder input for the trainable suffix of the network.
enum Inputs {
    /// Frozen encoder: `[cls]` embeddings.
    Features(Vec<Vec<f64>>),
    /// Activations after the frozen blocks, `[n_patches + 1, dim]` per image.
    Prefix(Vec<Tensor>),
    /// Token matrices for end-to-end training.
    Tokens(Vec<Tensor>),
}

fn prefix_activations(model: &Mmae, tokens: &[Tensor], blocks: usize) -> Result<Vec<Tensor>> {
    let n = model.config().n_patches();
    let positions: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        let mut tape = Tape::new();
        let x = tape.constant(t.clone())?;
        let y = model.encode_prefix(&mut tape, x, &positions, 1, blocks)?;
        out.push(tape.value(y).clone());
    }
    Ok(out)
}

fn prepare(model: &Mmae, tokens: &[Tensor], k: usize) -> Result<Inputs> {
    let depth = model.config().encoder_depth;
    Ok(if k == 0 {
        Inputs::Features(extract_features(model, tokens)?)
    } else if k < depth {
        Inputs::Prefix(prefix_activations(model, tokens, depth - k)?)
    } else {
        Inputs::Tokens(tokens.to_vec())
    })
}

/// Standardized predictions `[batch, 3]` for the selected rows of `inputs`.
fn forward(tape: &mut Tape, model: &Mmae, spec: &HeadSpec, inputs: &Inputs, rows: &[usize], k: usize) -> Result<Var> {
    let cfg = model.config();
    let n = cfg.n_patches();
    let b = rows.len();
    let cls = match inputs {
        Inputs::Features(f) => {
            let sel: Vec<Vec<f64>> = rows.iter().map(|&i| f[i].clone()).collect();
            tape.constant(Tensor::from_rows(&sel)?)?
        }
        Inputs::Prefix(p) => {
            let mut data = Vec::with_capacity(b * (n + 1) * cfg.embed_dim);
            rows.iter().for_each(|&i| data.extend_from_slice(p[i].data()));
            let x = tape.constant(Tensor::new(vec![b * (n + 1), cfg.embed_dim], data)?)?;
            let z = model.encode_from(tape, x, cfg.encoder_depth - k, b, n + 1)?;
            tape.gather_rows(z, &(0..b).map(|i| i * (n + 1)).collect::<Vec<_>>())?
        }
        Inputs::Tokens(t) => {
            let mut data = Vec::with_capacity(b * n * cfg.patch_dim());
            rows.iter().for_each(|&i| data.extend_from_slice(t[i].data()));
            let x = tape.constant(Tensor::new(vec![b * n, cfg.patch_dim()], data)?)?;
            let positions: Vec<usize> = (0..b).flat_map(|_| 0..n).collect();
            let z = model.encode_tokens(tape, x, &positions, b)?;
            tape.gather_rows(z, &(0..b).map(|i| i * (n + 1)).collect::<Vec<_>>())?
        }
    };
    spec.forward(tape, &model.params, cls)
}

fn evaluate(model: &Mmae, spec: &HeadSpec, inputs: &Inputs, targets: &[[f64; 3]], k: usize) -> Result<R2> {
    let mut preds = Vec::with_capacity(targets.len());
    let idx: Vec<usize> = (0..targets.len()).collect();
    for chunk in idx.chunks(64) {
        let mut tape = Tape::new();
        let y = forward(&mut tape, model, spec, inputs, chunk, k)?;
        let y = tape.value(y);
        for r in 0..y.rows() {
            preds.push(spec.scaler.inverse(&[y.row(r)[0], y.row(r)[1], y.row(r)[2]]));
        }
    }
    r2_score(&preds, targets)
}

fn split_head(store: &ParamStore) -> (ParamStore, ParamStore) {
    let (mut model, mut head) = (ParamStore::new(), ParamStore::new());
    for (_, p) in store.iter() {
        let dst = if p.name.starts_with("head.") { &mut head } else { &mut model };
        dst.insert(p.name.clone(), p.value.clone());
    }
    (model, head)
}

/// Trains a regression head on the `[cls]` embedding while updating the
/// encoder parameters `mode` allows; the best-validation epoch is returned.
///
/// `ProbeMode::Linear` delegates to [`fit_linear_probe`].
pub fn finetune(
    ckpt: &Checkpoint,
    mode: ProbeMode,
    cfg: &ProbeConfig,
    train: &LabeledSet,
    val: &LabeledSet,
    seed: u64,
) -> Result<FinetuneOutput> {
    let depth = ckpt.config().encoder_depth;
    let (mode_name, k) = mode_label(mode, depth);
    if mode == ProbeMode::Linear {
        let probe = fit_linear_probe(ckpt, train, val, &cfg.linear, seed)?;
        let mut out = ckpt.clone();
        out.head = Some(probe.head);
        out.meta = finetuned_meta(ckpt, seed, 0, 0, mode, cfg)?;
        return Ok(FinetuneOutput { checkpoint: out, report: probe.report, history: Vec::new() });
    }
    let ft = &cfg.finetune;
    if ft.epochs == 0 || ft.batch_size == 0 || (ft.head == HeadKind::Feedforward && ft.hidden == 0) {
        return Err(Error::Config(format!("invalid fine-tuning settings {ft:?}")));
    }
    let mut model = ckpt.model.clone();
    apply_freezing(&mut model, k)?;
    let scaler = TargetScaler::fit(&train.targets)?;
    let spec = HeadSpec { kind: ft.head, hidden: if ft.head == HeadKind::Linear { 0 } else { ft.hidden }, scaler };
    let head = spec.init(model.embed_dim(), derive_seed(seed, STREAM_HEAD));
    let mut head_ids = Vec::new();
    for (_, p) in head.iter() {
        head_ids.push(model.params.insert(p.name.clone(), p.value.clone()));
    }
    let trainable = model.params.trainable_ids();
    let mut opt = AdamState::new(ft.adam, &model.params, &trainable);
    for &id in &trainable {
        if !head_ids.contains(&id) {
            opt.set_lr_scale(id, ft.encoder_lr_scale)?;
        }
    }
    let t0 = Instant::now();
    let train_in = prepare(&ckpt.model, &train.tokens, k)?;
    let val_in = prepare(&ckpt.model, &val.tokens, k)?;
    let y: Vec<[f64; 3]> = train.targets.iter().map(|t| scaler.transform(t)).collect();

    let mut best: Option<(R2, ParamStore, usize)> = None;
    let mut history = Vec::with_capacity(ft.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    let mut tape = Tape::new();
    for epoch in 1..=ft.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, STREAM_SHUFFLE), epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(ft.batch_size) {
            tape.reset();
            let pred = forward(&mut tape, &model, &spec, &train_in, rows, k);
            let pred = match pred {
                Err(Error::NonFinite { op }) => {
                    log::error!("non-finite value in {op} at step {step}, epoch {epoch}");
                    return Err(Error::NonFiniteLoss { step, epoch });
                }
                other => other?,
            };
            let want: Vec<f64> = rows.iter().flat_map(|&i| y[i]).collect();
            let want = tape.constant(Tensor::new(vec![rows.len(), 3], want)?)?;
            let d = tape.sub(pred, want)?;
            let sq = tape.mul(d, d)?;
            let loss = tape.mean(sq)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { step, epoch });
            }
            total += value * rows.len() as f64;
            let grads = tape.backward(loss)?;
            model.params.accumulate(&grads)?;
            adam_step(&mut model.params, &mut opt)?;
            step += 1;
        }
        let r2 = evaluate(&model, &spec, &val_in, &val.targets, k)?;
        history.push(EpochStats { epoch, train_loss: total / train.len() as f64, val_r2: r2.average });
        log::debug!("finetune {mode} epoch {epoch}: loss {:.5}, val R² {:.4}", total / train.len() as f64, r2.average);
        if best.as_ref().is_none_or(|(b, _, _)| r2.average > b.average) {
            best = Some((r2, model.params.clone(), epoch));
        }
    }
    let (r2, params, best_epoch) = best.expect("at least one epoch");
    log::info!(
        "finetune {mode}: best val R² {:.4} at epoch {best_epoch} ({:.1}s, seed {seed})",
        r2.average,
        t0.elapsed().as_secs_f64()
    );
    let (enc, head) = split_head(&params);
    let mut out = Checkpoint::new(
        Mmae::from_params(*ckpt.config(), &enc)?,
        finetuned_meta(ckpt, seed, step as u64, ft.epochs, mode, cfg)?,
    );
    out.head = Some((spec, head));
    let report = ExperimentReport {
        experiment: "finetune".into(),
        mask_ratio: ckpt.meta.mask_ratio,
        mode: mode_name.into(),
        head: ft.head,
        k,
        n_data: train.len() + val.len(),
        r2,
        seed,
        split_seed: seed,
        config: serde_json::json!({ "finetune": ft, "best_epoch": best_epoch }),
    };
    Ok(FinetuneOutput { checkpoint: out, report, history })
}

fn finetuned_meta(ckpt: &Checkpoint, seed: u64, steps: u64, epochs: usize, mode: ProbeMode, cfg: &ProbeConfig) -> Result<CheckpointMeta> {
    Ok(CheckpointMeta {
        kind: "finetuned".into(),
        seed,
        steps,
        epochs,
        final_loss: None,
        mask_ratio: ckpt.meta.mask_ratio,
        init: ckpt.meta.init.clone(),
        settings: serde_json::json!({ "mode": mode, "transfer": cfg, "source": ckpt.meta }),
    })
}
