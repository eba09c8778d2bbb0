use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{split_indices, LabeledSet};
use super::finetune::{finetune, ProbeConfig, ProbeMode};
use super::head::HeadKind;
use super::report::ExperimentReport;
use crate::error::{Error, Result};
use crate::microgen::derive_seed;
use crate::mmae::Checkpoint;

const STREAM_SIZE: u64 = 0x7007;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRatioSweep {
    /// One pre-trained checkpoint per masking ratio.
    pub checkpoints: Vec<PathBuf>,
    #[serde(default = "default_ratio_modes")]
    pub modes: Vec<ProbeMode>,
}

fn default_ratio_modes() -> Vec<ProbeMode> {
    vec![ProbeMode::Linear, ProbeMode::Full]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocksSweep {
    pub checkpoint: PathBuf,
    /// Block counts to fine-tune; empty means `0..=depth`.
    #[serde(default)]
    pub ks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeSweep {
    pub checkpoint: PathBuf,
    pub counts: Vec<usize>,
    #[serde(default = "default_size_mode")]
    pub mode: ProbeMode,
}

fn default_size_mode() -> ProbeMode {
    ProbeMode::Linear
}

/// Transfer experiments over masking ratio, fine-tuned depth and data size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub mask_ratio: Option<MaskRatioSweep>,
    pub blocks: Option<BlocksSweep>,
    pub sizes: Option<SizeSweep>,
    pub transfer: ProbeConfig,
    pub seed: u64,
}

/// A sweep cell that could not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub experiment: String,
    pub cell: String,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub reports: Vec<ExperimentReport>,
    pub failures: Vec<CellFailure>,
}

impl SweepOutput {
    fn record(&mut self, experiment: &str, cell: String, res: Result<ExperimentReport>) {
        match res {
            Ok(mut r) => {
                r.experiment = experiment.into();
                self.reports.push(r);
            }
            Err(e) => {
                log::warn!("{experiment} cell {cell} failed: {e}");
                self.failures.push(CellFailure { experiment: experiment.into(), cell, error: e.to_string() });
            }
        }
    }
}

fn cell(ckpt: &Checkpoint, mode: ProbeMode, cfg: &ProbeConfig, train: &LabeledSet, val: &LabeledSet, seed: u64) -> Result<ExperimentReport> {
    finetune(ckpt, mode, cfg, train, val, seed).map(|o| o.report)
}

/// One linear-probe row and one row per `k` with the feed-forward head.
pub fn blocks_sweep(
    ckpt: &Checkpoint,
    ks: &[usize],
    cfg: &ProbeConfig,
    train: &LabeledSet,
    val: &LabeledSet,
    seed: u64,
) -> SweepOutput {
    let depth = ckpt.config().encoder_depth;
    let ks: Vec<usize> = if ks.is_empty() { (0..=depth).collect() } else { ks.to_vec() };
    let mut out = SweepOutput::default();
    out.record("blocks", "linear".into(), cell(ckpt, ProbeMode::Linear, cfg, train, val, seed));
    let ff = ProbeConfig { finetune: super::FinetuneConfig { head: HeadKind::Feedforward, ..cfg.finetune }, ..*cfg };
    for k in ks {
        out.record("blocks", format!("partial:{k}"), cell(ckpt, ProbeMode::Partial(k), &ff, train, val, seed));
    }
    out
}

/// Runs `modes` on each checkpoint; unreadable checkpoints become failures.
pub fn mask_ratio_sweep(
    ckpts: &[(String, Result<Checkpoint>)],
    modes: &[ProbeMode],
    cfg: &ProbeConfig,
    train: &LabeledSet,
    val: &LabeledSet,
    seed: u64,
) -> SweepOutput {
    let mut out = SweepOutput::default();
    for (name, ck) in ckpts {
        for &mode in modes {
            let res = match ck {
                Ok(ck) => cell(ck, mode, cfg, train, val, seed),
                Err(e) => Err(Error::Checkpoint(format!("{name}: {e}"))),
            };
            out.record("mask_ratio", format!("{name}/{mode}"), res);
        }
    }
    out
}

/// Nested subsets of the pool, each split 80/20 with `seed`.
pub fn size_sweep(ckpt: &Checkpoint, pool: &LabeledSet, counts: &[usize], mode: ProbeMode, cfg: &ProbeConfig, seed: u64) -> SweepOutput {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SIZE)));
    let mut out = SweepOutput::default();
    for &n in counts {
        let res = if n > pool.len() || n < 5 {
            Err(Error::invalid(format!("size {n} outside the labeled pool of {}", pool.len())))
        } else {
            let subset = pool.subset(&order[..n]);
            let (tr, va) = split_indices(n, seed);
            cell(ckpt, mode, cfg, &subset.subset(&tr), &subset.subset(&va), seed)
        };
        out.record("size", format!("n={n}"), res);
    }
    out
}

/// Runs every sweep in the spec over `pool`, resolving checkpoint paths
/// against `base`.
pub fn sweep(spec: &SweepSpec, pool: &LabeledSet, base: &Path) -> Result<SweepOutput> {
    let (tr, va) = split_indices(pool.len(), spec.seed);
    let (train, val) = (pool.subset(&tr), pool.subset(&va));
    let load = |p: &PathBuf| Checkpoint::load(&base.join(p));
    let mut out = SweepOutput::default();
    if let Some(m) = &spec.mask_ratio {
        let ckpts: Vec<(String, Result<Checkpoint>)> =
            m.checkpoints.iter().map(|p| (p.display().to_string(), load(p))).collect();
        let r = mask_ratio_sweep(&ckpts, &m.modes, &spec.transfer, &train, &val, spec.seed);
        out.reports.extend(r.reports);
        out.failures.extend(r.failures);
    }
    if let Some(b) = &spec.blocks {
        match load(&b.checkpoint) {
            Ok(ck) => {
                let r = blocks_sweep(&ck, &b.ks, &spec.transfer, &train, &val, spec.seed);
                out.reports.extend(r.reports);
                out.failures.extend(r.failures);
            }
            Err(e) => out.record("blocks", b.checkpoint.display().to_string(), Err(e)),
        }
    }
    if let Some(s) = &spec.sizes {
        match load(&s.checkpoint) {
            Ok(ck) => {
                let r = size_sweep(&ck, pool, &s.counts, s.mode, &spec.transfer, spec.seed);
                out.reports.extend(r.reports);
                out.failures.extend(r.failures);
            }
            Err(e) => out.record("size", s.checkpoint.display().to_string(), Err(e)),
        }
    }
    Ok(out)
}
