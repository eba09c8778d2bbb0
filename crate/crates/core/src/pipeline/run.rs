use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::figures::{emit_figures, read_reports_csv};
use super::layout::{StageStamp, WorkspaceLayout};
use super::svg::{render, Panel, Series};
use crate::error::{Error, Result};
use crate::homogenize::label_dataset;
use crate::microgen::{derive_seed, generate_dataset, CompositeKind, DatasetManifest, MANIFEST_FILE};
use crate::mmae::{pretrain, reconstruct, write_curve_csv, Checkpoint, MmaeConfig};
use crate::saliency::{render_overlay, saliency, EncoderRegressor};
use crate::transfer::{
    blocks_sweep, finetune, mask_ratio_sweep, size_sweep, split_indices, write_reports_csv, CellFailure,
    Component, ExperimentReport, LabeledSet, SweepOutput,
};

pub const STAGES: [&str; 6] = ["gen", "label", "pretrain", "transfer", "saliency", "figures"];

pub const PRETRAIN_SET: &str = "pretrain";
pub const FIBER_SET: &str = "fiber";
pub const CIRCLE_SET: &str = "circle";
/// Labeled copy of a dataset's manifest, next to the unlabeled one.
pub const LABELED_MANIFEST: &str = "labeled.jsonl";
pub const TRANSFER_CSV: &str = "transfer.csv";

const STREAM_PRETRAIN_SET: u64 = 0xA001;
const STREAM_FIBER_SET: u64 = 0xA002;
const STREAM_CIRCLE_SET: u64 = 0xA003;
const STREAM_TRIPTYCH: u64 = 0xA004;

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutput {
    pub root: PathBuf,
    pub config_hash: String,
    /// Stamps of every stage, including skipped ones.
    pub stages: Vec<StageStamp>,
    /// Stages reused from an earlier run.
    pub skipped: Vec<String>,
}

pub fn checkpoint_name(mask_ratio: f64) -> String {
    format!("mae_r{mask_ratio:.2}.ckpt")
}

pub fn transfer_checkpoint_name(mode: crate::transfer::ProbeMode) -> String {
    format!("transfer_{}.ckpt", mode.to_string().replace(':', "-"))
}

fn labeled_path(layout: &WorkspaceLayout, set: &str) -> PathBuf {
    layout.dataset(set).join(LABELED_MANIFEST)
}

/// Labeled records of a set; missing files or unlabeled rows are dropped.
fn labeled_manifest(layout: &WorkspaceLayout, set: &str) -> Result<DatasetManifest> {
    let path = labeled_path(layout, set);
    if !path.exists() {
        let m = DatasetManifest::read(&layout.dataset(set).join(MANIFEST_FILE))?;
        return Ok(m.with_records(Vec::new()));
    }
    let m = DatasetManifest::read(&path)?;
    let recs = m.labeled().cloned().collect();
    Ok(m.with_records(recs))
}

fn stage_gen(cfg: &RunConfig, layout: &WorkspaceLayout) -> Result<Vec<String>> {
    let g = &cfg.generation;
    let mut notes = Vec::new();
    for (set, kind, n, stream) in [
        (PRETRAIN_SET, CompositeKind::Fiber, g.pretrain_images, STREAM_PRETRAIN_SET),
        (FIBER_SET, CompositeKind::Fiber, g.labeled_fiber, STREAM_FIBER_SET),
        (CIRCLE_SET, CompositeKind::Circle, g.labeled_circle, STREAM_CIRCLE_SET),
    ] {
        let out = generate_dataset(kind, n, g.resolution, derive_seed(cfg.seed, stream), &g.params, &layout.dataset(set))?;
        log::info!("{set}: {} images, {} reseeds", out.manifest.len(), out.reseeds);
        if !out.failures.is_empty() {
            notes.push(format!("{set}: placement failed for {}", out.failures.join(" ")));
        }
    }
    Ok(notes)
}

fn stage_label(cfg: &RunConfig, layout: &WorkspaceLayout) -> Result<Vec<String>> {
    let mut notes = Vec::new();
    for set in [FIBER_SET, CIRCLE_SET] {
        let manifest = DatasetManifest::read(&layout.dataset(set).join(MANIFEST_FILE))?;
        let out = label_dataset(&manifest, &cfg.solver)?;
        let path = labeled_path(layout, set);
        out.manifest.write(&path)?;
        cfg.solver.write_beside(&path)?;
        for (id, e) in &out.failures {
            log::warn!("{set}: labeling {id} failed: {e}");
        }
        if !out.failures.is_empty() {
            notes.push(format!("{set}: {} records unlabeled", out.failures.len()));
        }
    }
    Ok(notes)
}

fn stage_pretrain(cfg: &RunConfig, layout: &WorkspaceLayout, hash: &str) -> Result<Vec<String>> {
    let manifest = DatasetManifest::read(&layout.dataset(PRETRAIN_SET).join(MANIFEST_FILE))?;
    cfg.training
        .mask_ratios
        .par_iter()
        .map(|&r| {
            let model = MmaeConfig { mask_ratio: r, ..cfg.model };
            let out = pretrain(&manifest, &model, &cfg.training.schedule, cfg.seed)?;
            out.checkpoint.save(&layout.checkpoints().join(checkpoint_name(r)))?;
            write_curve_csv(&layout.reports().join(format!("pretrain_r{r:.2}.csv")), &out.curve, cfg.seed, hash)?;
            log::info!("mask ratio {r}: final masked MSE {:?}", out.curve.last().map(|p| p.masked_mse));
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(Vec::new())
}

fn reference_checkpoint(cfg: &RunConfig, layout: &WorkspaceLayout) -> Result<Checkpoint> {
    Checkpoint::load(&layout.checkpoints().join(checkpoint_name(cfg.transfer.reference_ratio)))
}

/// Fiber records used by the masking-ratio and blocks sweeps.
fn transfer_pool(cfg: &RunConfig, layout: &WorkspaceLayout) -> Result<(LabeledSet, LabeledSet)> {
    let fiber = labeled_manifest(layout, FIBER_SET)?;
    let all = LabeledSet::from_manifest(&fiber, &cfg.model)?;
    let n = all.len().min(cfg.transfer.pool);
    let pool = all.subset(&(0..n).collect::<Vec<_>>());
    Ok((all, pool))
}

fn merge(into: &mut SweepOutput, from: SweepOutput) {
    into.reports.extend(from.reports);
    into.failures.extend(from.failures);
}

fn stage_transfer(cfg: &RunConfig, layout: &WorkspaceLayout, hash: &str) -> Result<Vec<String>> {
    let t = &cfg.transfer;
    let seed = cfg.seed;
    let (all, pool) = transfer_pool(cfg, layout)?;
    let csv = layout.reports().join(TRANSFER_CSV);
    if pool.is_empty() {
        write_reports_csv(&csv, &[], hash)?;
        return Ok(vec!["no labeled instances; transfer skipped".into()]);
    }
    let (tr, va) = split_indices(pool.len(), seed);
    let (train, val) = (pool.subset(&tr), pool.subset(&va));
    let mut out = SweepOutput::default();

    if !t.mask_ratio_modes.is_empty() {
        let ckpts: Vec<(String, Result<Checkpoint>)> = cfg
            .training
            .mask_ratios
            .iter()
            .map(|&r| {
                let name = checkpoint_name(r);
                let ck = Checkpoint::load(&layout.checkpoints().join(&name));
                (name, ck)
            })
            .collect();
        merge(&mut out, mask_ratio_sweep(&ckpts, &t.mask_ratio_modes, &t.settings, &train, &val, seed));
    }

    let reference = reference_checkpoint(cfg, layout);
    match &reference {
        Ok(ck) => {
            if let Some(ks) = &t.blocks {
                merge(&mut out, blocks_sweep(ck, ks, &t.settings, &train, &val, seed));
            }
            if !t.sizes.is_empty() {
                merge(&mut out, size_sweep(ck, &all, &t.sizes, t.size_mode, &t.settings, seed));
            }
            if t.composite_probe {
                let circle = labeled_manifest(layout, CIRCLE_SET)
                    .and_then(|m| LabeledSet::from_manifest(&m, &cfg.model));
                // Same record count on both composites.
                let n = circle.as_ref().map_or(pool.len(), |c| c.len().min(all.len()));
                let fiber = all.subset(&(0..n).collect::<Vec<_>>());
                for (name, set) in [("composite_fiber", Ok(fiber)), ("composite_circle", circle)] {
                    let res = set.and_then(|s| {
                        let (a, b) = split_indices(s.len(), seed);
                        finetune(ck, crate::transfer::ProbeMode::Linear, &t.settings, &s.subset(&a), &s.subset(&b), seed)
                            .map(|o| o.report)
                    });
                    let mut one = SweepOutput::default();
                    match res {
                        Ok(r) => one.reports.push(ExperimentReport { experiment: name.into(), ..r }),
                        Err(e) => one.failures.push(CellFailure { experiment: name.into(), cell: "linear".into(), error: e.to_string() }),
                    }
                    merge(&mut out, one);
                }
            }
            if cfg.saliency.images > 0 {
                let ft = finetune(ck, cfg.saliency.mode, &t.settings, &train, &val, seed)?;
                ft.checkpoint.save(&layout.checkpoints().join(transfer_checkpoint_name(cfg.saliency.mode)))?;
            }
        }
        Err(e) => out.failures.push(CellFailure {
            experiment: "reference".into(),
            cell: checkpoint_name(t.reference_ratio),
            error: e.to_string(),
        }),
    }

    write_reports_csv(&csv, &out.reports, hash)?;
    std::fs::write(layout.reports().join("transfer_failures.json"), serde_json::to_string_pretty(&out.failures)?)?;
    let notes = out.failures.iter().map(|f| format!("{} {}: {}", f.experiment, f.cell, f.error)).collect();
    Ok(notes)
}

fn stage_saliency(cfg: &RunConfig, layout: &WorkspaceLayout) -> Result<Vec<String>> {
    let s = &cfg.saliency;
    let mut notes = Vec::new();

    let recon_dir = layout.figures().join("reconstructions");
    let pre = DatasetManifest::read(&layout.dataset(PRETRAIN_SET).join(MANIFEST_FILE))?;
    for &r in &cfg.training.mask_ratios {
        let ck = Checkpoint::load(&layout.checkpoints().join(checkpoint_name(r)))?;
        for (i, rec) in pre.records.iter().take(s.triptychs).enumerate() {
            let img = pre.load_image(rec)?;
            let t = reconstruct(&ck, &img, r, derive_seed(cfg.seed, STREAM_TRIPTYCH + i as u64))?;
            t.write_png(&recon_dir, &format!("r{r:.2}_{}", rec.id))?;
        }
    }

    if s.images == 0 {
        return Ok(notes);
    }
    let path = layout.checkpoints().join(transfer_checkpoint_name(s.mode));
    if !path.exists() {
        notes.push("no transfer checkpoint; saliency maps skipped".into());
        return Ok(notes);
    }
    let ck = Checkpoint::load(&path)?;
    let model = EncoderRegressor::from_checkpoint(&ck)?;
    let fiber = labeled_manifest(layout, FIBER_SET)?;
    let n = fiber.len().min(cfg.transfer.pool);
    let (_, val) = split_indices(n, cfg.seed);
    let dir = layout.figures().join("saliency");
    std::fs::create_dir_all(&dir)?;
    let ck_id = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    for &i in val.iter().take(s.images) {
        let rec = &fiber.records[i];
        let img = fiber.load_image(rec)?;
        let label = rec.label().ok_or_else(|| Error::invalid(format!("record `{}` is unlabeled", rec.id)))?;
        for c in Component::ALL {
            let mut map = saliency(&model, &img, c, label[c.index()], s.target_space)?;
            map.checkpoint_id = ck_id.clone();
            map.image_id = rec.id.clone();
            let stem = format!("{}_{}", rec.id, c.name());
            map.write_csv(&dir.join(format!("{stem}.csv")))?;
            render_overlay(&map, &img)?.write_png(&dir.join(format!("{stem}.png")))?;
            std::fs::write(
                dir.join(format!("{stem}.json")),
                serde_json::to_string_pretty(&serde_json::json!({
                    "image_id": map.image_id,
                    "checkpoint_id": map.checkpoint_id,
                    "component": c.name(),
                    "target_space": map.target_space,
                    "prediction_gpa": map.prediction_gpa,
                    "label_gpa": map.label_gpa,
                }))?,
            )?;
        }
    }
    Ok(notes)
}

fn read_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::invalid(format!("{}: malformed curve row `{l}`", path.display()));
            let e = f.first().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let m = f.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            Ok((e, m))
        })
        .collect()
}

fn stage_figures(cfg: &RunConfig, layout: &WorkspaceLayout, hash: &str) -> Result<Vec<String>> {
    let mut series = Vec::new();
    for &r in &cfg.training.mask_ratios {
        let p = layout.reports().join(format!("pretrain_r{r:.2}.csv"));
        if p.exists() {
            series.push(Series { name: format!("mask ratio {r:.2}"), points: read_curve(&p)? });
        }
    }
    if !series.is_empty() {
        let panel = Panel {
            title: "Pre-training".into(),
            x_label: "epoch".into(),
            y_label: "masked MSE".into(),
            series,
        };
        std::fs::write(layout.figures().join("pretrain_curve.svg"), render(&[panel]))?;
    }
    let csv = layout.reports().join(TRANSFER_CSV);
    let mut notes = Vec::new();
    if csv.exists() {
        let (reports, _) = read_reports_csv(&csv)?;
        if reports.is_empty() {
            notes.push("no transfer results to plot".into());
        }
        emit_figures(&reports, &layout.figures(), hash)?;
    }
    Ok(notes)
}

/// Runs every stage under `<output_root>/<config hash>/`.
///
/// Stages with a stamp from an earlier run are skipped unless `force` is set;
/// forcing a stage also reruns every stage after it.
pub fn run_pipeline(cfg: &RunConfig, force: bool) -> Result<PipelineOutput> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let layout = WorkspaceLayout::new(&cfg.output_root, &hash);
    layout.create()?;
    std::fs::write(layout.config_path(), serde_json::to_string_pretty(cfg)?)?;
    let mut stages = Vec::new();
    let mut skipped = Vec::new();
    let mut rerun = force;
    for stage in STAGES {
        if !rerun {
            if let Some(s) = layout.stamp(stage) {
                log::info!("{stage}: reusing previous run");
                skipped.push(stage.to_string());
                stages.push(s);
                continue;
            }
        }
        rerun = true;
        layout.clear_stamp(stage)?;
        log::info!("{stage}: start (seed {})", cfg.seed);
        let t0 = Instant::now();
        let notes = match stage {
            "gen" => stage_gen(cfg, &layout),
            "label" => stage_label(cfg, &layout),
            "pretrain" => stage_pretrain(cfg, &layout, &hash),
            "transfer" => stage_transfer(cfg, &layout, &hash),
            "saliency" => stage_saliency(cfg, &layout),
            _ => stage_figures(cfg, &layout, &hash),
        }
        .map_err(|e| {
            log::error!("{stage}: {e}");
            e
        })?;
        for n in &notes {
            log::warn!("{stage}: {n}");
        }
        let s = layout.write_stamp(stage, cfg.seed, t0.elapsed(), notes)?;
        log::info!("{stage}: done in {:.1}s", s.wall_seconds);
        stages.push(s);
    }
    std::fs::write(layout.reports().join("timings.json"), serde_json::to_string_pretty(&stages)?)?;
    Ok(PipelineOutput { root: layout.root, config_hash: hash, stages, skipped })
}
