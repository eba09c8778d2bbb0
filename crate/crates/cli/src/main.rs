use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use microforge_core::homogenize::label_dataset;
use microforge_core::microgen::{generate_dataset, CompositeKind, DatasetManifest};
use microforge_core::mmae::{pretrain, reconstruct, write_curve_csv, Checkpoint, MmaeConfig};
use microforge_core::pipeline::{emit_figures, read_reports_csv, run_pipeline, RunConfig};
use microforge_core::saliency::{render_overlay, saliency, EncoderRegressor, TargetSpace};
use microforge_core::transfer::{
    finetune, split_80_20, sweep, write_reports_csv, Component, ExperimentReport, LabeledSet, ProbeMode, SweepSpec,
    REPORT_CSV_HEADER,
};
use microforge_core::{Error, Result};

#[derive(Parser)]
#[command(name = "microforge", version, about = "Composite microstructures, homogenization and masked-autoencoder transfer learning")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location; its meaning depends on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Recompute stages that already completed.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads; 1 gives the reference single-threaded schedule.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of microstructure images and its manifest.
    Gen {
        #[arg(long, default_value = "fiber")]
        kind: CompositeKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        res: Option<usize>,
    },
    /// Label a manifest in place with homogenized stiffness.
    Label {
        #[arg(long)]
        manifest: PathBuf,
        /// Solve grid edge; defaults to the image resolution.
        #[arg(long)]
        res: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Pre-train a masked autoencoder; writes the checkpoint to --out.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides the first configured masking ratio.
        #[arg(long)]
        mask_ratio: Option<f64>,
        /// Training-curve CSV; defaults to `<out>.curve.csv`.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Reconstruction triptychs for the first N images, next to the checkpoint.
        #[arg(long, default_value_t = 0)]
        triptychs: usize,
    },
    /// Linear probe of a checkpoint on a labeled manifest.
    Probe(TransferArgs),
    /// Fine-tune a checkpoint on a labeled manifest.
    Finetune(TransferArgs),
    /// Run the sweeps of a spec file over a labeled manifest.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Gradient saliency maps for selected records.
    Saliency {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Record ids, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long, default_value = "c1111")]
        component: Component,
        #[arg(long, default_value = "standardized")]
        space: String,
    },
    /// Run the whole pipeline under `<output_root>/<config hash>/`.
    Run,
    /// Figures from a report CSV.
    Report {
        #[arg(long)]
        reports: PathBuf,
    },
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    mode: Option<ProbeMode>,
    /// Writes the checkpoint with its regression head.
    #[arg(long)]
    save: Option<PathBuf>,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_path(g: &Global, default: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn print_reports(reports: &[ExperimentReport], hash: &str) {
    println!("{REPORT_CSV_HEADER}");
    for r in reports {
        println!("{}", r.csv_row(hash));
    }
}

fn transfer(g: &Global, cfg: &RunConfig, a: &TransferArgs, mode: ProbeMode) -> Result<()> {
    let hash = cfg.hash()?;
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let (train, val) = split_80_20(&manifest, cfg.seed)?;
    let model_cfg = ckpt.config();
    let train = LabeledSet::from_manifest(&train, model_cfg)?;
    let val = LabeledSet::from_manifest(&val, model_cfg)?;
    let out = finetune(&ckpt, mode, &cfg.transfer.settings, &train, &val, cfg.seed)?;
    print_reports(std::slice::from_ref(&out.report), &hash);
    if let Some(p) = &g.out {
        write_reports_csv(p, &[out.report], &hash)?;
    }
    if let Some(p) = &a.save {
        out.checkpoint.save(p)?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    match &cli.command {
        Command::Gen { kind, n, res } => {
            let res = res.unwrap_or(cfg.generation.resolution);
            let dir = out_path(g, "dataset");
            let out = generate_dataset(*kind, *n, res, cfg.seed, &cfg.generation.params, &dir)?;
            println!("{} images in {}", out.manifest.len(), dir.display());
            if !out.failures.is_empty() {
                return Err(Error::invalid(format!("placement failed for {}", out.failures.join(", "))));
            }
        }
        Command::Label { manifest, res, tol } => {
            let mut meta = cfg.solver;
            if res.is_some() {
                meta.resolution = *res;
            }
            if let Some(t) = tol {
                meta.solver.tolerance = *t;
            }
            let m = DatasetManifest::read(manifest)?;
            let out = label_dataset(&m, &meta)?;
            out.manifest.write(manifest)?;
            meta.write_beside(manifest)?;
            println!("labeled {} of {} records", m.len() - out.failures.len(), m.len());
            if !out.failures.is_empty() {
                for (id, e) in &out.failures {
                    eprintln!("{id}: {e}");
                }
                return Err(Error::invalid(format!("{} records could not be labeled", out.failures.len())));
            }
        }
        Command::Pretrain { manifest, mask_ratio, curve, triptychs } => {
            let ratio = mask_ratio.unwrap_or(cfg.training.mask_ratios[0]);
            let model = MmaeConfig { mask_ratio: ratio, ..cfg.model };
            model.validate()?;
            let m = DatasetManifest::read(manifest)?;
            let out = pretrain(&m, &model, &cfg.training.schedule, cfg.seed)?;
            let path = out_path(g, "mae.ckpt");
            out.checkpoint.save(&path)?;
            let curve_path = curve.clone().unwrap_or_else(|| with_suffix(&path, ".curve.csv"));
            write_curve_csv(&curve_path, &out.curve, cfg.seed, &cfg.hash()?)?;
            if let Some(last) = out.curve.last() {
                println!("epoch {}: masked MSE {:.6}", last.epoch, last.masked_mse);
            }
            let dir = with_suffix(&path, ".triptychs");
            for (i, rec) in m.records.iter().take(*triptychs).enumerate() {
                let t = reconstruct(&out.checkpoint, &m.load_image(rec)?, ratio, cfg.seed.wrapping_add(i as u64))?;
                t.write_png(&dir, &rec.id)?;
            }
        }
        Command::Probe(a) => {
            let mode = a.mode.unwrap_or(ProbeMode::Linear);
            if mode != ProbeMode::Linear {
                return Err(Error::Config(format!("probe only supports linear mode, got {mode}; use finetune")));
            }
            transfer(g, &cfg, a, mode)?;
        }
        Command::Finetune(a) => transfer(g, &cfg, a, a.mode.unwrap_or(ProbeMode::Full))?,
        Command::Sweep { spec, manifest } => {
            let text = std::fs::read_to_string(spec)?;
            let mut s: SweepSpec = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", spec.display())))?;
            if let Some(seed) = g.seed {
                s.seed = seed;
            }
            let hash = cfg.hash()?;
            let base = spec.parent().unwrap_or(Path::new("."));
            let m = DatasetManifest::read(manifest)?;
            let first = s.mask_ratio.as_ref().and_then(|m| m.checkpoints.first()).or(s.blocks.as_ref().map(|b| &b.checkpoint)).or(s.sizes.as_ref().map(|z| &z.checkpoint));
            let model_cfg = match first {
                Some(p) => *Checkpoint::load(&base.join(p))?.config(),
                None => return Err(Error::Config("sweep spec names no checkpoint".into())),
            };
            let labeled = m.with_records(m.labeled().cloned().collect());
            let pool = LabeledSet::from_manifest(&labeled, &model_cfg)?;
            let out = sweep(&s, &pool, base)?;
            print_reports(&out.reports, &hash);
            write_reports_csv(&out_path(g, "sweep.csv"), &out.reports, &hash)?;
            if !out.failures.is_empty() {
                for f in &out.failures {
                    eprintln!("{} {}: {}", f.experiment, f.cell, f.error);
                }
                return Err(Error::invalid(format!("{} sweep cells failed", out.failures.len())));
            }
        }
        Command::Saliency { ckpt, manifest, ids, component, space } => {
            let space = match space.as_str() {
                "standardized" => TargetSpace::Standardized,
                "physical" => TargetSpace::Physical,
                other => return Err(Error::Config(format!("unknown target space `{other}`"))),
            };
            let ck = Checkpoint::load(ckpt)?;
            let model = EncoderRegressor::from_checkpoint(&ck)?;
            let m = DatasetManifest::read(manifest)?;
            let dir = out_path(g, "saliency");
            std::fs::create_dir_all(&dir)?;
            for id in ids {
                let rec = m.records.iter().find(|r| &r.id == id).ok_or_else(|| Error::invalid(format!("no record `{id}`")))?;
                let label = rec.label().ok_or_else(|| Error::invalid(format!("record `{id}` is unlabeled")))?;
                let img = m.load_image(rec)?;
                let mut map = saliency(&model, &img, *component, label[component.index()], space)?;
                map.checkpoint_id = ckpt.display().to_string();
                map.image_id = id.clone();
                let stem = format!("{id}_{}", component.name());
                map.write_csv(&dir.join(format!("{stem}.csv")))?;
                render_overlay(&map, &img)?.write_png(&dir.join(format!("{stem}.png")))?;
                println!("{id}: predicted {:.4} GPa, label {:.4} GPa", map.prediction_gpa, map.label_gpa);
            }
        }
        Command::Run => {
            if let Some(o) = &g.out {
                let mut c = cfg.clone();
                c.output_root = o.clone();
                return run(&c, g.force);
            }
            run(&cfg, g.force)?;
        }
        Command::Report { reports } => {
            let (rows, hash) = read_reports_csv(reports)?;
            let dir = out_path(g, "figures");
            for p in emit_figures(&rows, &dir, &hash)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn run(cfg: &RunConfig, force: bool) -> Result<()> {
    let out = run_pipeline(cfg, force)?;
    for s in &out.stages {
        let reused = if out.skipped.contains(&s.stage) { "  (reused)" } else { "" };
        println!("{:<9} {:>9.1}s  seed {}{reused}", s.stage, s.wall_seconds, s.seed);
        for n in &s.notes {
            println!("          {n}");
        }
    }
    println!("outputs in {}", out.root.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
