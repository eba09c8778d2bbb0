use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::svg::{render, Panel, Series};
use crate::error::{Error, Result};
use crate::transfer::{write_reports_csv, ExperimentReport, HeadKind, COMPONENT_NAMES, R2, REPORT_CSV_HEADER};

/// Parses a report CSV written by [`write_reports_csv`]; returns the rows and
/// the config hash of the first row.
pub fn read_reports_csv(path: &Path) -> Result<(Vec<ExperimentReport>, String)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_CSV_HEADER) {
        return Err(Error::invalid(format!("{}: not a report table", path.display())));
    }
    let mut hash = String::new();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::invalid(format!("{} line {}: malformed row", path.display(), i + 2));
        if f.len() != 13 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad());
        let comps = [num(f[6])?, num(f[7])?, num(f[8])?];
        out.push(ExperimentReport {
            experiment: f[0].into(),
            mask_ratio: num(f[1])?,
            mode: f[2].into(),
            head: match f[3] {
                "linear" => HeadKind::Linear,
                "feedforward" => HeadKind::Feedforward,
                _ => return Err(bad()),
            },
            k: int(f[4])? as usize,
            n_data: int(f[5])? as usize,
            r2: R2 { components: comps, average: num(f[9])? },
            seed: int(f[10])?,
            split_seed: int(f[11])?,
            config: serde_json::Value::Null,
        });
        if hash.is_empty() {
            hash = f[12].into();
        }
    }
    Ok((out, hash))
}

fn x_of(r: &ExperimentReport) -> (f64, &'static str) {
    match r.experiment.as_str() {
        "mask_ratio" => (r.mask_ratio, "masking ratio"),
        "blocks" => (r.k as f64, "blocks fine-tuned"),
        "size" => (r.n_data as f64, "data instances"),
        _ => (r.mask_ratio, "masking ratio"),
    }
}

/// Per-sweep two-panel plots (average R² and per-component R² against the
/// swept variable) with the underlying rows as CSV next to each SVG.
///
/// Rows are grouped by experiment and mode family; an empty input writes
/// nothing.
pub fn emit_figures(reports: &[ExperimentReport], dir: &Path, config_hash: &str) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        log::warn!("no reports; no figures written");
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(dir)?;
    let mut groups: BTreeMap<String, Vec<&ExperimentReport>> = BTreeMap::new();
    for r in reports {
        let family = match (r.experiment.as_str(), r.mode.as_str()) {
            ("blocks", "linear") => continue,
            ("blocks", _) => "finetune".to_string(),
            (_, m) => m.to_string(),
        };
        groups.entry(format!("{}_{family}", r.experiment)).or_default().push(r);
    }
    let mut written = Vec::new();
    for (key, mut rows) in groups {
        rows.sort_by(|a, b| x_of(a).0.total_cmp(&x_of(b).0));
        let (_, x_label) = x_of(rows[0]);
        let pts = |f: &dyn Fn(&R2) -> f64| rows.iter().map(|r| (x_of(r).0, f(&r.r2))).collect::<Vec<_>>();
        let mut avg = vec![Series { name: "average".into(), points: pts(&|r| r.average) }];
        if rows[0].experiment == "blocks" {
            if let Some(lin) = reports.iter().find(|r| r.experiment == "blocks" && r.mode == "linear") {
                avg.push(Series { name: "linear probe".into(), points: vec![(0.0, lin.r2.average)] });
            }
        }
        let comps = (0..3)
            .map(|c| Series { name: COMPONENT_NAMES[c].to_uppercase(), points: pts(&|r| r.components[c]) })
            .collect();
        let svg = render(&[
            Panel { title: format!("(a) average validation R², {key}"), x_label: x_label.into(), y_label: "R²".into(), series: avg },
            Panel { title: "(b) per-component validation R²".into(), x_label: x_label.into(), y_label: "R²".into(), series: comps },
        ]);
        let svg_path = dir.join(format!("{key}.svg"));
        std::fs::write(&svg_path, svg)?;
        let csv_path = dir.join(format!("{key}.csv"));
        let owned: Vec<ExperimentReport> = rows.iter().map(|r| (*r).clone()).collect();
        write_reports_csv(&csv_path, &owned, config_hash)?;
        written.push(svg_path);
        written.push(csv_path);
    }
    Ok(written)
}
