use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::R2;
use super::head::HeadKind;
use crate::error::Result;

/// Validation R² of one transfer run with enough context to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Sweep or experiment name, e.g. `mask_ratio`, `blocks`, `size`.
    pub experiment: String,
    /// Masking ratio recorded in the source checkpoint.
    pub mask_ratio: f64,
    /// `linear`, `partial` or `full`.
    pub mode: String,
    pub head: HeadKind,
    /// Encoder blocks fine-tuned, counted from the output end.
    pub k: usize,
    /// Labeled records used (training plus validation).
    pub n_data: usize,
    pub r2: R2,
    pub seed: u64,
    pub split_seed: u64,
    /// Settings echo.
    pub config: serde_json::Value,
}

pub const REPORT_CSV_HEADER: &str =
    "experiment,mask_ratio,mode,head,k,n_data,r2_c1111,r2_c2222,r2_c1212,r2_avg,seed,split_seed,config_hash";

impl ExperimentReport {
    pub fn csv_row(&self, config_hash: &str) -> String {
        let head = match self.head {
            HeadKind::Linear => "linear",
            HeadKind::Feedforward => "feedforward",
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.mask_ratio,
            self.mode,
            head,
            self.k,
            self.n_data,
            self.r2.components[0],
            self.r2.components[1],
            self.r2.components[2],
            self.r2.average,
            self.seed,
            self.split_seed,
            config_hash
        )
    }
}

pub fn write_reports_csv(path: &Path, reports: &[ExperimentReport], config_hash: &str) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{REPORT_CSV_HEADER}")?;
    for r in reports {
        writeln!(f, "{}", r.csv_row(config_hash))?;
    }
    f.flush()?;
    Ok(())
}
