//! Transfer learning from a pre-trained encoder to stiffness regression:
//! linear probing, partial and full fine-tuning, R² evaluation and sweeps.

mod data;
mod finetune;
mod head;
mod probe;
mod report;
mod sweep;

pub use data::{r2_score, r2_single, split_80_20, split_indices, Component, LabeledSet, TargetScaler, COMPONENT_NAMES, R2};
pub use finetune::{apply_freezing, finetune, EpochStats, FinetuneConfig, FinetuneOutput, ProbeConfig, ProbeMode};
pub use head::{HeadKind, HeadSpec};
pub use probe::{
    extract_cls, extract_features, fit_linear, fit_linear_probe, linear_probe_features, LinearFit, LinearProbeConfig,
    ProbeOutput,
};
pub use report::{write_reports_csv, ExperimentReport, REPORT_CSV_HEADER};
pub use sweep::{
    blocks_sweep, mask_ratio_sweep, size_sweep, sweep, BlocksSweep, CellFailure, MaskRatioSweep, SizeSweep, SweepOutput,
    SweepSpec,
};
