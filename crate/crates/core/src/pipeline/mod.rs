//! End-to-end orchestration: generation, labeling, pre-training, transfer
//! sweeps, saliency and figures under a content-addressed output directory.

mod config;
mod figures;
mod layout;
mod run;
pub mod svg;

pub use config::{GenerationSection, RunConfig, SaliencySection, TrainingSection, TransferSection};
pub use figures::{emit_figures, read_reports_csv};
pub use layout::{StageStamp, WorkspaceLayout};
pub use run::{
    checkpoint_name, run_pipeline, transfer_checkpoint_name, PipelineOutput, CIRCLE_SET, FIBER_SET,
    LABELED_MANIFEST, PRETRAIN_SET, STAGES, TRANSFER_CSV,
};
