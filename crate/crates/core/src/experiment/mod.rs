//! Reproducible experiment pipelines: configuration, the five commands and
//! their on-disk artifacts.

mod config;
mod pipeline;
mod report;

pub use config::{
    builtin_change, builtin_single, load_scenario, recalibrate_scenario, ControlConfig, DataConfig,
    ExperimentConfig, GainDesign, LiftingConfig, ModelConfig, MpcSettings, ScenarioFile,
};
pub use pipeline::{
    control, generate_data, identify, run_all, sweep_r, ControlOutcome, IdentificationReport,
    Layout, ModelSummary, RunSummary, TimingEntry, TimingReport, WindowRmse,
};
pub use report::{report, ReportBundle, RmseCell};
