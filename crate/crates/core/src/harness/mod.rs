//! Experiment configuration, presets, training runs with metric logging and
//! checkpoints, and the utilities behind the command-line tool.

mod config;
mod run;
mod tools;

pub use config::{
    preset, ActivationConfig, ExperimentConfig, LearningConfig, ModelKind, OutputConfig,
    RateConfig, SpikingConfig, TopologyConfig, PRESETS,
};
pub use run::{
    evaluate_checkpoint, resume, resume_with_limit, run, run_with_limit, sweep, MetricsRecord,
    RunState, RunSummary, CONFIG_FILE, METRICS_FILE, STATE_FILE, SUMMARY_FILE, TIMING_FILE,
    WEIGHTS_FILE,
};
pub use tools::{
    fi_curve, gradcheck_suite, probe_trial, write_fi_csv, FiPoint, GradcheckOptions,
    GradcheckSuite, ProbeRun,
};
