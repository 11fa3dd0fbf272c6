//! Training runs and the command implementations behind the CLI.

mod commands;
mod config;
pub mod gradcheck;
mod trainer;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_sweep, cmd_train, format_duration, load_for, sort_sweep, write_ablation_csv, write_eval, write_sweep_csv,
    AblationRow, SweepGrid, SweepPoint, SweepRow, TrainSummary, ABLATION_HEADER, SWEEP_HEADER,
};
pub use config::RunConfig;
pub use gradcheck::{run_gradcheck, GradcheckReport, ModelCheck};
pub use trainer::{evaluate_split, fit, predict_split, EpochLog, RunFiles, Split, StepLog, Trainer};
