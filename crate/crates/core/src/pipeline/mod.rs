//! Training, evaluation and experiment runs on generated grid datasets.

mod adam;
mod config;
mod data;
mod eval;
mod metrics;
mod run;
mod train;

pub use adam::{clip_grad_norm, Adam};
pub use config::{ExperimentConfig, KInit};
pub use data::{ExperimentData, Preparation, PreparedTrajectory, SplitName};
pub use eval::{evaluate, predict_trajectory, EvalOptions, EvalReport, Prediction, TrajectoryScore, REPORT_CSV_HEADER};
pub use metrics::{invertibility_error, per_trajectory_rrmse, rrmse};
pub use run::{
    ablate, ablate_on, collect_run_dirs, compare, compare_csv, compare_reports, compare_text, evaluate_run, load_data,
    load_run, plotdata, plotdata_csv, read_report, run_training, write_report, CompareRow, LoadedRun, RunOutput,
    CHECKPOINT_FILE, CONFIG_FILE, HISTORY_FILE, REPORT_CSV, REPORT_JSON,
};
pub use train::{history_csv, train, HistoryRow, TrainOutcome, HISTORY_HEADER};
