//! Configuration parsing and output files.

mod config;
mod output;

pub use config::{
    default_derivative_grid, parse_config, ExperimentSettings, FamilyName, NonlinearitySection, RunConfig,
    DEFAULT_DERIVATIVE_STEP, DEFAULT_SEED, DEFAULT_T_END,
};
pub use output::{
    fmt_f64, write_outputs, write_samples_csv, write_sweep_csv, Table, VerdictDoc, SAMPLE_HEADER, SWEEP_HEADER,
};
