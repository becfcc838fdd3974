//! FLOPs accounting, equal-FLOPs allocation grids, scaling sweeps, ablation
//! runs, and the CSV surfaces they emit.

pub mod config_file;
pub mod csvio;
mod flops;
mod runner;

pub use config_file::{load_config, parse_config, parse_data_spec, DataSpec, ExperimentConfig};
pub use csvio::{fmt_f64, CsvTable};
pub use flops::{count_flops, count_flops_batched, fit_dominant_coefficient, FlopsReport};
pub use runner::{
    ablation_variants, build_dataset, cell_medians, run_ablation, run_grid, run_scaling,
    AblationReport, CellResult, GridReport, ScalingAxis, ScalingReport,
};
