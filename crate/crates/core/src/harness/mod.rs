//! Simulation study driver: cells of repeated populations, metrics, and
//! table and figure data.

pub mod cell;
pub mod config;
pub mod output;
pub mod population;

pub use cell::{
    adjust_width, cell_metrics, run_cell, run_replication, CellMetrics, CellResult, ExperimentCell, Method,
    MethodMetrics, ReplicationResult, TargetMetrics,
};
pub use config::{CellSpec, Overrides, StudyConfig};
pub use output::emit_outputs;
pub use population::{correlation, generate_population};
