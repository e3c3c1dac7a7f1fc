//! Study runner for the `synthpanel-core` estimators: panel CSV and
//! Eurostat ingestion, TOML study configs, JSON and markdown reports,
//! series plots and a thread-pool executor.

pub mod config;
pub mod csv_panel;
pub mod error;
pub mod eurostat;
pub mod plot;
pub mod pool;
pub mod report;
pub mod runner;
pub mod simulation;

pub use config::{SimulationConfig, StudyConfig};
pub use error::{ErrorKind, Result, Stage, StudyError};
pub use pool::ThreadPool;
pub use report::StudyReport;
pub use runner::{load_panel, run_study, validate_study};
pub use simulation::run_simulation;
