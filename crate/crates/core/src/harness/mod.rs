//! Experiment driver: convergence sweeps in `Δt` and `Δε` with log-log order
//! fits, cost-to-tolerance search over powers of two, and CSV/JSON output.

pub mod config;
pub mod cost_table;
pub mod fit;
pub mod output;
pub mod sweep;

pub use config::ExperimentConfig;
pub use cost_table::{cost_to_tolerance, CostTableRow};
pub use fit::{fit_order, OrderFit};
pub use output::emit_plot_data;
pub use sweep::{run_convergence, run_eps_sweep, ConvergenceReport, Experiment};
