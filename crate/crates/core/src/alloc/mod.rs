//! BOPs cost model, the Ω sensitivity objective, exact bit allocation under
//! a BOPs budget and exhaustive quantization sweeps.

mod bops;
mod ilp;
mod omega;
mod sweep;

pub use bops::{layer_bops, model_bops, ArchSpec};
pub use ilp::{solve_ilp, solve_ilp_with, AllocationProblem, AllocationSolution, SolveMethod, DEFAULT_CANDIDATES};
pub use omega::{omega, perturbation};
pub use sweep::{sweep, sweep_bits, sweep_ids, write_sweep_csv, SweepConfig, SweepRecord, SweepSample};

/// The budget grid 250k..=550k in steps of 50k.
pub fn default_budgets() -> Vec<f64> {
    (0..7).map(|i| 250_000.0 + 50_000.0 * i as f64).collect()
}
