//! Simulation of optimal wealth and growth-rate estimation.

pub mod estimate;
pub mod lemma;
pub mod simulate;
pub mod verify;

pub use estimate::{estimate_growth, fit_mean, fit_signed_log_mean, CerEstimate, HorizonPoint, Objective, WealthSamples};
pub use simulate::{
    simulate_horizons, simulate_log_deflator, simulate_wealth, with_workers, DrawdownTracker, HorizonBatch, Policy,
    Scheme, SimConfig,
};
pub use verify::Check;
