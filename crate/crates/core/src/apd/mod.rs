//! Monte Carlo model of a gated Geiger-mode avalanche photodiode.
//!
//! Photons, background light, dark carriers and trap releases compete for
//! each gate; the earliest trigger produces the gate's single avalanche.

mod params;
mod simulate;
mod trap;
mod window;

pub use params::{
    efficiency_from_overbias, AvalancheEvent, DetectorParams, GateConfig, IlluminationConfig,
    Provenance, WindowShape, FWHM_PER_SIGMA,
};
pub use simulate::{
    simulate_events, simulate_gates, simulate_gates_parallel, GateStatistics, SimulationOutput,
};
pub use trap::{trap_release_in_window, TrapEntry, TrapLedger};
pub use window::{ActiveWindow, PhotonOverlap, TimeDensity};
