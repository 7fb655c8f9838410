//! Simulation and analysis toolkit for gated avalanche photodiodes read out
//! through a self-differencing circuit.
//!
//! * [`apd`] generates avalanche events gate by gate.
//! * [`waveform`] renders drive, capacitive and avalanche voltage traces.
//! * [`readout`] cancels the periodic capacitive response and discriminates
//!   avalanches.
//! * [`analysis`] turns counts into efficiency, afterpulse and dark figures.
//! * [`harness`] runs declarative scenarios end to end.

pub mod analysis;
pub mod apd;
pub mod error;
pub mod harness;
pub mod readout;
pub mod rng;
pub mod waveform;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gates.md")]
    mod gates {}
    #[doc = include_str!("../../../book/src/readout.md")]
    mod readout {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
