//! Trap filling and release bookkeeping.

/// One trapped carrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapEntry {
    /// Absolute time (s) of the avalanche that filled the trap.
    pub fill_time: f64,
    /// Absolute time (s) at which the carrier is released.
    pub release_time: f64,
}

/// Every trap filled during a run, in filling order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrapLedger {
    entries: Vec<TrapEntry>,
}

impl TrapLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a trap. Release must come strictly after filling.
    pub fn push(&mut self, fill_time: f64, release_time: f64) {
        assert!(
            release_time > fill_time,
            "trap released at {release_time:e} s before being filled at {fill_time:e} s"
        );
        self.entries.push(TrapEntry {
            fill_time,
            release_time,
        });
    }

    pub fn entries(&self) -> &[TrapEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Number of ledger entries released in `[window_start, window_end)`.
///
/// An empty or inverted window contains nothing.
pub fn trap_release_in_window(ledger: &TrapLedger, window_start: f64, window_end: f64) -> usize {
    ledger
        .entries
        .iter()
        .filter(|e| e.release_time >= window_start && e.release_time < window_end)
        .count()
}

/// Exponential release delay split into whole gate periods plus a fraction
/// of a period.
///
/// `delay = period * (gate_offset + fraction)` is exponentially distributed
/// with mean `tau`. Drawing the two parts from separate uniforms keeps the
/// release phase stable when the gate period is perturbed slightly, which
/// lets detuned runs share random numbers with the nominal one.
pub(crate) fn split_release_delay(tau: f64, period: f64, u_whole: f64, u_frac: f64) -> (u64, f64) {
    let x = period / tau;
    let whole = (-u_whole.ln() / x).floor();
    let gate_offset = if whole.is_finite() && whole < u64::MAX as f64 {
        whole as u64
    } else {
        u64::MAX
    };
    // Truncated exponential on [0, 1): F(f) = (1 - e^{-x f}) / (1 - e^{-x}).
    let fraction = -(u_frac * (-x).exp_m1()).ln_1p() / x;
    (gate_offset, fraction.clamp(0.0, 1.0 - f64::EPSILON))
}
