use crate::error::{ensure, Result};

/// Ratio between the full width at half maximum and the standard deviation of
/// a Gaussian, `2 sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Square-wave gating drive applied on top of a DC bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    /// Gate repetition rate in Hz.
    pub gating_frequency: f64,
    /// Peak-to-peak amplitude of the square wave in volts.
    pub square_amplitude: f64,
    /// DC bias in volts.
    pub dc_bias: f64,
    /// Diode breakdown voltage in volts.
    pub breakdown_voltage: f64,
    /// Fraction of the period spent at the high level.
    pub duty_cycle: f64,
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.gating_frequency > 0.0 && self.gating_frequency.is_finite(),
            "gating_frequency",
            "must be positive",
        )?;
        ensure(
            self.square_amplitude > 0.0,
            "square_amplitude",
            "must be positive",
        )?;
        ensure(
            self.duty_cycle > 0.0 && self.duty_cycle < 1.0,
            "duty_cycle",
            "must lie strictly between 0 and 1",
        )?;
        ensure(self.dc_bias.is_finite(), "dc_bias", "must be finite")?;
        ensure(
            self.breakdown_voltage.is_finite(),
            "breakdown_voltage",
            "must be finite",
        )
    }

    pub fn period(&self) -> f64 {
        1.0 / self.gating_frequency
    }

    /// Duration of the high (biased above the DC level) part of each period.
    pub fn gate_duration(&self) -> f64 {
        self.duty_cycle / self.gating_frequency
    }

    pub fn high_level(&self) -> f64 {
        self.dc_bias + self.square_amplitude / 2.0
    }

    pub fn low_level(&self) -> f64 {
        self.dc_bias - self.square_amplitude / 2.0
    }

    /// Excess of the gate peak over breakdown; negative when the diode never
    /// reaches Geiger mode.
    pub fn overbias(&self) -> f64 {
        self.high_level() - self.breakdown_voltage
    }
}

/// Shape of the optical detection window inside the electrical gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowShape {
    #[default]
    Gaussian,
    /// Flat top of width `detection_window_fwhm`.
    Rectangular,
}

/// Stochastic device parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    /// Saturation value of the detection efficiency at large overbias.
    pub eta_max: f64,
    /// Overbias scale (V) of the efficiency curve.
    pub v_scale: f64,
    /// Rate (Hz) of primary dark carriers.
    pub dark_carrier_rate: f64,
    /// FWHM (s) of the effective optical detection window.
    pub detection_window_fwhm: f64,
    /// Centre (s) of the detection window relative to the gate start.
    pub detection_window_center: f64,
    pub detection_window_shape: WindowShape,
    /// Mean number of traps filled per unit of normalised avalanche charge.
    pub trap_capture_per_charge: f64,
    /// Mean trap lifetime (s).
    pub detrap_time_constant: f64,
    /// Probability scale for a released carrier to start an avalanche at
    /// saturated overbias.
    pub afterpulse_trigger_scale: f64,
    /// Standard deviation (s) of the avalanche timing jitter.
    pub timing_jitter_sigma: f64,
    /// Mean normalised avalanche charge.
    pub mean_avalanche_charge: f64,
}

impl DetectorParams {
    pub fn validate(&self, gate: &GateConfig) -> Result<()> {
        ensure(
            (0.0..=1.0).contains(&self.eta_max),
            "eta_max",
            "must lie in [0, 1]",
        )?;
        ensure(self.v_scale > 0.0, "v_scale", "must be positive")?;
        ensure(
            self.dark_carrier_rate >= 0.0,
            "dark_carrier_rate",
            "must be non-negative",
        )?;
        ensure(
            self.detection_window_fwhm > 0.0,
            "detection_window_fwhm",
            "must be positive",
        )?;
        ensure(
            self.detection_window_fwhm < gate.gate_duration(),
            "detection_window_fwhm",
            format!(
                "must be shorter than the active gate ({:e} s)",
                gate.gate_duration()
            ),
        )?;
        ensure(
            self.detection_window_center >= 0.0
                && self.detection_window_center < gate.gate_duration(),
            "detection_window_center",
            "must lie inside the active gate",
        )?;
        ensure(
            self.trap_capture_per_charge >= 0.0,
            "trap_capture_per_charge",
            "must be non-negative",
        )?;
        ensure(
            self.detrap_time_constant > 0.0 || self.trap_capture_per_charge == 0.0,
            "detrap_time_constant",
            "must be positive when traps are enabled",
        )?;
        ensure(
            (0.0..=1.0).contains(&self.afterpulse_trigger_scale),
            "afterpulse_trigger_scale",
            "must lie in [0, 1]",
        )?;
        ensure(
            self.timing_jitter_sigma >= 0.0,
            "timing_jitter_sigma",
            "must be non-negative",
        )?;
        ensure(
            self.mean_avalanche_charge > 0.0,
            "mean_avalanche_charge",
            "must be positive",
        )
    }

    /// Avalanche triggering probability relative to saturation, `eta / eta_max`.
    pub fn trigger_fraction(&self, overbias: f64) -> f64 {
        if overbias <= 0.0 {
            0.0
        } else {
            -(-overbias / self.v_scale).exp_m1()
        }
    }
}

/// Efficiency at the window peak for a given overbias.
///
/// Zero at or below breakdown, then `eta_max (1 - exp(-overbias / v_scale))`.
///
/// ```
/// use selfdiff::apd::{efficiency_from_overbias, DetectorParams};
/// let p = DetectorParams { eta_max: 0.30, v_scale: 2.0, ..DetectorParams::default() };
/// let eta = efficiency_from_overbias(&p, 2.0);
/// assert!((eta - 0.30 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
/// assert_eq!(efficiency_from_overbias(&p, -0.5), 0.0);
/// ```
pub fn efficiency_from_overbias(params: &DetectorParams, overbias: f64) -> f64 {
    params.eta_max * params.trigger_fraction(overbias)
}

/// Pulsed illumination synchronised to a sub-multiple of the gate rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlluminationConfig {
    /// Mean photon number per laser pulse.
    pub mean_photons_per_pulse: f64,
    /// Laser pulse FWHM (s).
    pub pulse_fwhm: f64,
    /// The laser fires on every `sync_divisor`-th gate, starting at gate 0.
    pub sync_divisor: u64,
    /// Pulse centre relative to the gate start (s).
    pub pulse_delay: f64,
    /// Unsynchronised background photon rate (Hz).
    pub background_rate: f64,
}

impl IlluminationConfig {
    /// No light at all, for dark runs.
    pub fn dark(sync_divisor: u64) -> Self {
        Self {
            mean_photons_per_pulse: 0.0,
            pulse_fwhm: 0.0,
            sync_divisor,
            pulse_delay: 0.0,
            background_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.sync_divisor >= 1, "sync_divisor", "must be at least 1")?;
        ensure(
            self.mean_photons_per_pulse >= 0.0 && self.mean_photons_per_pulse.is_finite(),
            "mean_photons_per_pulse",
            "must be finite and non-negative",
        )?;
        ensure(self.pulse_fwhm >= 0.0, "pulse_fwhm", "must be non-negative")?;
        ensure(
            self.pulse_delay.is_finite(),
            "pulse_delay",
            "must be finite",
        )?;
        ensure(
            self.background_rate >= 0.0,
            "background_rate",
            "must be non-negative",
        )
    }

    pub fn is_illuminated(&self, gate_index: u64) -> bool {
        gate_index.is_multiple_of(self.sync_divisor)
    }
}

/// What started an avalanche.
///
/// The declaration order doubles as the tie-break order when two triggers
/// land at the same instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Photon,
    Background,
    Dark,
    Afterpulse,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Photon => "photon",
            Provenance::Background => "background",
            Provenance::Dark => "dark",
            Provenance::Afterpulse => "afterpulse",
        }
    }
}

/// One avalanche.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvalancheEvent {
    pub gate_index: u64,
    /// Registered time inside the gate, jitter included (s).
    pub time_in_gate: f64,
    /// Normalised charge.
    pub charge: f64,
    pub provenance: Provenance,
}

impl AvalancheEvent {
    pub fn absolute_time(&self, period: f64) -> f64 {
        self.gate_index as f64 * period + self.time_in_gate
    }
}

impl Default for GateConfig {
    /// 0.62 GHz gating with a 6.6 V square wave, DC bias 1.4 V below a 47.3 V
    /// breakdown.
    fn default() -> Self {
        Self {
            gating_frequency: 0.62e9,
            square_amplitude: 6.6,
            dc_bias: 45.9,
            breakdown_voltage: 47.3,
            duty_cycle: 0.5,
        }
    }
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            eta_max: 0.26,
            v_scale: 2.0,
            dark_carrier_rate: 3.4e4,
            detection_window_fwhm: 163e-12,
            detection_window_center: 403e-12,
            detection_window_shape: WindowShape::Gaussian,
            trap_capture_per_charge: 1.08,
            detrap_time_constant: 100e-9,
            afterpulse_trigger_scale: 0.5,
            timing_jitter_sigma: 13.3e-12,
            mean_avalanche_charge: 1.0,
        }
    }
}

impl Default for IlluminationConfig {
    /// 0.1 photons per pulse on every 64th gate.
    fn default() -> Self {
        Self {
            mean_photons_per_pulse: 0.1,
            pulse_fwhm: 47e-12,
            sync_divisor: 64,
            pulse_delay: 403e-12,
            background_rate: 0.0,
        }
    }
}
