//! Scenario files: sectioned `key = value` text.
//!
//! ```text
//! # comment
//! [scenario]
//! kind = bias_scan
//! n_gates = 1000000
//!
//! [gate]
//! gating_frequency = 1.25e9
//! ```
//!
//! Every key is optional; missing keys keep the library defaults.

use std::path::Path;

use crate::apd::{DetectorParams, GateConfig, IlluminationConfig, WindowShape};
use crate::error::{Error, Result};
use crate::harness::pipeline::Readout;
use crate::waveform::Polarity;

/// Default run length per scan point.
pub const DEFAULT_GATES: u64 = 1_000_000;
/// Run length per scan point with `--full`.
pub const FULL_GATES: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Renders a short waveform set around one injected avalanche.
    TraceDemo,
    /// Sweeps the laser delay across one gate period.
    DelayScan,
    /// Sweeps the DC bias.
    BiasScan,
    /// Sweeps the photon flux on a log axis.
    FluxSweep,
    /// Sweeps the gating frequency away from the delay-line match.
    DetuningScan,
    /// Counts with the light off.
    DarkRun,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::TraceDemo => "trace_demo",
            ScenarioKind::DelayScan => "delay_scan",
            ScenarioKind::BiasScan => "bias_scan",
            ScenarioKind::FluxSweep => "flux_sweep",
            ScenarioKind::DetuningScan => "detuning_scan",
            ScenarioKind::DarkRun => "dark_run",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "trace_demo" => ScenarioKind::TraceDemo,
            "delay_scan" => ScenarioKind::DelayScan,
            "bias_scan" => ScenarioKind::BiasScan,
            "flux_sweep" => ScenarioKind::FluxSweep,
            "detuning_scan" => ScenarioKind::DetuningScan,
            "dark_run" => ScenarioKind::DarkRun,
            other => return Err(Error::UnknownKind(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxisScale {
    #[default]
    Linear,
    Log,
}

/// Scan axis: `steps` points from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    pub scale: AxisScale,
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.start];
        }
        let n = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| {
                let f = i as f64 / n;
                match self.scale {
                    AxisScale::Linear => self.start + (self.stop - self.start) * f,
                    AxisScale::Log => self.start * (self.stop / self.start).powf(f),
                }
            })
            .collect()
    }
}

/// How counts are obtained from avalanche events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionPath {
    /// Counts predicted from the events; no waveforms.
    Fast,
    /// Counts from rendered, differenced and discriminated waveforms.
    Full,
}

/// Avalanche injected by `trace_demo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSpec {
    /// Length of the rendered trace in gate periods.
    pub n_gates: u64,
    pub avalanche_gate: u64,
    pub avalanche_time: f64,
    pub avalanche_charge: f64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            n_gates: 8,
            avalanche_gate: 4,
            avalanche_time: 400e-12,
            avalanche_charge: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub n_gates: u64,
    pub seed: u64,
    /// `None` picks the kind's default: full for detuning scans, fast
    /// otherwise.
    pub path: Option<ExecutionPath>,
    pub detector: DetectorParams,
    pub gate: GateConfig,
    pub light: IlluminationConfig,
    pub readout: Readout,
    pub sweep: Option<Sweep>,
    /// Histogram bin width (s).
    pub bin_width: f64,
    /// Gates of the companion dark run; defaults to `n_gates`.
    pub dark_gates: Option<u64>,
    /// Flux sweep: counts to aim for at each point, which sets the point's
    /// run length (capped by `n_gates`).
    pub target_counts: Option<u64>,
    /// Bias scan: DC bias whose point is summarised as the operating point.
    pub operating_dc_bias: Option<f64>,
    /// Delay scan: gates of the timing-histogram run at the best delay;
    /// defaults to `n_gates`.
    pub histogram_gates: Option<u64>,
    pub trace: TraceSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: String::new(),
            kind: ScenarioKind::DarkRun,
            n_gates: DEFAULT_GATES,
            seed: 1,
            path: None,
            detector: DetectorParams::default(),
            gate: GateConfig::default(),
            light: IlluminationConfig::default(),
            readout: Readout::default(),
            sweep: None,
            bin_width: 5e-12,
            dark_gates: None,
            target_counts: None,
            operating_dc_bias: None,
            histogram_gates: None,
            trace: TraceSpec::default(),
        }
    }
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s = Self::parse(&text)?;
        if s.name.is_empty() {
            s.name = path
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Scenario::default();
        let mut kind = None;
        let mut section = String::new();
        let mut sweep = PendingKeys::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| syntax(line_no, "unclosed section header"))?;
                section = name.trim().to_string();
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(syntax(line_no, format!("unknown section [{section}]")));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(line_no, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(syntax(line_no, "key outside of any section"));
            }
            let at = |e: Error| match e {
                Error::ScenarioSyntax { .. } => e,
                other => syntax(line_no, other.to_string()),
            };
            s.set(&section, key, value, &mut kind, &mut sweep)
                .map_err(at)?;
        }
        s.kind = kind.ok_or_else(|| Error::Scenario("missing [scenario] kind".into()))?;
        s.readout.acceptance = match (sweep.accept_start, sweep.accept_end) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => {
                return Err(Error::Scenario(
                    "accept_start and accept_end must be given together".into(),
                ))
            }
        };
        s.sweep = sweep.build(s.kind, &s)?;
        s.validate()?;
        Ok(s)
    }

    fn set(
        &mut self,
        section: &str,
        key: &str,
        value: &str,
        kind: &mut Option<ScenarioKind>,
        sweep: &mut PendingKeys,
    ) -> Result<()> {
        let f = || num(key, value);
        let u = || int(key, value);
        match (section, key) {
            ("scenario", "kind") => *kind = Some(ScenarioKind::parse(value)?),
            ("scenario", "name") => self.name = value.to_string(),
            ("scenario", "n_gates") => self.n_gates = u()?,
            ("scenario", "seed") => self.seed = u()?,
            ("scenario", "path") => {
                self.path = Some(match value {
                    "fast" => ExecutionPath::Fast,
                    "full" => ExecutionPath::Full,
                    _ => return Err(bad(key, "expected fast or full")),
                })
            }

            ("gate", "gating_frequency") => self.gate.gating_frequency = f()?,
            ("gate", "square_amplitude") => self.gate.square_amplitude = f()?,
            ("gate", "dc_bias") => self.gate.dc_bias = f()?,
            ("gate", "breakdown_voltage") => self.gate.breakdown_voltage = f()?,
            ("gate", "duty_cycle") => self.gate.duty_cycle = f()?,

            ("detector", "eta_max") => self.detector.eta_max = f()?,
            ("detector", "v_scale") => self.detector.v_scale = f()?,
            ("detector", "dark_carrier_rate") => self.detector.dark_carrier_rate = f()?,
            ("detector", "window_fwhm") => self.detector.detection_window_fwhm = f()?,
            ("detector", "window_center") => self.detector.detection_window_center = f()?,
            ("detector", "window_shape") => {
                self.detector.detection_window_shape = match value {
                    "gaussian" => WindowShape::Gaussian,
                    "rectangular" => WindowShape::Rectangular,
                    _ => return Err(bad(key, "expected gaussian or rectangular")),
                }
            }
            ("detector", "trap_capture_per_charge") => self.detector.trap_capture_per_charge = f()?,
            ("detector", "detrap_time_constant") => self.detector.detrap_time_constant = f()?,
            ("detector", "detrap_spectrum") => {
                return Err(bad(
                    key,
                    "reserved; only a single detrap_time_constant is supported",
                ))
            }
            ("detector", "afterpulse_trigger_scale") => {
                self.detector.afterpulse_trigger_scale = f()?
            }
            ("detector", "timing_jitter_sigma") => self.detector.timing_jitter_sigma = f()?,
            ("detector", "mean_avalanche_charge") => self.detector.mean_avalanche_charge = f()?,

            ("illumination", "mean_photons_per_pulse") => self.light.mean_photons_per_pulse = f()?,
            ("illumination", "pulse_fwhm") => self.light.pulse_fwhm = f()?,
            ("illumination", "sync_divisor") => self.light.sync_divisor = u()?,
            ("illumination", "pulse_delay") => self.light.pulse_delay = f()?,
            ("illumination", "background_rate") => self.light.background_rate = f()?,

            ("waveform", "sample_rate") => {
                self.readout.sample_rate = if value == "auto" { None } else { Some(f()?) }
            }
            ("waveform", "drive_rise_time") => self.readout.drive_rise_time = f()?,
            ("waveform", "coupling_gain") => self.readout.capacitive.coupling_gain = f()?,
            ("waveform", "response_rise_time") => self.readout.capacitive.response_rise_time = f()?,
            ("waveform", "avalanche_amplitude") => self.readout.pulse.amplitude_per_charge = f()?,
            ("waveform", "avalanche_rise_time") => self.readout.pulse.rise_time = f()?,
            ("waveform", "avalanche_fall_time") => self.readout.pulse.fall_time = f()?,
            ("waveform", "avalanche_polarity") => {
                self.readout.pulse.polarity = polarity(key, value)?
            }
            ("waveform", "noise_rms") => self.readout.noise_rms = f()?,

            ("readout", "delay") => {
                self.readout.differencer.delay = if value == "auto" { 0.0 } else { f()? }
            }
            ("readout", "amplitude_imbalance") => {
                self.readout.differencer.amplitude_imbalance = f()?
            }
            ("readout", "delay_error") => self.readout.differencer.delay_error = f()?,
            ("readout", "bandwidth_rise_time") => {
                self.readout.differencer.bandwidth_rise_time = f()?
            }
            ("readout", "threshold") => self.readout.threshold = f()?,
            ("readout", "dead_time") => self.readout.dead_time = f()?,
            ("readout", "polarity") => self.readout.polarity = polarity(key, value)?,
            ("readout", "accept_start") => sweep.accept_start = Some(f()?),
            ("readout", "accept_end") => sweep.accept_end = Some(f()?),

            ("scan", "start") => sweep.start = Some(f()?),
            ("scan", "stop") => sweep.stop = Some(f()?),
            ("scan", "steps") => sweep.steps = Some(u()? as usize),
            ("scan", "scale") => {
                sweep.scale = match value {
                    "linear" => AxisScale::Linear,
                    "log" => AxisScale::Log,
                    _ => return Err(bad(key, "expected linear or log")),
                }
            }
            ("scan", "bin_width") => self.bin_width = f()?,
            ("scan", "dark_gates") => self.dark_gates = Some(u()?),
            ("scan", "target_counts") => self.target_counts = Some(u()?),
            ("scan", "operating_dc_bias") => self.operating_dc_bias = Some(f()?),
            ("scan", "histogram_gates") => self.histogram_gates = Some(u()?),

            ("trace", "n_gates") => self.trace.n_gates = u()?,
            ("trace", "avalanche_gate") => self.trace.avalanche_gate = u()?,
            ("trace", "avalanche_time") => self.trace.avalanche_time = f()?,
            ("trace", "avalanche_charge") => self.trace.avalanche_charge = f()?,

            _ => {
                return Err(Error::Scenario(format!(
                    "unknown key `{key}` in [{section}]"
                )))
            }
        }
        Ok(())
    }

    /// Execution path after applying the kind's default.
    pub fn execution_path(&self) -> ExecutionPath {
        self.path.unwrap_or(match self.kind {
            ScenarioKind::DetuningScan => ExecutionPath::Full,
            _ => ExecutionPath::Fast,
        })
    }

    /// Checks every configuration the run will use, before any computation.
    pub fn validate(&self) -> Result<()> {
        if self.n_gates == 0 {
            return Err(Error::NoGates);
        }
        for (name, v) in [
            ("dark_gates", self.dark_gates),
            ("histogram_gates", self.histogram_gates),
            ("target_counts", self.target_counts),
        ] {
            if v == Some(0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be positive".into(),
                });
            }
        }
        crate::error::ensure(self.bin_width > 0.0, "bin_width", "must be positive")?;
        self.light.validate()?;
        for gate in self.gate_points() {
            gate.validate()?;
            self.detector.validate(&gate)?;
            self.readout.validate(&gate)?;
        }
        if self.kind == ScenarioKind::TraceDemo {
            crate::error::ensure(
                self.trace.avalanche_gate < self.trace.n_gates,
                "avalanche_gate",
                "must lie inside the trace",
            )?;
            crate::error::ensure(
                (0.0..self.gate.period()).contains(&self.trace.avalanche_time),
                "avalanche_time",
                "must lie inside the gate period",
            )?;
        }
        Ok(())
    }

    /// Gate configurations at the two ends of the scan (or the single
    /// configuration of an unscanned kind).
    fn gate_points(&self) -> Vec<GateConfig> {
        let Some(sweep) = self.sweep else {
            return vec![self.gate];
        };
        [sweep.start, sweep.stop]
            .into_iter()
            .map(|v| match self.kind {
                ScenarioKind::BiasScan => GateConfig {
                    dc_bias: v,
                    ..self.gate
                },
                ScenarioKind::DetuningScan => GateConfig {
                    gating_frequency: self.gate.gating_frequency * (1.0 + v),
                    ..self.gate
                },
                _ => self.gate,
            })
            .collect()
    }
}

const SECTIONS: &[&str] = &[
    "scenario",
    "gate",
    "detector",
    "illumination",
    "waveform",
    "readout",
    "scan",
    "trace",
];

#[derive(Default)]
struct PendingKeys {
    start: Option<f64>,
    stop: Option<f64>,
    steps: Option<usize>,
    scale: AxisScale,
    accept_start: Option<f64>,
    accept_end: Option<f64>,
}

impl PendingKeys {
    fn build(&self, kind: ScenarioKind, s: &Scenario) -> Result<Option<Sweep>> {
        let needs_axis = matches!(
            kind,
            ScenarioKind::BiasScan | ScenarioKind::FluxSweep | ScenarioKind::DetuningScan
        );
        let default = match kind {
            ScenarioKind::DelayScan => Some((0.0, s.gate.period(), 64usize)),
            _ => None,
        };
        let sweep = match (self.start, self.stop, self.steps, default) {
            (None, None, None, None) if needs_axis => {
                return Err(Error::Scenario(format!(
                    "{} needs [scan] start, stop and steps",
                    kind.as_str()
                )))
            }
            (None, None, None, None) => return Ok(None),
            (start, stop, steps, d) => {
                let d = d.unwrap_or((f64::NAN, f64::NAN, 0));
                Sweep {
                    start: start.unwrap_or(d.0),
                    stop: stop.unwrap_or(d.1),
                    steps: steps.unwrap_or(d.2),
                    scale: self.scale,
                }
            }
        };
        if !sweep.start.is_finite() || !sweep.stop.is_finite() || sweep.steps == 0 {
            return Err(Error::Scenario(
                "[scan] needs finite start and stop and at least one step".into(),
            ));
        }
        if sweep.scale == AxisScale::Log && (sweep.start <= 0.0 || sweep.stop <= 0.0) {
            return Err(Error::Scenario(
                "log axis needs positive start and stop".into(),
            ));
        }
        if kind == ScenarioKind::FluxSweep && sweep.scale != AxisScale::Log {
            return Err(Error::Scenario("flux_sweep needs scale = log".into()));
        }
        if kind == ScenarioKind::DetuningScan && (sweep.start <= -1.0 || sweep.stop <= -1.0) {
            return Err(Error::Scenario(
                "detuning offsets must stay above -1".into(),
            ));
        }
        Ok(Some(sweep))
    }
}

fn syntax(line: usize, message: impl Into<String>) -> Error {
    Error::ScenarioSyntax {
        line,
        message: message.into(),
    }
}

fn bad(name: &str, reason: &str) -> Error {
    Error::Scenario(format!("{name}: {reason}"))
}

fn num(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(key, &format!("`{value}` is not a finite number")))
}

fn int(key: &str, value: &str) -> Result<u64> {
    // Accept 1e6-style literals when they are whole numbers.
    value
        .parse::<u64>()
        .ok()
        .or_else(|| {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v < 1.8e19)
                .map(|v| v as u64)
        })
        .ok_or_else(|| bad(key, &format!("`{value}` is not a non-negative integer")))
}

fn polarity(key: &str, value: &str) -> Result<Polarity> {
    match value {
        "positive" => Ok(Polarity::Positive),
        "negative" => Ok(Polarity::Negative),
        _ => Err(bad(key, "expected positive or negative")),
    }
}
