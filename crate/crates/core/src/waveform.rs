//! Sampled voltage traces: gate drive, capacitive response and avalanche
//! pulses.
//!
//! Amplitudes are in relative units. Only ratios between the capacitive and
//! avalanche signals, and between signals and discriminator thresholds,
//! carry meaning.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::apd::{AvalancheEvent, GateConfig};
use crate::error::{ensure, Error, Result};
use crate::rng::{Stream, SubstreamRng};

/// Default sampling rate, 40 GS/s.
pub const DEFAULT_SAMPLE_RATE: f64 = 40e9;

/// Default 10-90 % rise time of the band-limited drive, matching a 100 ps
/// oscilloscope.
pub const DEFAULT_DRIVE_RISE_TIME: f64 = 100e-12;

/// A uniformly sampled voltage trace.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformBuffer {
    samples: Vec<f64>,
    sample_rate: f64,
    t0: f64,
}

impl WaveformBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: f64, t0: f64) -> Result<Self> {
        ensure(
            sample_rate > 0.0 && sample_rate.is_finite(),
            "sample_rate",
            "must be positive",
        )?;
        ensure(
            !samples.is_empty(),
            "samples",
            "a waveform needs at least one sample",
        )?;
        ensure(t0.is_finite(), "t0", "must be finite")?;
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { index });
        }
        Ok(Self {
            samples,
            sample_rate,
            t0,
        })
    }

    pub fn zeros(len: usize, sample_rate: f64, t0: f64) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate, t0)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Absolute time of the first sample.
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false: a buffer holds at least one sample.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.t0 + index as f64 / self.sample_rate
    }

    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Samples multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * k).collect(),
            ..*self
        }
    }

    /// Sample-wise sum. Both buffers must share length and rate.
    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_shape(self, other)?;
        Ok(Self {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            ..*self
        })
    }

    /// The samples in `range`, keeping absolute timing.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        ensure(
            range.start < range.end && range.end <= self.samples.len(),
            "range",
            format!("must be a non-empty part of 0..{}", self.samples.len()),
        )?;
        Ok(Self {
            t0: self.time_at(range.start),
            samples: self.samples[range].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    /// CSV with header `time_s,voltage_v`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.samples.len() * 34 + 20);
        s.push_str("time_s,voltage_v\n");
        for (i, v) in self.samples.iter().enumerate() {
            let _ = writeln!(s, "{:.8e},{:.8e}", self.time_at(i), v);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub(crate) fn check_same_shape(a: &WaveformBuffer, b: &WaveformBuffer) -> Result<()> {
    if a.sample_rate != b.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: a.sample_rate,
            right: b.sample_rate,
        });
    }
    if a.samples.len() != b.samples.len() {
        return Err(Error::ShapeMismatch {
            left: a.samples.len(),
            right: b.samples.len(),
        });
    }
    Ok(())
}

/// Single-pole low-pass in place, with state starting at `initial`.
///
/// `rise_time` is the 10-90 % step response time; the time constant is
/// `rise_time / ln 9`. A non-positive rise time leaves the samples alone.
pub(crate) fn single_pole(samples: &mut [f64], sample_rate: f64, rise_time: f64, initial: f64) {
    if rise_time <= 0.0 {
        return;
    }
    let tau = rise_time / 9f64.ln();
    let alpha = -(-1.0 / (sample_rate * tau)).exp_m1();
    let mut y = initial;
    for v in samples.iter_mut() {
        y += alpha * (*v - y);
        *v = y;
    }
}

/// Pulse sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    #[default]
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

/// Ideal square-wave drive, optionally band-limited by a single pole.
///
/// The trace starts at the beginning of gate `first_gate`. With a rise time
/// the samples follow the periodic steady state of the filtered square wave,
/// evaluated in closed form, so edge timing is not quantised to the sample
/// grid.
pub fn synthesize_drive(
    gate: &GateConfig,
    sample_rate: f64,
    first_gate: u64,
    n_samples: usize,
    rise_time: Option<f64>,
) -> Result<WaveformBuffer> {
    gate.validate()?;
    ensure(
        sample_rate >= 10.0 * gate.gating_frequency,
        "sample_rate",
        format!(
            "must be at least 10x the gating frequency ({:e} Hz)",
            10.0 * gate.gating_frequency
        ),
    )?;
    ensure(n_samples >= 1, "n_samples", "must be positive")?;
    let period = gate.period();
    let on = gate.duty_cycle * period;
    let (high, low) = (gate.high_level(), gate.low_level());
    let tau = rise_time.filter(|&r| r > 0.0).map(|r| r / 9f64.ln());
    // Filtered level at the start of the high and of the low phase.
    let (a, b) = match tau {
        Some(tau) => {
            let eh = (-on / tau).exp();
            let el = (-(period - on) / tau).exp();
            let a = (low * (1.0 - el) + high * (1.0 - eh) * el) / (1.0 - eh * el);
            (a, high - (high - a) * eh)
        }
        None => (high, low),
    };
    let samples = (0..n_samples)
        .map(|i| {
            let phase = ((i as f64 / sample_rate) / period).fract() * period;
            match tau {
                Some(tau) if phase < on => high - (high - a) * (-phase / tau).exp(),
                Some(tau) => low - (low - b) * (-(phase - on) / tau).exp(),
                None if phase < on => high,
                None => low,
            }
        })
        .collect();
    WaveformBuffer::new(samples, sample_rate, first_gate as f64 * period)
}

/// Band-limited gate drive spanning `n_gates` periods from t = 0.
///
/// ```
/// use selfdiff::apd::GateConfig;
/// use selfdiff::waveform::synthesize_gate_waveform;
/// let gate = GateConfig::default();
/// let drive = synthesize_gate_waveform(&gate, 64.0 * gate.gating_frequency, 20).unwrap();
/// assert_eq!(drive.len(), 20 * 64);
/// assert!((drive.max() - 49.2).abs() < 1e-6);
/// ```
pub fn synthesize_gate_waveform(
    gate: &GateConfig,
    sample_rate: f64,
    n_gates: u64,
) -> Result<WaveformBuffer> {
    if n_gates == 0 {
        return Err(Error::NoGates);
    }
    let n = (n_gates as f64 * sample_rate / gate.gating_frequency).round() as usize;
    synthesize_drive(gate, sample_rate, 0, n, Some(DEFAULT_DRIVE_RISE_TIME))
}

/// Differentiator plus single-pole smoothing standing in for the diode
/// capacitance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacitiveModel {
    /// Output volts per volt/second of drive slope.
    pub coupling_gain: f64,
    /// 10-90 % rise time of the smoothing pole.
    pub response_rise_time: f64,
}

impl CapacitiveModel {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.coupling_gain > 0.0,
            "coupling_gain",
            "must be positive",
        )?;
        ensure(
            self.response_rise_time > 0.0,
            "response_rise_time",
            "must be positive",
        )
    }
}

/// Capacitive response of the diode to a drive trace.
///
/// Backward-difference derivative of the drive times `coupling_gain`, then a
/// single pole. The first sample has no predecessor and is treated as
/// steady.
pub fn capacitive_response(
    drive: &WaveformBuffer,
    model: &CapacitiveModel,
) -> Result<WaveformBuffer> {
    model.validate()?;
    let x = drive.samples();
    let fs = drive.sample_rate();
    let mut out = Vec::with_capacity(x.len());
    out.push(0.0);
    out.extend(
        x.windows(2)
            .map(|w| (w[1] - w[0]) * fs * model.coupling_gain),
    );
    single_pole(&mut out, fs, model.response_rise_time, 0.0);
    WaveformBuffer::new(out, fs, drive.t0())
}

/// Double-exponential avalanche pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvalanchePulseShape {
    /// Peak volts per unit of normalised charge.
    pub amplitude_per_charge: f64,
    /// Rising time constant.
    pub rise_time: f64,
    /// Falling time constant.
    pub fall_time: f64,
    pub polarity: Polarity,
}

impl AvalanchePulseShape {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.amplitude_per_charge > 0.0,
            "amplitude_per_charge",
            "must be positive",
        )?;
        ensure(self.rise_time > 0.0, "rise_time", "must be positive")?;
        ensure(self.fall_time > 0.0, "fall_time", "must be positive")
    }

    /// Time from pulse start to its maximum.
    pub fn peak_delay(&self) -> f64 {
        let (r, f) = (self.rise_time, self.fall_time);
        if (r - f).abs() <= 1e-9 * f {
            f
        } else {
            r * f / (f - r) * (f / r).ln()
        }
    }

    /// Unit-peak pulse value `t` after its start.
    pub fn unit(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let (r, f) = (self.rise_time, self.fall_time);
        let tp = self.peak_delay();
        if (r - f).abs() <= 1e-9 * f {
            t / f * (1.0 - t / f).exp()
        } else {
            let shape = |t: f64| (-t / f).exp() - (-t / r).exp();
            shape(t) / shape(tp)
        }
    }

    /// Time after the start by which the pulse has decayed below 1e-9 of its
    /// peak.
    pub fn support(&self) -> f64 {
        self.peak_delay() + 25.0 * self.fall_time.max(self.rise_time)
    }
}

/// Avalanche pulses rendered on a trace starting at t = 0.
///
/// Each event contributes a pulse that starts at its absolute time
/// `gate_index * period + time_in_gate` with peak `amplitude_per_charge *
/// charge`.
pub fn render_avalanche_pulses(
    events: &[AvalancheEvent],
    shape: &AvalanchePulseShape,
    period: f64,
    sample_rate: f64,
    duration: f64,
) -> Result<WaveformBuffer> {
    let n = (duration * sample_rate).round() as usize;
    render_avalanche_window(events, shape, period, sample_rate, 0.0, n)
}

/// Avalanche pulses rendered on `n_samples` samples starting at `t0`.
/// Every event must start inside the window.
pub fn render_avalanche_window(
    events: &[AvalancheEvent],
    shape: &AvalanchePulseShape,
    period: f64,
    sample_rate: f64,
    t0: f64,
    n_samples: usize,
) -> Result<WaveformBuffer> {
    shape.validate()?;
    ensure(n_samples >= 1, "n_samples", "must be positive")?;
    let duration = n_samples as f64 / sample_rate;
    let mut samples = vec![0.0; n_samples];
    let sign = shape.polarity.sign();
    let support = shape.support();
    for (index, e) in events.iter().enumerate() {
        let t = e.absolute_time(period) - t0;
        if !(0.0..duration).contains(&t) {
            return Err(Error::EventOutsideTrace {
                index,
                time_s: t + t0,
                duration_s: duration,
            });
        }
        let amp = sign * shape.amplitude_per_charge * e.charge;
        let first = (t * sample_rate).ceil() as usize;
        let last = (((t + support) * sample_rate).ceil() as usize).min(n_samples);
        for (i, s) in samples.iter_mut().enumerate().take(last).skip(first) {
            *s += amp * shape.unit(i as f64 / sample_rate - t);
        }
    }
    WaveformBuffer::new(samples, sample_rate, t0)
}

/// Sum of the capacitive and avalanche traces plus white Gaussian noise.
pub fn compose_apd_output(
    capacitive: &WaveformBuffer,
    avalanches: &WaveformBuffer,
    noise_rms: f64,
    seed: u64,
) -> Result<WaveformBuffer> {
    compose_with_stream(capacitive, avalanches, noise_rms, seed, 0)
}

/// [`compose_apd_output`] drawing its noise from substream `segment`, so
/// disjoint segments of one long record get independent noise.
pub fn compose_with_stream(
    capacitive: &WaveformBuffer,
    avalanches: &WaveformBuffer,
    noise_rms: f64,
    seed: u64,
    segment: u64,
) -> Result<WaveformBuffer> {
    ensure(noise_rms >= 0.0, "noise_rms", "must be non-negative")?;
    let mut out = capacitive.add(avalanches)?;
    if noise_rms > 0.0 {
        let mut rng = SubstreamRng::new(seed).stream(Stream::Noise(segment));
        let normal = Normal::new(0.0, noise_rms).expect("validated rms");
        for v in out.samples.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apd::Provenance;

    fn gate() -> GateConfig {
        GateConfig::default()
    }

    fn cap() -> CapacitiveModel {
        CapacitiveModel {
            coupling_gain: 1e-11,
            response_rise_time: 60e-12,
        }
    }

    #[test]
    fn unfiltered_single_gate_is_half_high_half_low() {
        let g = gate();
        let d = synthesize_drive(&g, 64.0 * g.gating_frequency, 0, 64, None).unwrap();
        assert!(d.samples()[..32].iter().all(|&v| v == g.high_level()));
        assert!(d.samples()[32..].iter().all(|&v| v == g.low_level()));
    }

    #[test]
    fn drive_mean_is_dc_bias() {
        let g = gate();
        let d = synthesize_gate_waveform(&g, 64.0 * g.gating_frequency, 200).unwrap();
        assert!((d.mean() - g.dc_bias).abs() < 1e-4 * g.dc_bias);
    }

    #[test]
    fn drive_levels_match_bias_point() {
        let g = gate();
        assert!((g.high_level() - 49.2).abs() < 1e-12);
        assert!((g.overbias() - 1.9).abs() < 1e-12);
        assert!((g.breakdown_voltage - g.dc_bias - 1.4).abs() < 1e-12);
    }

    #[test]
    fn aliasing_guard() {
        let g = gate();
        assert!(synthesize_gate_waveform(&g, 5.0 * g.gating_frequency, 1).is_err());
        assert!(matches!(
            synthesize_gate_waveform(&g, 40e9, 0),
            Err(Error::NoGates)
        ));
    }

    #[test]
    fn constant_drive_has_no_capacitive_response() {
        let d = WaveformBuffer::new(vec![3.0; 500], 40e9, 0.0).unwrap();
        let c = capacitive_response(&d, &cap()).unwrap();
        assert!(c.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_response_area_is_gain_times_height() {
        let fs = 400e9;
        let height = 2.5;
        let mut x = vec![0.0; 20_000];
        x[100..].iter_mut().for_each(|v| *v = height);
        let d = WaveformBuffer::new(x, fs, 0.0).unwrap();
        let m = cap();
        let c = capacitive_response(&d, &m).unwrap();
        // Rectangle-rule integral of the response.
        let area: f64 = c.samples().iter().sum::<f64>() / fs;
        assert!((area / (m.coupling_gain * height) - 1.0).abs() < 0.01);
        assert!(c.min() >= 0.0);
    }

    #[test]
    fn square_drive_gives_alternating_peaks_with_zero_mean() {
        let g = gate();
        let fs = 64.0 * g.gating_frequency;
        let d = synthesize_gate_waveform(&g, fs, 50).unwrap();
        let c = capacitive_response(&d, &cap()).unwrap();
        let s = c.samples();
        for k in 1..50 {
            let gate_samples = &s[k * 64..(k + 1) * 64];
            let (imax, _) = argmax(gate_samples);
            let (imin, _) = argmax(&gate_samples.iter().map(|v| -v).collect::<Vec<_>>());
            assert!(imax < 32 && imin >= 32, "gate {k}: {imax} {imin}");
        }
        let peak = c.peak_abs();
        let mean: f64 = s[64..].iter().sum::<f64>() / (s.len() - 64) as f64;
        assert!(mean.abs() < 1e-3 * peak);
    }

    fn argmax(x: &[f64]) -> (usize, f64) {
        x.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |a, (i, v)| if v > a.1 { (i, v) } else { a },
        )
    }

    fn shape() -> AvalanchePulseShape {
        AvalanchePulseShape {
            amplitude_per_charge: 0.1,
            rise_time: 30e-12,
            fall_time: 120e-12,
            polarity: Polarity::Positive,
        }
    }

    #[test]
    fn no_events_renders_zeros() {
        let w = render_avalanche_pulses(&[], &shape(), 1.6e-9, 40e9, 10e-9).unwrap();
        assert_eq!(w.len(), 400);
        assert!(w.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pulse_peak_matches_charge() {
        let e = AvalancheEvent {
            gate_index: 2,
            time_in_gate: 0.4e-9,
            charge: 1.7,
            provenance: Provenance::Photon,
        };
        let w = render_avalanche_pulses(&[e], &shape(), 1.6e-9, 40e9, 10e-9).unwrap();
        let want = 0.1 * 1.7;
        assert!((w.max() - want).abs() < 0.02 * want, "{}", w.max());
    }

    #[test]
    fn equal_time_constants_use_alpha_pulse() {
        let s = AvalanchePulseShape {
            rise_time: 50e-12,
            fall_time: 50e-12,
            ..shape()
        };
        assert!((s.unit(s.peak_delay()) - 1.0).abs() < 1e-12);
        assert!(s.unit(10e-12) < s.unit(40e-12));
    }

    #[test]
    fn event_outside_trace_is_rejected_by_index() {
        let e = AvalancheEvent {
            gate_index: 100,
            time_in_gate: 0.0,
            charge: 1.0,
            provenance: Provenance::Dark,
        };
        let ok = AvalancheEvent { gate_index: 0, ..e };
        let r = render_avalanche_pulses(&[ok, e], &shape(), 1.6e-9, 40e9, 10e-9);
        assert!(matches!(r, Err(Error::EventOutsideTrace { index: 1, .. })));
    }

    #[test]
    fn compose_without_noise_is_exact_sum() {
        let a = WaveformBuffer::new(vec![1.0, -2.0, 0.5], 40e9, 0.0).unwrap();
        let b = WaveformBuffer::new(vec![0.25, 0.0, -0.5], 40e9, 0.0).unwrap();
        let z = WaveformBuffer::zeros(3, 40e9, 0.0).unwrap();
        assert_eq!(compose_apd_output(&a, &z, 0.0, 1).unwrap(), a);
        let s = compose_apd_output(&a, &b, 0.0, 1).unwrap();
        for i in 0..3 {
            assert_eq!(s.samples()[i] - a.samples()[i], b.samples()[i]);
        }
    }

    #[test]
    fn compose_shape_mismatch_names_lengths() {
        let a = WaveformBuffer::zeros(3, 40e9, 0.0).unwrap();
        let b = WaveformBuffer::zeros(4, 40e9, 0.0).unwrap();
        let err = compose_apd_output(&a, &b, 0.0, 1).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { left: 3, right: 4 }));
        assert!(err.to_string().contains('3') && err.to_string().contains('4'));
    }

    #[test]
    fn noise_has_requested_rms() {
        let n = 200_000;
        let z = WaveformBuffer::zeros(n, 40e9, 0.0).unwrap();
        let w = compose_apd_output(&z, &z, 0.3, 17).unwrap();
        let mean = w.mean();
        let var = w.samples().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() / 0.3 - 1.0).abs() < 0.03);
        assert_eq!(w, compose_apd_output(&z, &z, 0.3, 17).unwrap());
    }

    #[test]
    fn csv_has_header_and_one_row_per_sample() {
        let w = WaveformBuffer::new(vec![1.0, 2.0], 40e9, 0.0).unwrap();
        let csv = w.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "time_s,voltage_v");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "2.50000000e-11,2.00000000e0");
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        let r = WaveformBuffer::new(vec![0.0, f64::NAN], 1.0, 0.0);
        assert!(matches!(r, Err(Error::NonFiniteSample { index: 1 })));
    }
}
