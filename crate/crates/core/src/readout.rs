//! Self-differencing readout: one-period delay-and-subtract, suppression
//! measurement and threshold discrimination with dead time.

use crate::error::{ensure, Error, Result};
use crate::waveform::{single_pole, Polarity, WaveformBuffer};

/// Serialised value of an unbounded suppression.
pub const SUPPRESSION_CAP_DB: f64 = 200.0;

/// Splitter, delay line and combiner of the self-differencing circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfDifferencerConfig {
    /// Nominal delay of the long arm, one gate period.
    pub delay: f64,
    /// Gain of the delayed arm relative to the direct arm.
    pub amplitude_imbalance: f64,
    /// Mismatch added to `delay`.
    pub delay_error: f64,
    /// 10-90 % rise time of the output stage; zero disables it.
    pub bandwidth_rise_time: f64,
}

impl SelfDifferencerConfig {
    /// Perfect circuit for a given gate period.
    pub fn ideal(period: f64) -> Self {
        Self {
            delay: period,
            amplitude_imbalance: 1.0,
            delay_error: 0.0,
            bandwidth_rise_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.delay > 0.0, "delay", "must be positive")?;
        ensure(
            self.amplitude_imbalance > 0.0,
            "amplitude_imbalance",
            "must be positive",
        )?;
        ensure(
            self.delay + self.delay_error > 0.0,
            "delay_error",
            "must leave a positive total delay",
        )?;
        ensure(
            self.bandwidth_rise_time >= 0.0,
            "bandwidth_rise_time",
            "must be non-negative",
        )
    }

    pub fn total_delay(&self) -> f64 {
        self.delay + self.delay_error
    }
}

/// Subtracts a delayed copy of the input from itself.
///
/// `out(t) = x(t)/2 - imbalance * x(t - delay - delay_error)/2`, followed by
/// the output-stage low-pass. Fractional delays use linear interpolation.
/// Samples whose delayed partner would precede the input are dropped, so the
/// output starts one delay later than the input.
///
/// ```
/// use selfdiff::readout::{self_difference, SelfDifferencerConfig};
/// use selfdiff::waveform::WaveformBuffer;
/// // A period-4 pattern cancels exactly.
/// let x: Vec<f64> = (0..40).map(|i| [0.0, 1.0, 0.5, -1.0][i % 4]).collect();
/// let input = WaveformBuffer::new(x, 1.0, 0.0).unwrap();
/// let out = self_difference(&input, &SelfDifferencerConfig::ideal(4.0)).unwrap();
/// assert_eq!(out.len(), 36);
/// assert!(out.samples().iter().all(|&v| v == 0.0));
/// ```
pub fn self_difference(
    input: &WaveformBuffer,
    cfg: &SelfDifferencerConfig,
) -> Result<WaveformBuffer> {
    cfg.validate()?;
    let total = cfg.total_delay();
    if input.duration() <= total {
        return Err(Error::TraceTooShort {
            duration_s: input.duration(),
            delay_s: total,
        });
    }
    let x = input.samples();
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSample { index });
    }
    let fs = input.sample_rate();
    let shift = total * fs;
    let whole_shift = shift.round();
    // Snap shifts within rounding noise of an integer to it, so an ideal
    // configuration subtracts identical samples.
    let (base, frac) = if (shift - whole_shift).abs() < 1e-9 {
        (whole_shift as usize, 0.0)
    } else {
        (shift.floor() as usize, shift - shift.floor())
    };
    let start = if frac == 0.0 { base } else { base + 1 };
    let g = cfg.amplitude_imbalance;
    let mut out: Vec<f64> = (start..x.len())
        .map(|i| {
            let k = i - start;
            let delayed = if frac == 0.0 {
                x[k]
            } else {
                // x at index i - shift, between k and k + 1.
                let w = 1.0 - frac;
                x[k] + (x[k + 1] - x[k]) * w
            };
            0.5 * x[i] - 0.5 * g * delayed
        })
        .collect();
    let initial = out[0];
    single_pole(&mut out, fs, cfg.bandwidth_rise_time, initial);
    WaveformBuffer::new(out, fs, input.time_at(start))
}

/// Capacitive suppression of a self-differenced trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuppressionReport {
    pub raw_peak: f64,
    pub residual_peak: f64,
    /// `20 log10(raw_peak / residual_peak)`; infinite when nothing remains.
    pub suppression_db: f64,
}

impl SuppressionReport {
    /// Suppression clipped to [`SUPPRESSION_CAP_DB`] for reporting.
    pub fn capped_db(&self) -> f64 {
        self.suppression_db.min(SUPPRESSION_CAP_DB)
    }
}

/// Peak suppression of an avalanche-free trace.
///
/// The residual is taken after skipping as many leading samples of
/// `differenced` as the differencer dropped from `raw`, which is one delay's
/// worth of start-up transient.
pub fn suppression_ratio_db(
    raw: &WaveformBuffer,
    differenced: &WaveformBuffer,
) -> SuppressionReport {
    let raw_peak = raw.peak_abs();
    let skip = raw.len().saturating_sub(differenced.len());
    let residual_peak = differenced
        .samples()
        .iter()
        .skip(skip)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let suppression_db = if residual_peak > 0.0 {
        20.0 * (raw_peak / residual_peak).log10()
    } else {
        f64::INFINITY
    };
    SuppressionReport {
        raw_peak,
        residual_peak,
        suppression_db,
    }
}

/// Gate-synchronous acceptance: only crossings whose phase within the gate
/// period falls in `[start, end)` are counted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptanceWindow {
    pub period: f64,
    pub start: f64,
    pub end: f64,
}

impl AcceptanceWindow {
    pub fn contains(&self, t: f64) -> bool {
        let phase = t.rem_euclid(self.period);
        phase >= self.start && phase < self.end
    }
}

/// Threshold discriminator with non-paralyzable dead time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorConfig {
    /// Magnitude compared against the signal of the chosen polarity.
    pub threshold: f64,
    pub dead_time: f64,
    pub polarity: Polarity,
    /// Optional gate-synchronous acceptance window.
    pub acceptance: Option<AcceptanceWindow>,
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.threshold > 0.0, "threshold", "must be positive")?;
        ensure(self.dead_time >= 0.0, "dead_time", "must be non-negative")?;
        if let Some(w) = self.acceptance {
            ensure(w.period > 0.0, "acceptance.period", "must be positive")?;
            ensure(
                w.start >= 0.0 && w.start < w.end && w.end <= w.period,
                "acceptance",
                "window must satisfy 0 <= start < end <= period",
            )?;
        }
        Ok(())
    }
}

/// Streaming discriminator. Samples may arrive in several buffers; dead time
/// carries over between them. A buffer that does not continue the previous
/// one starts a fresh crossing search.
#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    last_emit: Option<f64>,
    prev: Option<(f64, f64)>,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            last_emit: None,
            prev: None,
        })
    }

    /// Appends the crossing times found in `input` to `out`.
    pub fn feed(&mut self, input: &WaveformBuffer, out: &mut Vec<f64>) {
        let sign = self.cfg.polarity.sign();
        let thr = self.cfg.threshold;
        let dt = input.dt();
        if let Some((t_prev, _)) = self.prev {
            if (input.t0() - (t_prev + dt)).abs() > 0.01 * dt {
                self.prev = None;
            }
        }
        for (i, &x) in input.samples().iter().enumerate() {
            let t = input.time_at(i);
            let v = sign * x;
            if let Some((t_prev, v_prev)) = self.prev {
                if v_prev < thr && v >= thr {
                    let tc = t_prev + (thr - v_prev) / (v - v_prev) * (t - t_prev);
                    self.crossing(tc, out);
                }
            }
            self.prev = Some((t, v));
        }
    }

    fn crossing(&mut self, t: f64, out: &mut Vec<f64>) {
        if let Some(w) = self.cfg.acceptance {
            if !w.contains(t) {
                return;
            }
        }
        if let Some(last) = self.last_emit {
            if t - last < self.cfg.dead_time {
                return;
            }
        }
        self.last_emit = Some(t);
        out.push(t);
    }
}

/// Times of upward threshold crossings, with linear interpolation between
/// samples and non-paralyzable dead time.
pub fn discriminate(input: &WaveformBuffer, cfg: &DiscriminatorConfig) -> Result<Vec<f64>> {
    let mut d = Discriminator::new(*cfg)?;
    let mut out = Vec::new();
    d.feed(input, &mut out);
    Ok(out)
}

/// Keeps the timestamps (sorted ascending) that a non-paralyzable counter
/// with `dead_time` would register.
pub fn apply_dead_time(timestamps: &[f64], dead_time: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(timestamps.len());
    let mut last: Option<f64> = None;
    for &t in timestamps {
        if last.is_none_or(|l| t - l >= dead_time) {
            out.push(t);
            last = Some(t);
        }
    }
    out
}
