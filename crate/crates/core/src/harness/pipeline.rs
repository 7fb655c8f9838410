//! Event-to-count pipelines.
//!
//! The full path renders the detector output around every avalanche, runs
//! it through the self-differencer and the discriminator, and reads back
//! timestamps. The fast path predicts the same timestamps from the events
//! alone, using the linearity of the chain: after differencing, each
//! avalanche contributes a positive copy of a fixed response at its own time
//! and a negative, imbalance-scaled copy one delay later.

use crate::apd::{AvalancheEvent, GateConfig, Provenance};
use crate::error::{ensure, Result};
use crate::readout::{
    self_difference, AcceptanceWindow, Discriminator, DiscriminatorConfig, SelfDifferencerConfig,
};
use crate::waveform::{
    capacitive_response, compose_with_stream, render_avalanche_window, single_pole,
    synthesize_drive, AvalanchePulseShape, CapacitiveModel, Polarity, WaveformBuffer,
    DEFAULT_DRIVE_RISE_TIME, DEFAULT_SAMPLE_RATE,
};

/// Everything between the diode and the counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Readout {
    /// Sampling rate; `None` picks the even multiple of the gating frequency
    /// closest to 40 GS/s, so that both gate edges fall on samples.
    pub sample_rate: Option<f64>,
    pub drive_rise_time: f64,
    pub capacitive: CapacitiveModel,
    pub pulse: AvalanchePulseShape,
    pub noise_rms: f64,
    /// Differencer; a `delay` of zero means one period of the configured gate.
    pub differencer: SelfDifferencerConfig,
    pub threshold: f64,
    pub dead_time: f64,
    pub polarity: Polarity,
    /// Accepted crossing phases `[start, end)` within the gate period.
    pub acceptance: Option<(f64, f64)>,
}

impl Default for Readout {
    fn default() -> Self {
        Self {
            sample_rate: None,
            drive_rise_time: DEFAULT_DRIVE_RISE_TIME,
            capacitive: CapacitiveModel {
                coupling_gain: 1e-11,
                response_rise_time: 100e-12,
            },
            pulse: AvalanchePulseShape {
                amplitude_per_charge: 0.1,
                rise_time: 20e-12,
                fall_time: 80e-12,
                polarity: Polarity::Positive,
            },
            noise_rms: 0.0,
            differencer: SelfDifferencerConfig {
                delay: 0.0,
                amplitude_imbalance: 1.0,
                delay_error: 0.0,
                bandwidth_rise_time: 0.0,
            },
            threshold: 0.01,
            dead_time: 10e-9,
            polarity: Polarity::Positive,
            acceptance: None,
        }
    }
}

impl Readout {
    pub fn validate(&self, gate: &GateConfig) -> Result<()> {
        self.capacitive.validate()?;
        self.pulse.validate()?;
        ensure(self.noise_rms >= 0.0, "noise_rms", "must be non-negative")?;
        ensure(
            self.drive_rise_time >= 0.0,
            "drive_rise_time",
            "must be non-negative",
        )?;
        if let Some(fs) = self.sample_rate {
            ensure(
                fs >= 10.0 * gate.gating_frequency,
                "sample_rate",
                "must be at least 10x the gating frequency",
            )?;
        }
        self.differencer_for(gate).validate()?;
        self.discriminator_for(gate).validate()
    }

    pub fn sample_rate_for(&self, gate: &GateConfig) -> f64 {
        self.sample_rate.unwrap_or_else(|| {
            let half = (DEFAULT_SAMPLE_RATE / (2.0 * gate.gating_frequency))
                .round()
                .max(5.0);
            2.0 * half * gate.gating_frequency
        })
    }

    pub fn differencer_for(&self, gate: &GateConfig) -> SelfDifferencerConfig {
        let mut d = self.differencer;
        if d.delay == 0.0 {
            d.delay = gate.period();
        }
        d
    }

    pub fn discriminator_for(&self, gate: &GateConfig) -> DiscriminatorConfig {
        DiscriminatorConfig {
            threshold: self.threshold,
            dead_time: self.dead_time,
            polarity: self.polarity,
            acceptance: self.acceptance.map(|(start, end)| AcceptanceWindow {
                period: gate.period(),
                start,
                end,
            }),
        }
    }
}

/// One registered count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Count {
    /// Absolute crossing time.
    pub time: f64,
    /// Gate of the avalanche that produced the count, if any.
    pub provenance: Option<Provenance>,
}

/// The differenced response to one unit-charge avalanche, without the
/// delayed negative copy, tabulated on a fine grid.
#[derive(Debug, Clone)]
pub(crate) struct PulseResponse {
    dt: f64,
    table: Vec<f64>,
    peak_index: usize,
    /// Time after which the response stays below a tenth of its peak.
    reach: f64,
    /// Time after which the response stays below 1e-4 of its peak.
    tail: f64,
}

impl PulseResponse {
    pub(crate) fn new(pulse: &AvalanchePulseShape, bandwidth_rise_time: f64) -> Self {
        let dt = 0.25e-12;
        let tau_b = bandwidth_rise_time / 9f64.ln();
        let span = pulse.peak_delay() + 30.0 * pulse.fall_time.max(pulse.rise_time).max(tau_b);
        let n = (span / dt).ceil() as usize + 1;
        let mut table: Vec<f64> = (0..n)
            .map(|i| 0.5 * pulse.amplitude_per_charge * pulse.unit(i as f64 * dt))
            .collect();
        single_pole(&mut table, 1.0 / dt, bandwidth_rise_time, 0.0);
        let peak_index = table
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |a, (i, &v)| if v > a.1 { (i, v) } else { a },
            )
            .0;
        let peak = table[peak_index];
        let last_above =
            |level: f64| table.iter().rposition(|&v| v.abs() >= level).unwrap_or(0) as f64 * dt;
        let reach = last_above(0.1 * peak);
        let tail = last_above(1e-4 * peak);
        Self {
            dt,
            table,
            peak_index,
            reach,
            tail,
        }
    }

    pub(crate) fn peak(&self) -> f64 {
        self.table[self.peak_index]
    }

    pub(crate) fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let x = t / self.dt;
        let i = x.floor() as usize;
        if i + 1 >= self.table.len() {
            return 0.0;
        }
        let f = x - i as f64;
        self.table[i] + (self.table[i + 1] - self.table[i]) * f
    }

    /// First time the response reaches `level` on its rising edge.
    fn rising_crossing(&self, level: f64) -> Option<f64> {
        if level > self.peak() {
            return None;
        }
        let (mut lo, mut hi) = (0usize, self.peak_index);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.table[mid] >= level {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (y0, y1) = (self.table[lo], self.table[hi]);
        let f = if y1 > y0 {
            (level - y0) / (y1 - y0)
        } else {
            1.0
        };
        Some((lo as f64 + f.clamp(0.0, 1.0)) * self.dt)
    }
}

/// Smallest avalanche charge that an isolated avalanche needs to be counted.
pub fn charge_threshold(readout: &Readout) -> f64 {
    let h = PulseResponse::new(&readout.pulse, readout.differencer.bandwidth_rise_time);
    let gain = match readout.polarity {
        Polarity::Positive => 1.0,
        Polarity::Negative => readout.differencer.amplitude_imbalance,
    };
    readout.threshold / (h.peak() * gain)
}

/// Counts predicted from the events without rendering any waveform.
///
/// Crossings before the first differenced sample or after `n_gates` periods
/// are discarded, like in the full path.
pub fn fast_counts(
    events: &[AvalancheEvent],
    gate: &GateConfig,
    readout: &Readout,
    n_gates: u64,
) -> Result<Vec<Count>> {
    readout.validate(gate)?;
    let period = gate.period();
    let diff = readout.differencer_for(gate);
    let disc = readout.discriminator_for(gate);
    let delay = diff.total_delay();
    let g = diff.amplitude_imbalance;
    let h = PulseResponse::new(&readout.pulse, diff.bandwidth_rise_time);
    let sign = readout.polarity.sign();
    let thr = readout.threshold;
    let end = n_gates as f64 * period;
    let times: Vec<f64> = events.iter().map(|e| e.absolute_time(period)).collect();

    let mut out = Vec::new();
    let mut last: Option<f64> = None;
    for (i, e) in events.iter().enumerate() {
        let t_e = times[i];
        // Lobe of this event that the discriminator polarity looks at.
        let (lobe_t, lobe_amp) = match readout.polarity {
            Polarity::Positive => (t_e, e.charge),
            Polarity::Negative => (t_e + delay, g * e.charge),
        };
        if last.is_some_and(|l| lobe_t + h.reach < l + disc.dead_time) {
            continue;
        }
        // Lobes of the neighbouring events that overlap the rising part of
        // this one. Later lobes get their own turn.
        let mut others: Vec<(f64, f64)> = Vec::new();
        for j in i.saturating_sub(2)..(i + 3).min(events.len()) {
            let q = events[j].charge;
            let lobes = [(times[j], sign * q), (times[j] + delay, -sign * g * q)];
            for (k, &(t0, a)) in lobes.iter().enumerate() {
                let own = j == i && (k == 0) == (readout.polarity == Polarity::Positive);
                if !own && t0 > lobe_t - h.tail && t0 < lobe_t + h.reach {
                    others.push((t0, a));
                }
            }
        }
        let offset = if others.is_empty() {
            h.rising_crossing(thr / lobe_amp)
        } else {
            let signal = |t: f64| {
                lobe_amp * h.eval(t - lobe_t)
                    + others
                        .iter()
                        .map(|&(t0, a)| a * h.eval(t - t0))
                        .sum::<f64>()
            };
            scan_crossing(signal, lobe_t, h.reach, thr)
        };
        let Some(offset) = offset else { continue };
        let tc = lobe_t + offset;
        if tc < delay || tc >= end {
            continue;
        }
        if let Some(w) = disc.acceptance {
            if !w.contains(tc) {
                continue;
            }
        }
        if last.is_some_and(|l| tc - l < disc.dead_time) {
            continue;
        }
        last = Some(tc);
        out.push(Count {
            time: tc,
            provenance: Some(e.provenance),
        });
    }
    Ok(out)
}

/// First upward crossing of `thr` by `signal` in `[t0, t0 + span)`, as an
/// offset from `t0`.
fn scan_crossing(signal: impl Fn(f64) -> f64, t0: f64, span: f64, thr: f64) -> Option<f64> {
    let step = 0.5e-12;
    let n = (span / step) as usize;
    let mut prev = signal(t0);
    if prev >= thr {
        return Some(0.0);
    }
    for k in 1..=n {
        let t = t0 + k as f64 * step;
        let v = signal(t);
        if v >= thr {
            let f = (thr - prev) / (v - prev);
            return Some((k as f64 - 1.0 + f) * step);
        }
        prev = v;
    }
    None
}

/// Voltage traces of one stretch of the run.
#[derive(Debug, Clone)]
pub struct TraceSet {
    pub drive: WaveformBuffer,
    pub capacitive: WaveformBuffer,
    pub avalanches: WaveformBuffer,
    /// Capacitive plus avalanche plus noise, as seen by an oscilloscope.
    pub raw: WaveformBuffer,
    /// `raw` delayed by one period (ideal delay).
    pub shifted: WaveformBuffer,
    /// `raw - shifted`, the ideal numerical subtraction.
    pub numeric_difference: WaveformBuffer,
    /// Output of the configured self-differencer.
    pub differenced: WaveformBuffer,
}

/// Renders gates `first_gate .. first_gate + n_gates` with the given events.
pub fn render_traces(
    events: &[AvalancheEvent],
    gate: &GateConfig,
    readout: &Readout,
    first_gate: u64,
    n_gates: u64,
    seed: u64,
) -> Result<TraceSet> {
    readout.validate(gate)?;
    let fs = readout.sample_rate_for(gate);
    let period = gate.period();
    let n = (n_gates as f64 * period * fs).round() as usize;
    let rise = (readout.drive_rise_time > 0.0).then_some(readout.drive_rise_time);
    let drive = synthesize_drive(gate, fs, first_gate, n, rise)?;
    let capacitive = capacitive_response(&drive, &readout.capacitive)?;
    let avalanches = render_avalanche_window(events, &readout.pulse, period, fs, drive.t0(), n)?;
    let raw = compose_with_stream(
        &capacitive,
        &avalanches,
        readout.noise_rms,
        seed,
        first_gate,
    )?;
    let differenced = self_difference(&raw, &readout.differencer_for(gate))?;
    let p = (period * fs).round() as usize;
    ensure(p < n, "n_gates", "trace must span more than one period")?;
    let r = raw.samples();
    let shifted = WaveformBuffer::new(r[..n - p].to_vec(), fs, raw.time_at(p))?;
    let numeric_difference = WaveformBuffer::new(
        r[p..].iter().zip(&r[..n - p]).map(|(a, b)| a - b).collect(),
        fs,
        raw.time_at(p),
    )?;
    Ok(TraceSet {
        drive,
        capacitive,
        avalanches,
        raw,
        shifted,
        numeric_difference,
        differenced,
    })
}

/// Gates rendered ahead of each cluster so the differencer and the filters
/// settle before the first avalanche.
const LEAD_GATES: u64 = 3;
/// Gates rendered after the last avalanche of a cluster, covering its
/// delayed negative copy.
const TAIL_GATES: u64 = 3;

/// Counts from rendered waveforms.
///
/// Only stretches around avalanches are rendered; between them the
/// differenced output is pure capacitive residual and noise, which the
/// configuration must keep below threshold.
pub fn full_counts(
    events: &[AvalancheEvent],
    gate: &GateConfig,
    readout: &Readout,
    n_gates: u64,
    seed: u64,
) -> Result<Vec<Count>> {
    readout.validate(gate)?;
    let period = gate.period();
    let end = n_gates as f64 * period;
    let mut disc = Discriminator::new(readout.discriminator_for(gate))?;
    let mut times = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let mut j = i + 1;
        while j < events.len()
            && events[j].gate_index <= events[j - 1].gate_index + LEAD_GATES + TAIL_GATES
        {
            j += 1;
        }
        let first = events[i].gate_index.saturating_sub(LEAD_GATES);
        let last = events[j - 1].gate_index + TAIL_GATES;
        let traces = render_traces(&events[i..j], gate, readout, first, last - first, seed)?;
        disc.feed(&traces.differenced, &mut times);
        i = j;
    }
    times.retain(|&t| t < end);
    let offset = match readout.polarity {
        Polarity::Positive => 0.0,
        Polarity::Negative => readout.differencer_for(gate).total_delay(),
    };
    Ok(times
        .into_iter()
        .map(|t| {
            let g = ((t - offset) / period).floor();
            let provenance = if g >= 0.0 {
                events
                    .binary_search_by_key(&(g as u64), |e| e.gate_index)
                    .ok()
                    .map(|k| events[k].provenance)
            } else {
                None
            };
            Count {
                time: t,
                provenance,
            }
        })
        .collect())
}
