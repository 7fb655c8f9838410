//! Scenario execution, one pipeline per kind.

use crate::analysis::{
    afterpulse_probability, build_time_histogram, count_statistics, curve_fwhm, figure_of_merit,
    fwhm, linearity_analysis, net_efficiency, CountStats, TimeHistogram,
};
use crate::apd::{
    simulate_events, AvalancheEvent, GateConfig, GateStatistics, IlluminationConfig, Provenance,
};
use crate::error::{ensure, Result};
use crate::harness::pipeline::{fast_counts, full_counts, render_traces, Count, Readout};
use crate::harness::scenario::{ExecutionPath, Scenario, ScenarioKind};
use crate::readout::{discriminate, suppression_ratio_db, DiscriminatorConfig};
use crate::waveform::WaveformBuffer;

/// One named column of per-point values.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// A file-shaped by-product of a run: a histogram or a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub csv: String,
}

/// Result of a scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanCurve {
    pub name: String,
    pub kind: ScenarioKind,
    /// Name of the scanned quantity; empty for unscanned kinds.
    pub axis_name: String,
    pub axis_values: Vec<f64>,
    /// Per-point observables written to the CSV report.
    pub columns: Vec<Column>,
    /// Per-point diagnostics shown in the text report only.
    pub extra_columns: Vec<Column>,
    /// Whether the CSV report starts with the axis column.
    pub csv_axis: bool,
    /// Scalar results, in report order.
    pub summary: Vec<(String, f64)>,
    pub artifacts: Vec<Artifact>,
}

impl ScanCurve {
    fn new(s: &Scenario, axis_name: &str, axis_values: Vec<f64>) -> Self {
        Self {
            name: s.name.clone(),
            kind: s.kind,
            axis_name: axis_name.to_string(),
            axis_values,
            columns: Vec::new(),
            extra_columns: Vec::new(),
            csv_axis: true,
            summary: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .chain(&self.extra_columns)
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    pub fn artifact(&self, name: &str) -> Option<&str> {
        self.artifacts
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.csv.as_str())
    }

    fn push_column(&mut self, name: &str, values: Vec<f64>) {
        self.columns.push(Column {
            name: name.to_string(),
            values,
        });
    }

    fn push_extra(&mut self, name: &str, values: Vec<f64>) {
        self.extra_columns.push(Column {
            name: name.to_string(),
            values,
        });
    }

    fn push_summary(&mut self, key: &str, value: f64) {
        self.summary.push((key.to_string(), value));
    }

    fn push_artifact(&mut self, name: &str, csv: String) {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            csv,
        });
    }
}

/// Seed of the dark run that accompanies an illuminated run.
pub fn dark_seed(seed: u64) -> u64 {
    seed ^ 0xD1B5_4A32_D192_ED03
}

/// Simulates `n_gates` gates and turns the events into counts.
pub fn simulate_counts(
    s: &Scenario,
    gate: &GateConfig,
    readout: &Readout,
    light: &IlluminationConfig,
    n_gates: u64,
    seed: u64,
) -> Result<Vec<Count>> {
    let events = simulate_events(&s.detector, gate, light, n_gates, seed)?.events;
    counts_from_events(s, &events, gate, readout, n_gates, seed)
}

fn counts_from_events(
    s: &Scenario,
    events: &[AvalancheEvent],
    gate: &GateConfig,
    readout: &Readout,
    n_gates: u64,
    seed: u64,
) -> Result<Vec<Count>> {
    match s.execution_path() {
        ExecutionPath::Fast => fast_counts(events, gate, readout, n_gates),
        ExecutionPath::Full => full_counts(events, gate, readout, n_gates, seed),
    }
}

/// Afterpulse probability from the provenance of counted events: counted
/// afterpulses per counted photon.
pub fn afterpulse_truth(counts: &[Count]) -> f64 {
    let of = |p: Provenance| counts.iter().filter(|c| c.provenance == Some(p)).count();
    of(Provenance::Afterpulse) as f64 / of(Provenance::Photon) as f64
}

fn timestamps(counts: &[Count]) -> Vec<f64> {
    counts.iter().map(|c| c.time).collect()
}

/// Per-gate rates of an illuminated and a dark run, with the laser on
/// gate slot 0.
pub fn gate_statistics(
    period: f64,
    r_ratio: u64,
    illuminated: &[Count],
    n_illuminated: u64,
    dark: &[Count],
    n_dark: u64,
) -> Result<CountStats> {
    // Eight bins per gate; every bin centre lies well inside its slot.
    let bin = period / 8.0;
    let h_ill = build_time_histogram(&timestamps(illuminated), period, r_ratio, bin)?;
    let h_dark = build_time_histogram(&timestamps(dark), period, r_ratio, bin)?;
    count_statistics(&h_ill, &h_dark, r_ratio, n_illuminated, n_dark, 0)
}

/// Longest run of empty bins, wrapping around the end of the histogram.
pub fn longest_empty_run(hist: &TimeHistogram) -> f64 {
    let c = &hist.counts;
    if c.iter().all(|&v| v == 0) {
        return hist.frame_period;
    }
    let n = c.len();
    let start = c.iter().position(|&v| v > 0).expect("non-empty");
    let (mut best, mut run) = (0usize, 0usize);
    for k in 1..=n {
        if c[(start + k) % n] == 0 {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best as f64 * hist.bin_width
}

/// Runs a scenario end to end.
pub fn run_scenario(s: &Scenario) -> Result<ScanCurve> {
    s.validate()?;
    match s.kind {
        ScenarioKind::TraceDemo => trace_demo(s),
        ScenarioKind::DelayScan => delay_scan(s),
        ScenarioKind::BiasScan => bias_scan(s),
        ScenarioKind::FluxSweep => flux_sweep(s),
        ScenarioKind::DetuningScan => detuning_scan(s),
        ScenarioKind::DarkRun => dark_run(s),
    }
}

/// Waveform set and visibility figures around one injected avalanche.
fn trace_demo(s: &Scenario) -> Result<ScanCurve> {
    let mut curve = ScanCurve::new(s, "", Vec::new());
    let t = s.trace;
    let event = AvalancheEvent {
        gate_index: t.avalanche_gate,
        time_in_gate: t.avalanche_time,
        charge: t.avalanche_charge,
        provenance: Provenance::Photon,
    };
    let traces = render_traces(&[event], &s.gate, &s.readout, 0, t.n_gates, s.seed)?;
    let quiet = render_traces(&[], &s.gate, &s.readout, 0, t.n_gates, s.seed)?;
    let supp = suppression_ratio_db(&quiet.raw, &quiet.differenced);

    let period = s.gate.period();
    let t_event = event.absolute_time(period);
    let d = &traces.differenced;
    let diff_peak = (0..d.len())
        .filter(|&i| (t_event..t_event + 0.5 * period).contains(&d.time_at(i)))
        .map(|i| d.samples()[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let disc = s.readout.discriminator_for(&s.gate);
    let diff_counts = discriminate(d, &disc)?.len();
    let cap_peak = quiet.capacitive.peak_abs();
    let aval_peak = s.readout.pulse.amplitude_per_charge * t.avalanche_charge;

    // Without the differencer, a threshold must clear the capacitive
    // transient; find how much larger an avalanche has to be to cross it
    // when it lands on the transient's deepest trough.
    let raw_threshold = quiet.raw.max() + 6.0 * s.readout.noise_rms;
    let raw_scale = raw_min_scale(s, &quiet.raw, raw_threshold)?;

    curve.push_summary("capacitive_peak_v", cap_peak);
    curve.push_summary("avalanche_peak_v", aval_peak);
    curve.push_summary("avalanche_to_capacitive", aval_peak / cap_peak);
    curve.push_summary("residual_peak_v", supp.residual_peak);
    curve.push_summary("suppression_db", supp.capped_db());
    curve.push_summary("differenced_avalanche_peak_v", diff_peak);
    curve.push_summary("threshold_v", s.readout.threshold);
    curve.push_summary("peak_over_threshold", diff_peak / s.readout.threshold);
    curve.push_summary("differenced_counts", diff_counts as f64);
    curve.push_summary("raw_threshold_v", raw_threshold);
    curve.push_summary("raw_min_avalanche_scale", raw_scale);

    curve.push_artifact("drive", traces.drive.to_csv());
    curve.push_artifact("raw", traces.raw.to_csv());
    curve.push_artifact("shifted", traces.shifted.to_csv());
    curve.push_artifact("numeric_difference", traces.numeric_difference.to_csv());
    curve.push_artifact("differenced", traces.differenced.to_csv());
    Ok(curve)
}

/// Smallest multiple of a unit avalanche, placed at the trough of the
/// capacitive response, that a raw-trace discriminator at `threshold`
/// registers.
fn raw_min_scale(s: &Scenario, quiet_raw: &WaveformBuffer, threshold: f64) -> Result<f64> {
    let gate = &s.gate;
    let period = gate.period();
    let n_gates = s.trace.n_gates;
    // Trough inside the avalanche gate, where the response is settled.
    let g = s.trace.avalanche_gate;
    let (lo, hi) = (g as f64 * period, (g + 1) as f64 * period);
    let trough = (0..quiet_raw.len())
        .filter(|&i| (lo..hi).contains(&quiet_raw.time_at(i)))
        .min_by(|&a, &b| quiet_raw.samples()[a].total_cmp(&quiet_raw.samples()[b]))
        .map(|i| quiet_raw.time_at(i))
        .unwrap_or(lo);
    let start = (trough - s.readout.pulse.peak_delay()).max(lo);
    let event = AvalancheEvent {
        gate_index: g,
        time_in_gate: start - lo,
        charge: s.detector.mean_avalanche_charge,
        provenance: Provenance::Photon,
    };
    let unit = render_traces(&[event], gate, &s.readout, 0, n_gates, s.seed)?.avalanches;
    let cfg = DiscriminatorConfig {
        threshold,
        dead_time: 0.0,
        polarity: s.readout.polarity,
        acceptance: None,
    };
    let fires = |k: f64| -> Result<bool> {
        let trace = quiet_raw.add(&unit.scaled(k))?;
        Ok(!discriminate(&trace, &cfg)?.is_empty())
    };
    if fires(1.0)? {
        return Ok(1.0);
    }
    let mut hi_k = 2.0;
    while !fires(hi_k)? {
        hi_k *= 2.0;
        ensure(
            hi_k < 1e9,
            "avalanche_amplitude",
            "raw trace never crosses threshold",
        )?;
    }
    let mut lo_k = hi_k / 2.0;
    while hi_k - lo_k > 1e-4 * hi_k {
        let mid = 0.5 * (lo_k + hi_k);
        if fires(mid)? {
            hi_k = mid;
        } else {
            lo_k = mid;
        }
    }
    Ok(hi_k)
}

fn delay_scan(s: &Scenario) -> Result<ScanCurve> {
    let sweep = s.sweep.expect("delay scan always has an axis");
    let axis = sweep.values();
    let mut curve = ScanCurve::new(s, "pulse_delay_s", axis.clone());
    let gate = &s.gate;
    let period = gate.period();
    let r = s.light.sync_divisor;
    let n_dark = s.dark_gates.unwrap_or(s.n_gates);
    let dark = simulate_counts(
        s,
        gate,
        &s.readout,
        &IlluminationConfig::dark(r),
        n_dark,
        dark_seed(s.seed),
    )?;
    let mut i_ph = Vec::with_capacity(axis.len());
    for &delay in &axis {
        let light = IlluminationConfig {
            pulse_delay: delay,
            ..s.light
        };
        let counts = simulate_counts(s, gate, &s.readout, &light, s.n_gates, s.seed)?;
        let st = gate_statistics(period, r, &counts, s.n_gates, &dark, n_dark)?;
        i_ph.push(st.i_ph);
    }
    let p_d = dark.len() as f64 / n_dark as f64;
    let laser_rate = gate.gating_frequency / r as f64;
    curve.push_column("counts_per_pulse", i_ph.clone());
    curve.push_column(
        "count_rate_hz",
        i_ph.iter().map(|v| v * laser_rate).collect(),
    );
    curve.push_column("dark_rate_hz", vec![p_d * laser_rate; axis.len()]);

    let best = i_ph
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > i_ph[b] { i } else { b });
    curve.push_summary("gate_period_s", period);
    curve.push_summary("peak_delay_s", axis[best]);
    curve.push_summary("peak_fwhm_s", curve_fwhm(&axis, &i_ph)?);

    // Timing histogram at the best delay.
    let light = IlluminationConfig {
        pulse_delay: axis[best],
        ..s.light
    };
    let n_hist = s.histogram_gates.unwrap_or(s.n_gates);
    let counts = simulate_counts(s, gate, &s.readout, &light, n_hist, s.seed)?;
    let ts = timestamps(&counts);
    let frame = build_time_histogram(&ts, period, r, s.bin_width)?;
    let folded = build_time_histogram(&ts, period, 1, s.bin_width)?;
    curve.push_summary("histogram_illuminated_gates", n_hist.div_ceil(r) as f64);
    curve.push_summary("histogram_counts", ts.len() as f64);
    curve.push_summary("jitter_fwhm_s", fwhm(&frame)?);
    curve.push_summary("max_empty_gap_s", longest_empty_run(&folded));
    curve.push_artifact("histogram", frame.to_csv());
    curve.push_artifact("gate_histogram", folded.to_csv());
    Ok(curve)
}

/// Efficiency, afterpulse and dark figures of one bias point.
struct BiasPoint {
    eta: f64,
    p_a: f64,
    p_a_std_error: f64,
    p_a_truth: f64,
    p_d: f64,
}

fn measure_point(s: &Scenario, gate: &GateConfig, readout: &Readout) -> Result<BiasPoint> {
    let r = s.light.sync_divisor;
    let n_dark = s.dark_gates.unwrap_or(s.n_gates);
    let ill = simulate_counts(s, gate, readout, &s.light, s.n_gates, s.seed)?;
    let dark = simulate_counts(
        s,
        gate,
        readout,
        &IlluminationConfig::dark(r),
        n_dark,
        dark_seed(s.seed),
    )?;
    let st = gate_statistics(gate.period(), r, &ill, s.n_gates, &dark, n_dark)?;
    let ap = afterpulse_probability(&st)?;
    Ok(BiasPoint {
        eta: net_efficiency(&st, s.light.mean_photons_per_pulse)?,
        p_a: ap.value,
        p_a_std_error: ap.std_error,
        p_a_truth: afterpulse_truth(&ill),
        p_d: st.i_d,
    })
}

fn bias_scan(s: &Scenario) -> Result<ScanCurve> {
    let axis = s.sweep.expect("validated").values();
    let mut curve = ScanCurve::new(s, "dc_bias_v", axis.clone());
    curve.csv_axis = false;
    let mut points = Vec::with_capacity(axis.len());
    for &dc in &axis {
        let gate = GateConfig {
            dc_bias: dc,
            ..s.gate
        };
        points.push(measure_point(s, &gate, &s.readout)?);
    }
    let col = |f: fn(&BiasPoint) -> f64| points.iter().map(f).collect::<Vec<_>>();
    curve.push_column("eta", col(|p| p.eta));
    curve.push_column("p_a", col(|p| p.p_a));
    curve.push_column("p_d", col(|p| p.p_d));
    curve.push_column("frequency_hz", vec![s.gate.gating_frequency; axis.len()]);
    curve.push_extra("p_a_std_error", col(|p| p.p_a_std_error));
    curve.push_extra("p_a_truth", col(|p| p.p_a_truth));
    curve.push_extra(
        "overbias_v",
        axis.iter()
            .map(|&dc| {
                GateConfig {
                    dc_bias: dc,
                    ..s.gate
                }
                .overbias()
            })
            .collect(),
    );

    if let Some(target) = s.operating_dc_bias {
        let k = nearest(&axis, target);
        let p = &points[k];
        curve.push_summary("operating_dc_bias_v", axis[k]);
        curve.push_summary("operating_eta", p.eta);
        curve.push_summary("operating_p_a", p.p_a);
        curve.push_summary("operating_p_d", p.p_d);
        if p.p_d > 0.0 {
            let m = figure_of_merit(p.eta, p.p_d, 1.0 / s.readout.dead_time)?;
            curve.push_summary("eta_over_p_d", m.figure_of_merit);
            curve.push_summary("max_count_rate_hz", m.max_count_rate);
        }
    }
    Ok(curve)
}

fn nearest(axis: &[f64], target: f64) -> usize {
    axis.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .map(|(i, _)| i)
        .expect("non-empty axis")
}

fn flux_sweep(s: &Scenario) -> Result<ScanCurve> {
    let axis = s.sweep.expect("validated").values();
    let mut curve = ScanCurve::new(s, "photon_flux_hz", axis.clone());
    let gate = &s.gate;
    let f = gate.gating_frequency;
    let period = gate.period();
    let r = s.light.sync_divisor;
    let laser_rate = f / r as f64;

    let n_dark = s.dark_gates.unwrap_or(s.n_gates);
    let dark = simulate_counts(
        s,
        gate,
        &s.readout,
        &IlluminationConfig::dark(r),
        n_dark,
        dark_seed(s.seed),
    )?;
    let dark_time = n_dark as f64 * period;
    let dark_rate = dark.len() as f64 / dark_time;

    // Longest stretch of gates one count can block.
    let blocked = (s.readout.dead_time / period).ceil();
    let (mut net, mut raw, mut gates) = (Vec::new(), Vec::new(), Vec::new());
    for &flux in &axis {
        let light = IlluminationConfig {
            mean_photons_per_pulse: flux / laser_rate,
            ..s.light
        };
        let n = match s.target_counts {
            Some(target) => {
                let st = GateStatistics::new(&s.detector, gate, &light);
                let p =
                    st.photon_click_probability() / r as f64 + st.spontaneous_click_probability();
                let per_gate = p / (1.0 + blocked * p);
                ((target as f64 / per_gate).ceil() as u64).clamp(1000, s.n_gates)
            }
            None => s.n_gates,
        };
        let counts = simulate_counts(s, gate, &s.readout, &light, n, s.seed)?;
        let rate = counts.len() as f64 / (n as f64 * period);
        raw.push(rate);
        net.push(rate - dark_rate);
        gates.push(n as f64);
    }
    let points: Vec<(f64, f64)> = axis.iter().copied().zip(net.iter().copied()).collect();
    let lin = linearity_analysis(&points)?;
    curve.push_column("count_rate_hz", net);
    curve.push_column("raw_count_rate_hz", raw);
    curve.push_column("gates", gates);
    curve.push_summary("dark_rate_hz", dark_rate);
    curve.push_summary("dark_rate_sigma_hz", (dark.len() as f64).sqrt() / dark_time);
    curve.push_summary("dark_p_d", dark.len() as f64 / n_dark as f64);
    curve.push_summary("slope", lin.slope);
    curve.push_summary("dynamic_range_db", lin.dynamic_range_db);
    curve.push_summary("sublinear_onset_hz", lin.sublinear_onset);
    curve.push_summary("dead_time_s", lin.dead_time);
    curve.push_summary("saturation_rate_hz", lin.saturation_rate);
    Ok(curve)
}

fn detuning_scan(s: &Scenario) -> Result<ScanCurve> {
    let axis = s.sweep.expect("validated").values();
    let mut curve = ScanCurve::new(s, "frequency_offset", axis.clone());
    // The delay line and the digitiser stay tuned to the nominal gate.
    let mut readout = s.readout;
    readout.differencer = s.readout.differencer_for(&s.gate);
    readout.sample_rate = Some(s.readout.sample_rate_for(&s.gate));
    let (mut freq, mut supp, mut eta, mut p_a) = (vec![], vec![], vec![], vec![]);
    let mut saturated = 0;
    for &offset in &axis {
        let gate = GateConfig {
            gating_frequency: s.gate.gating_frequency * (1.0 + offset),
            ..s.gate
        };
        let quiet = render_traces(&[], &gate, &readout, 0, 16, s.seed)?;
        supp.push(suppression_ratio_db(&quiet.raw, &quiet.differenced).capped_db());
        freq.push(gate.gating_frequency);
        // Sparse rendering assumes the residual alone never fires the
        // discriminator; when it does, every gate would count.
        let disc = readout.discriminator_for(&gate);
        if !discriminate(&quiet.differenced, &disc)?.is_empty() {
            saturated += 1;
            eta.push(f64::NAN);
            p_a.push(f64::NAN);
            continue;
        }
        let p = measure_point(s, &gate, &readout)?;
        eta.push(p.eta);
        p_a.push(p.p_a);
    }
    let k = nearest(&axis, 0.0);
    curve.push_column("gating_frequency_hz", freq);
    curve.push_column("suppression_db", supp.clone());
    curve.push_column("eta", eta);
    curve.push_column("p_a", p_a);
    curve.push_summary("matched_suppression_db", supp[k]);
    curve.push_summary("residual_saturated_points", saturated as f64);
    Ok(curve)
}

fn dark_run(s: &Scenario) -> Result<ScanCurve> {
    let mut curve = ScanCurve::new(s, "", Vec::new());
    let r = s.light.sync_divisor;
    let period = s.gate.period();
    let counts = simulate_counts(
        s,
        &s.gate,
        &s.readout,
        &IlluminationConfig::dark(r),
        s.n_gates,
        s.seed,
    )?;
    let n = counts.len() as f64;
    let time = s.n_gates as f64 * period;
    let hist = build_time_histogram(&timestamps(&counts), period, r, s.bin_width)?;
    curve.push_summary("gates", s.n_gates as f64);
    curve.push_summary("counts", n);
    curve.push_summary("p_d", n / s.n_gates as f64);
    curve.push_summary("dark_rate_hz", n / time);
    curve.push_summary("dark_rate_sigma_hz", n.sqrt() / time);
    curve.push_artifact("histogram", hist.to_csv());
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_wraps_around() {
        let h = TimeHistogram {
            bin_width: 1.0,
            origin: 0.0,
            counts: vec![0, 0, 3, 1, 0, 0, 0],
            frame_period: 7.0,
        };
        assert_eq!(longest_empty_run(&h), 5.0);
    }

    #[test]
    fn dark_run_reports_rates() {
        let s = Scenario::parse("[scenario]\nkind = dark_run\nn_gates = 1e6\n").unwrap();
        let c = run_scenario(&s).unwrap();
        let n = c.summary_value("counts").unwrap();
        let rate = c.summary_value("dark_rate_hz").unwrap();
        assert!((rate - n * s.gate.gating_frequency / 1e6).abs() < 1e-6 * rate.max(1.0));
        assert!(c
            .artifact("histogram")
            .unwrap()
            .starts_with("bin_start_s,count\n"));
    }
}
