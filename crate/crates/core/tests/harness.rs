use std::path::PathBuf;
use std::process::Command;

use selfdiff::apd::{AvalancheEvent, GateStatistics, IlluminationConfig, Provenance};
use selfdiff::harness::{
    charge_threshold, emit_report, render_csv, run_scenario, ExecutionPath, ReportFormat, Scenario,
    ScenarioKind, Sweep,
};
use selfdiff::readout::{discriminate, self_difference, suppression_ratio_db};
use selfdiff::waveform::{
    capacitive_response, compose_with_stream, render_avalanche_window, synthesize_drive,
};

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.scn"))
}

fn load(name: &str) -> Scenario {
    Scenario::from_file(&scenario_path(name)).unwrap()
}

fn small_delay_scan() -> Scenario {
    let mut s = load("delay_scan");
    s.n_gates = 640_000;
    s.histogram_gates = Some(640_000);
    s.sweep = Some(Sweep {
        steps: 9,
        ..s.sweep.unwrap()
    });
    s
}

#[test]
fn same_scenario_and_seed_give_identical_files() {
    let s = small_delay_scan();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = emit_report(&run_scenario(&s).unwrap(), ReportFormat::Csv, a.path()).unwrap();
    let fb = emit_report(&run_scenario(&s).unwrap(), ReportFormat::Csv, b.path()).unwrap();
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn descending_axis_keeps_its_order() {
    let mut s = small_delay_scan();
    let sweep = s.sweep.unwrap();
    s.sweep = Some(Sweep {
        start: sweep.stop,
        stop: sweep.start,
        ..sweep
    });
    let curve = run_scenario(&s).unwrap();
    assert_eq!(curve.axis_values, s.sweep.unwrap().values());
    assert!(curve.axis_values.windows(2).all(|w| w[0] > w[1]));
    let csv = render_csv(&curve);
    let first: f64 = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(first, curve.axis_values[0]);
}

#[test]
fn trace_demo_matches_manual_composition() {
    let s = load("trace_demo");
    let curve = run_scenario(&s).unwrap();

    let gate = s.gate;
    let r = s.readout;
    let fs = r.sample_rate_for(&gate);
    let period = gate.period();
    let n = (s.trace.n_gates as f64 * period * fs).round() as usize;
    let drive = synthesize_drive(&gate, fs, 0, n, Some(r.drive_rise_time)).unwrap();
    let cap = capacitive_response(&drive, &r.capacitive).unwrap();
    let event = AvalancheEvent {
        gate_index: s.trace.avalanche_gate,
        time_in_gate: s.trace.avalanche_time,
        charge: s.trace.avalanche_charge,
        provenance: Provenance::Photon,
    };
    let none = render_avalanche_window(&[], &r.pulse, period, fs, 0.0, n).unwrap();
    let one = render_avalanche_window(&[event], &r.pulse, period, fs, 0.0, n).unwrap();
    let diff = r.differencer_for(&gate);
    let quiet_raw = compose_with_stream(&cap, &none, r.noise_rms, s.seed, 0).unwrap();
    let quiet = self_difference(&quiet_raw, &diff).unwrap();
    let raw = compose_with_stream(&cap, &one, r.noise_rms, s.seed, 0).unwrap();
    let out = self_difference(&raw, &diff).unwrap();

    let supp = suppression_ratio_db(&quiet_raw, &quiet);
    let counts = discriminate(&out, &r.discriminator_for(&gate)).unwrap();
    assert_eq!(
        curve.summary_value("suppression_db"),
        Some(supp.suppression_db)
    );
    assert_eq!(
        curve.summary_value("residual_peak_v"),
        Some(supp.residual_peak)
    );
    assert_eq!(
        curve.summary_value("capacitive_peak_v"),
        Some(cap.peak_abs())
    );
    assert_eq!(
        curve.summary_value("differenced_counts"),
        Some(counts.len() as f64)
    );
    assert_eq!(curve.artifact("differenced"), Some(out.to_csv().as_str()));
}

#[test]
fn noiseless_flux_sweep_without_dead_time_is_linear() {
    let mut s = load("flux_sweep");
    s.detector.dark_carrier_rate = 0.0;
    s.detector.trap_capture_per_charge = 0.0;
    s.readout.dead_time = 0.0;
    s.readout.noise_rms = 0.0;
    s.n_gates = 20_000_000_000;
    s.dark_gates = Some(1_000_000);
    s.target_counts = Some(200_000);
    // Mean photon numbers from 1e-4 to 1e-2 per gate.
    let f = s.gate.gating_frequency;
    s.sweep = Some(Sweep {
        start: 1e-4 * f,
        stop: 1e-2 * f,
        steps: 11,
        ..s.sweep.unwrap()
    });
    let curve = run_scenario(&s).unwrap();
    assert!(curve
        .summary_value("sublinear_onset_hz")
        .unwrap()
        .is_infinite());
    assert_eq!(curve.summary_value("dark_rate_hz"), Some(0.0));

    let light = IlluminationConfig {
        mean_photons_per_pulse: 1.0,
        ..s.light
    };
    // Photons that trigger, times the share of exponential charges that
    // clear the discriminator.
    let q_th = charge_threshold(&s.readout);
    let eta = GateStatistics::new(&s.detector, &s.gate, &light).photon_mean
        * (-q_th / s.detector.mean_avalanche_charge).exp();
    let slope = curve.summary_value("slope").unwrap();

    // Poisson error of the lowest-decade fit. All points share a seed, so
    // the errors add linearly.
    let x = &curve.axis_values;
    let rates = curve.column("count_rate_hz").unwrap();
    let gates = curve.column("gates").unwrap();
    let (mut sd, mut sxx) = (0.0, 0.0);
    for i in (0..x.len()).filter(|&i| x[i] <= 10.0 * x[0] * (1.0 + 1e-12)) {
        let time = gates[i] / f;
        sd += x[i] * (rates[i] / time).sqrt();
        sxx += x[i] * x[i];
    }
    let sigma = sd / sxx;
    assert!(
        (slope - eta).abs() < 3.0 * sigma,
        "slope {slope}, expected {eta} +- {sigma}"
    );
}

#[test]
fn detuning_defaults_to_the_full_path() {
    let s = load("detuning_scan");
    assert_eq!(s.kind, ScenarioKind::DetuningScan);
    assert_eq!(s.execution_path(), ExecutionPath::Full);
    assert_eq!(load("bias_scan").execution_path(), ExecutionPath::Fast);
}

#[test]
fn cli_runs_a_scenario_and_rejects_a_broken_one() {
    let exe = env!("CARGO_BIN_EXE_selfdiff");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(exe)
        .args([
            "run",
            scenario_path("dark_run").to_str().unwrap(),
            "--format",
            "text",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let report = std::fs::read_to_string(dir.path().join("dark_run.txt")).unwrap();
    assert!(report.starts_with("scenario=dark_run\nkind=dark_run\n"));

    let bad = dir.path().join("bad.scn");
    std::fs::write(
        &bad,
        "[scenario]\nkind = bias_scan\n[gate]\nduty_cycle = 1.5\n",
    )
    .unwrap();
    let out = Command::new(exe).arg("run").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = Command::new(exe)
        .args([
            "trace",
            scenario_path("trace_demo").to_str().unwrap(),
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("trace_demo_differenced.csv").exists());
}
