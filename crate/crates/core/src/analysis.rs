//! Counting statistics: timing histograms, FWHM, afterpulse, efficiency and
//! dark-count estimators, linearity and figures of merit.

use std::fmt::Write as _;

use crate::error::{ensure, Error, Result};

/// Timestamps folded modulo a frame of `r_ratio` gate periods.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeHistogram {
    pub bin_width: f64,
    /// Time mapped to the left edge of bin 0.
    pub origin: f64,
    pub counts: Vec<u64>,
    pub frame_period: f64,
}

impl TimeHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_start(&self, bin: usize) -> f64 {
        self.origin + bin as f64 * self.bin_width
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        self.bin_start(bin) + 0.5 * self.bin_width
    }

    /// CSV with header `bin_start_s,count`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start_s,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{:.8e},{}", self.bin_start(i), c);
        }
        s
    }
}

/// Folds `timestamps` into a histogram spanning `r_ratio * gate_period`.
///
/// ```
/// use selfdiff::analysis::build_time_histogram;
/// let h = build_time_histogram(&[0.0, 1.0e-9, 3.25e-9], 1.6e-9, 2, 0.1e-9).unwrap();
/// assert_eq!(h.counts.len(), 32);
/// assert_eq!(h.total(), 3);
/// assert_eq!(h.counts[0], 2); // 3.25 ns folds onto 0.05 ns
/// ```
pub fn build_time_histogram(
    timestamps: &[f64],
    gate_period: f64,
    r_ratio: u64,
    bin_width: f64,
) -> Result<TimeHistogram> {
    ensure(gate_period > 0.0, "gate_period", "must be positive")?;
    ensure(bin_width > 0.0, "bin_width", "must be positive")?;
    ensure(r_ratio >= 1, "r_ratio", "must be at least 1")?;
    let frame_period = r_ratio as f64 * gate_period;
    let n_bins = ((frame_period / bin_width).round() as usize).max(1);
    let mut counts = vec![0u64; n_bins];
    for &t in timestamps {
        let phase = t.rem_euclid(frame_period);
        let bin = ((phase / bin_width) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    Ok(TimeHistogram {
        bin_width,
        origin: 0.0,
        counts,
        frame_period,
    })
}

/// Full width at half maximum of the tallest peak.
///
/// Half-maximum crossings are located by linear interpolation between bin
/// centres. When several adjacent bins share the maximum, the outermost
/// crossings of that plateau are used.
pub fn fwhm(hist: &TimeHistogram) -> Result<f64> {
    let c = &hist.counts;
    let max = c.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(Error::EmptyHistogram);
    }
    let first = c.iter().position(|&v| v == max).expect("max exists");
    let mut last = first;
    while last + 1 < c.len() && c[last + 1] == max {
        last += 1;
    }
    let half = max as f64 / 2.0;
    let y = |i: usize| c[i] as f64;
    let w = hist.bin_width;

    let mut i = first;
    while i > 0 && y(i - 1) >= half {
        i -= 1;
    }
    let left = if i == 0 {
        hist.bin_start(0)
    } else {
        let (y0, y1) = (y(i - 1), y(i));
        hist.bin_center(i - 1) + (half - y0) / (y1 - y0) * w
    };

    let mut j = last;
    while j + 1 < c.len() && y(j + 1) >= half {
        j += 1;
    }
    let right = if j + 1 == c.len() {
        hist.bin_start(c.len())
    } else {
        let (y0, y1) = (y(j), y(j + 1));
        hist.bin_center(j) + (y0 - half) / (y0 - y1) * w
    };
    Ok(right - left)
}

/// Full width at half maximum of the tallest peak of a sampled curve.
///
/// Same rules as [`fwhm`] with sample positions `x` (ascending) in place of
/// bin centres; a peak that does not fall to half height before the end of
/// the curve is cut at the end sample.
///
/// ```
/// use selfdiff::analysis::curve_fwhm;
/// let x: Vec<f64> = (0..5).map(f64::from).collect();
/// let w = curve_fwhm(&x, &[0.0, 1.0, 2.0, 1.0, 0.0]).unwrap();
/// assert!((w - 2.0).abs() < 1e-12);
/// ```
pub fn curve_fwhm(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if y.is_empty() || max <= 0.0 {
        return Err(Error::EmptyHistogram);
    }
    let first = y.iter().position(|&v| v == max).expect("max exists");
    let mut last = first;
    while last + 1 < y.len() && y[last + 1] == max {
        last += 1;
    }
    let half = max / 2.0;
    let mut i = first;
    while i > 0 && y[i - 1] >= half {
        i -= 1;
    }
    let left = if i == 0 {
        x[0]
    } else {
        x[i - 1] + (half - y[i - 1]) / (y[i] - y[i - 1]) * (x[i] - x[i - 1])
    };
    let mut j = last;
    while j + 1 < y.len() && y[j + 1] >= half {
        j += 1;
    }
    let right = if j + 1 == y.len() {
        x[j]
    } else {
        x[j] + (y[j] - half) / (y[j] - y[j + 1]) * (x[j + 1] - x[j])
    };
    Ok(right - left)
}

/// Per-gate count rates of an illuminated run and a dark run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountStats {
    /// Counts per illuminated gate.
    pub i_ph: f64,
    /// Counts per non-illuminated gate.
    pub i_ni: f64,
    /// Counts per gate of the dark run.
    pub i_d: f64,
    /// Gates per laser pulse.
    pub r_ratio: u64,
    pub illuminated_gates: u64,
    pub non_illuminated_gates: u64,
    pub dark_gates: u64,
}

/// Gate-slot of histogram bin `bin`, by its centre.
fn slot_of(hist: &TimeHistogram, bin: usize, r_ratio: u64) -> u64 {
    let gate_period = hist.frame_period / r_ratio as f64;
    ((hist.bin_center(bin) / gate_period).floor() as u64).min(r_ratio - 1)
}

/// Per-gate rates from folded histograms.
///
/// `n_gates_illuminated` and `n_gates_dark` are the total gate counts of
/// the illuminated and dark runs, both starting at gate 0. In the
/// illuminated run, gates whose index is congruent to `illuminated_slot`
/// modulo `r_ratio` carry the laser pulse.
pub fn count_statistics(
    hist_illuminated: &TimeHistogram,
    hist_dark: &TimeHistogram,
    r_ratio: u64,
    n_gates_illuminated: u64,
    n_gates_dark: u64,
    illuminated_slot: u64,
) -> Result<CountStats> {
    ensure(r_ratio >= 1, "r_ratio", "must be at least 1")?;
    ensure(
        illuminated_slot < r_ratio,
        "illuminated_slot",
        "must be smaller than r_ratio",
    )?;
    if n_gates_illuminated == 0 {
        return Err(Error::ZeroGateCount("n_gates_illuminated"));
    }
    if n_gates_dark == 0 {
        return Err(Error::ZeroGateCount("n_gates_dark"));
    }
    let illuminated_gates = if n_gates_illuminated > illuminated_slot {
        (n_gates_illuminated - illuminated_slot).div_ceil(r_ratio)
    } else {
        0
    };
    let non_illuminated_gates = n_gates_illuminated - illuminated_gates;
    let (mut on, mut off) = (0u64, 0u64);
    for (bin, &count) in hist_illuminated.counts.iter().enumerate() {
        if slot_of(hist_illuminated, bin, r_ratio) == illuminated_slot {
            on += count;
        } else {
            off += count;
        }
    }
    let rate = |k: u64, n: u64| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(CountStats {
        i_ph: rate(on, illuminated_gates),
        i_ni: rate(off, non_illuminated_gates),
        i_d: rate(hist_dark.total(), n_gates_dark),
        r_ratio,
        illuminated_gates,
        non_illuminated_gates,
        dark_gates: n_gates_dark,
    })
}

/// Afterpulse probability estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AfterpulseEstimate {
    pub value: f64,
    /// Set when the non-illuminated rate fell below the dark rate, making
    /// the estimate negative.
    pub below_dark: bool,
    /// Binomial standard error propagated from the three rates, when the gate
    /// counts are known.
    pub std_error: f64,
}

/// `P_A = (I_NI - I_D) R / (I_Ph - I_NI)`, evaluated as written.
///
/// ```
/// use selfdiff::analysis::{afterpulse_probability, CountStats};
/// let s = CountStats {
///     i_ph: 6.6e-3, i_ni: 1.0e-5, i_d: 2.5e-6, r_ratio: 64,
///     illuminated_gates: 0, non_illuminated_gates: 0, dark_gates: 0,
/// };
/// let p = afterpulse_probability(&s).unwrap();
/// assert!((p.value - 7.5e-6 * 64.0 / 6.59e-3).abs() < 1e-12);
/// ```
pub fn afterpulse_probability(stats: &CountStats) -> Result<AfterpulseEstimate> {
    let CountStats {
        i_ph, i_ni, i_d, ..
    } = *stats;
    if i_ph <= i_ni {
        return Err(Error::NoPhotonSignal { i_ph, i_ni });
    }
    let r = stats.r_ratio as f64;
    let signal = i_ph - i_ni;
    let value = (i_ni - i_d) * r / signal;
    let var = |p: f64, n: u64| {
        if n == 0 {
            0.0
        } else {
            p * (1.0 - p) / n as f64
        }
    };
    // Partial derivatives of the estimator.
    let d_ph = -value / signal;
    let d_ni = (r + value) / signal;
    let d_d = -r / signal;
    let std_error = (d_ph * d_ph * var(i_ph, stats.illuminated_gates)
        + d_ni * d_ni * var(i_ni, stats.non_illuminated_gates)
        + d_d * d_d * var(i_d, stats.dark_gates))
    .sqrt();
    Ok(AfterpulseEstimate {
        value,
        below_dark: i_ni < i_d,
        std_error,
    })
}

/// Net efficiency by Poisson inversion: `-ln(1 - (I_Ph - I_NI)) / mu`.
///
/// ```
/// use selfdiff::analysis::{net_efficiency, CountStats};
/// let s = CountStats {
///     i_ph: 0.01074, i_ni: 0.0, i_d: 0.0, r_ratio: 64,
///     illuminated_gates: 1, non_illuminated_gates: 1, dark_gates: 1,
/// };
/// assert!((net_efficiency(&s, 0.1).unwrap() - 0.108).abs() < 1e-3);
/// ```
pub fn net_efficiency(stats: &CountStats, mu: f64) -> Result<f64> {
    ensure(mu > 0.0, "mu", "must be positive")?;
    let click = stats.i_ph - stats.i_ni;
    if click >= 1.0 {
        return Err(Error::ClickProbabilityOutOfRange(click));
    }
    Ok(-(-click).ln_1p() / mu)
}

/// Small-signal approximation `(I_Ph - I_NI) / mu`.
pub fn net_efficiency_linear(stats: &CountStats, mu: f64) -> Result<f64> {
    ensure(mu > 0.0, "mu", "must be positive")?;
    Ok((stats.i_ph - stats.i_ni) / mu)
}

/// Largest relative deviation from the low-flux fit still counted as linear.
pub const LINEARITY_TOLERANCE: f64 = 0.05;

/// Count rate against photon flux.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearityReport {
    /// `(photon_flux, measured_rate)` sorted by flux.
    pub points: Vec<(f64, f64)>,
    /// Slope of the fit through the origin over the lowest flux decade.
    pub slope: f64,
    /// Flux span, from the lowest point, within tolerance of the fit.
    pub dynamic_range_db: f64,
    /// Asymptotic rate of the dead-time fit; infinite when no saturation is
    /// seen.
    pub saturation_rate: f64,
    /// Dead time of the fit.
    pub dead_time: f64,
    /// First measured rate outside tolerance; infinite when none is.
    pub sublinear_onset: f64,
}

/// Linear fit on the lowest decade, tolerance span and dead-time fit.
///
/// The dead-time fit keeps the low-flux slope `a` and finds `tau` in
/// `rate = a x / (1 + a x tau)` by least squares on `1/rate - 1/(a x)`
/// weighted by `rate^2`.
pub fn linearity_analysis(points: &[(f64, f64)]) -> Result<LinearityReport> {
    if points.len() < 5 {
        return Err(Error::TooFewPoints(points.len()));
    }
    ensure(
        points
            .iter()
            .all(|&(f, r)| f > 0.0 && f.is_finite() && r.is_finite()),
        "points",
        "fluxes must be positive and rates finite",
    )?;
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let f_min = pts[0].0;
    let f_max = pts[pts.len() - 1].0;
    let span_db = 10.0 * (f_max / f_min).log10();
    if span_db < 10.0 {
        return Err(Error::FluxSpanTooNarrow(span_db));
    }
    let decade: Vec<_> = pts
        .iter()
        .filter(|p| p.0 <= 10.0 * f_min * (1.0 + 1e-12))
        .collect();
    let sxy: f64 = decade.iter().map(|p| p.0 * p.1).sum();
    let sxx: f64 = decade.iter().map(|p| p.0 * p.0).sum();
    let slope = sxy / sxx;

    let deviation = |&(f, r): &(f64, f64)| ((r - slope * f) / (slope * f)).abs();
    let first_bad = pts.iter().position(|p| deviation(p) > LINEARITY_TOLERANCE);
    let (dynamic_range_db, sublinear_onset) = match first_bad {
        None => (span_db, f64::INFINITY),
        Some(0) => (0.0, pts[0].1),
        Some(k) => (10.0 * (pts[k - 1].0 / f_min).log10(), pts[k].1),
    };

    let (mut num, mut den) = (0.0, 0.0);
    for &(f, m) in &pts {
        if m > 0.0 {
            num += m * m * (1.0 / m - 1.0 / (slope * f));
            den += m * m;
        }
    }
    let mut dead_time = if den > 0.0 { num / den } else { 0.0 };
    // Rounding noise on exactly linear data is not saturation.
    let top_rate = pts.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
    if dead_time * top_rate < 1e-9 {
        dead_time = 0.0;
    }
    let saturation_rate = if dead_time > 0.0 {
        1.0 / dead_time
    } else {
        f64::INFINITY
    };
    Ok(LinearityReport {
        points: pts,
        slope,
        dynamic_range_db,
        saturation_rate,
        dead_time,
        sublinear_onset,
    })
}

/// Fraction of a uniform background rejected by an active window of
/// `active_fwhm` in each `gate_period`.
///
/// ```
/// use selfdiff::analysis::background_rejection;
/// assert!((background_rejection(170e-12, 1.6e-9) - 0.894).abs() < 1e-3);
/// ```
pub fn background_rejection(active_fwhm: f64, gate_period: f64) -> f64 {
    1.0 - active_fwhm / gate_period
}

/// Headline figures of a detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorMetrics {
    pub eta: f64,
    /// Afterpulse probability, when measured.
    pub p_a: Option<f64>,
    /// Dark count probability per gate.
    pub p_d: f64,
    /// `eta / p_d`.
    pub figure_of_merit: f64,
    /// Maximum count rate (Hz).
    pub max_count_rate: f64,
}

impl DetectorMetrics {
    pub fn with_afterpulse(self, p_a: f64) -> Self {
        Self {
            p_a: Some(p_a),
            ..self
        }
    }
}

/// `eta / p_d` with the inputs passed through.
///
/// ```
/// use selfdiff::analysis::figure_of_merit;
/// let m = figure_of_merit(0.012, 7e-6, 15e6).unwrap();
/// assert!((m.figure_of_merit - 1714.2857).abs() < 1e-3);
/// ```
pub fn figure_of_merit(eta: f64, p_d: f64, max_rate: f64) -> Result<DetectorMetrics> {
    if p_d == 0.0 {
        return Err(Error::ZeroDarkProbability);
    }
    ensure(p_d > 0.0, "p_d", "must be positive")?;
    Ok(DetectorMetrics {
        eta,
        p_a: None,
        p_d,
        figure_of_merit: eta / p_d,
        max_count_rate: max_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn hist(counts: Vec<u64>, bin_width: f64) -> TimeHistogram {
        TimeHistogram {
            bin_width,
            origin: 0.0,
            frame_period: counts.len() as f64 * bin_width,
            counts,
        }
    }

    #[test]
    fn empty_and_origin_histograms() {
        let h = build_time_histogram(&[], 1.6e-9, 64, 10e-12).unwrap();
        assert_eq!(h.total(), 0);
        assert!((h.counts.len() as f64 * h.bin_width - h.frame_period).abs() <= h.bin_width);
        let h = build_time_histogram(&[0.0], 1.6e-9, 64, 10e-12).unwrap();
        assert_eq!(h.counts[0], 1);
    }

    #[test]
    fn fwhm_of_empty_is_error() {
        assert!(matches!(
            fwhm(&hist(vec![0; 10], 1.0)),
            Err(Error::EmptyHistogram)
        ));
    }

    #[test]
    fn fwhm_of_rectangle() {
        let mut c = vec![0u64; 200];
        c[50..150].iter_mut().for_each(|v| *v = 40);
        let w = fwhm(&hist(c, 1.0)).unwrap();
        assert!((w - 100.0).abs() <= 1.0, "{w}");
    }

    #[test]
    fn fwhm_of_gaussian_samples() {
        let sigma = 23.35e-12;
        let normal = Normal::new(500e-12, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ts: Vec<f64> = (0..1_000_000).map(|_| normal.sample(&mut rng)).collect();
        let h = build_time_histogram(&ts, 1e-9, 1, 2e-12).unwrap();
        let w = fwhm(&h).unwrap();
        assert!((w - 55e-12).abs() < 2e-12, "{w}");
    }

    #[test]
    fn fwhm_scale_invariant() {
        let c: Vec<u64> = vec![0, 1, 4, 9, 12, 9, 5, 1, 0];
        let a = fwhm(&hist(c.clone(), 1.0)).unwrap();
        let b = fwhm(&hist(c.iter().map(|v| v * 7).collect(), 1.0)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn count_statistics_slots() {
        // Frame of 4 gates, one bin per gate.
        let ill = hist(vec![30, 2, 0, 1], 1.0);
        let dark = hist(vec![1, 0, 0, 1], 1.0);
        let s = count_statistics(&ill, &dark, 4, 400, 1000, 0).unwrap();
        assert_eq!(s.illuminated_gates, 100);
        assert_eq!(s.non_illuminated_gates, 300);
        assert!((s.i_ph - 0.3).abs() < 1e-15);
        assert!((s.i_ni - 0.01).abs() < 1e-15);
        assert!((s.i_d - 0.002).abs() < 1e-15);
        let zero = hist(vec![0; 4], 1.0);
        let s = count_statistics(&zero, &zero, 4, 400, 400, 0).unwrap();
        assert_eq!((s.i_ph, s.i_ni, s.i_d), (0.0, 0.0, 0.0));
        assert!(matches!(
            count_statistics(&zero, &zero, 4, 0, 400, 0),
            Err(Error::ZeroGateCount(_))
        ));
    }

    fn stats(i_ph: f64, i_ni: f64, i_d: f64) -> CountStats {
        CountStats {
            i_ph,
            i_ni,
            i_d,
            r_ratio: 64,
            illuminated_gates: 1000,
            non_illuminated_gates: 63_000,
            dark_gates: 64_000,
        }
    }

    #[test]
    fn eq1_edge_cases() {
        assert_eq!(
            afterpulse_probability(&stats(0.01, 1e-5, 1e-5))
                .unwrap()
                .value,
            0.0
        );
        let neg = afterpulse_probability(&stats(0.01, 1e-6, 1e-5)).unwrap();
        assert!(neg.value < 0.0 && neg.below_dark);
        assert!(matches!(
            afterpulse_probability(&stats(1e-5, 1e-5, 0.0)),
            Err(Error::NoPhotonSignal { .. })
        ));
    }

    #[test]
    fn efficiency_inversion() {
        assert_eq!(net_efficiency(&stats(0.01, 0.01, 0.0), 0.1).unwrap(), 0.0);
        assert!(matches!(
            net_efficiency(&stats(1.0, 0.0, 0.0), 0.1),
            Err(Error::ClickProbabilityOutOfRange(_))
        ));
        let s = stats(0.015, 0.0, 0.0);
        let exact = net_efficiency(&s, 0.1).unwrap();
        let lin = net_efficiency_linear(&s, 0.1).unwrap();
        assert!((exact / lin - 1.0).abs() < 0.01);
    }

    fn log_points(n: usize, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let x = lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
                (x, f(x))
            })
            .collect()
    }

    #[test]
    fn linear_data_spans_everything() {
        let pts = log_points(20, 1e3, 1e8, |x| 0.1 * x);
        let r = linearity_analysis(&pts).unwrap();
        assert!((r.dynamic_range_db - 50.0).abs() < 1e-9);
        assert!(r.saturation_rate.is_infinite());
        assert!(r.sublinear_onset.is_infinite());
    }

    #[test]
    fn dead_time_curve_saturates_at_inverse_tau() {
        let tau = 10e-9;
        let pts = log_points(30, 1e3, 1e11, |x| 0.1 * x / (1.0 + 0.1 * x * tau));
        let r = linearity_analysis(&pts).unwrap();
        assert!((r.saturation_rate / 1e8 - 1.0).abs() < 0.02);
        assert!(r.saturation_rate >= r.sublinear_onset);
    }

    #[test]
    fn linearity_preconditions() {
        assert!(matches!(
            linearity_analysis(&[(1.0, 1.0); 4]),
            Err(Error::TooFewPoints(4))
        ));
        let narrow = log_points(6, 1.0, 5.0, |x| x);
        assert!(matches!(
            linearity_analysis(&narrow),
            Err(Error::FluxSpanTooNarrow(_))
        ));
    }

    #[test]
    fn rejection_limits() {
        assert_eq!(background_rejection(0.8e-9, 1.6e-9), 0.5);
        assert_eq!(background_rejection(0.0, 1.6e-9), 1.0);
    }

    #[test]
    fn merit_requires_dark_counts() {
        assert!(matches!(
            figure_of_merit(0.1, 0.0, 1.0),
            Err(Error::ZeroDarkProbability)
        ));
        assert_eq!(figure_of_merit(0.2, 0.2, 1.0).unwrap().figure_of_merit, 1.0);
    }
}
