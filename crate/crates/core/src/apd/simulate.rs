//! Gate-by-gate Monte Carlo generator.
//!
//! Spontaneous sources (photons, background, dark carriers) are independent
//! between gates, so their occurrences are drawn by skipping geometrically
//! over blocks of gates instead of visiting every gate. Only gates that hold
//! at least one candidate, or a pending trap release, are examined. The cost
//! of a run therefore scales with the number of avalanches, not gates.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

use super::params::{AvalancheEvent, DetectorParams, GateConfig, IlluminationConfig, Provenance};
use super::trap::{split_release_delay, TrapLedger};
use super::window::{ActiveWindow, TimeDensity};
use crate::error::{Error, Result};
use crate::rng::{open01, Stream, SubstreamRng};

/// Gates per occurrence block. Fixed so that results do not depend on how
/// many gates are simulated or how the range is split between threads.
const BLOCK_GATES: u64 = 1 << 16;

/// Result of [`simulate_gates`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationOutput {
    /// Avalanches in gate order, at most one per gate.
    pub events: Vec<AvalancheEvent>,
    pub ledger: TrapLedger,
    /// Set when the gate peak never exceeds breakdown; `events` is then empty.
    pub below_breakdown: bool,
}

/// Expected per-gate source strengths for a configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateStatistics {
    /// `eta / eta_max` at the gate overbias.
    pub trigger_fraction: f64,
    /// Efficiency at the window peak.
    pub efficiency: f64,
    /// Mean number of triggering photons in an illuminated gate.
    pub photon_mean: f64,
    /// Mean number of triggering background photons per gate.
    pub background_mean: f64,
    /// Mean number of triggering dark carriers per gate.
    pub dark_mean: f64,
}

impl GateStatistics {
    pub fn new(params: &DetectorParams, gate: &GateConfig, light: &IlluminationConfig) -> Self {
        let window = ActiveWindow::new(params, gate);
        let trigger_fraction = params.trigger_fraction(gate.overbias());
        let efficiency = params.eta_max * trigger_fraction;
        let photon_mean = if light.mean_photons_per_pulse > 0.0 {
            light.mean_photons_per_pulse
                * efficiency
                * window
                    .photon_overlap(light.pulse_delay, light.pulse_fwhm)
                    .mean_weight
        } else {
            0.0
        };
        let active = window.integral();
        Self {
            trigger_fraction,
            efficiency,
            photon_mean,
            background_mean: light.background_rate * efficiency * active,
            dark_mean: params.dark_carrier_rate * trigger_fraction * active,
        }
    }

    /// Probability that an illuminated gate fires on a photon when no other
    /// source competes.
    pub fn photon_click_probability(&self) -> f64 {
        -(-self.photon_mean).exp_m1()
    }

    /// Probability that a gate holds at least one dark or background trigger.
    pub fn spontaneous_click_probability(&self) -> f64 {
        -(-(self.dark_mean + self.background_mean)).exp_m1()
    }
}

/// Runs the detector for `n_gates` gates.
///
/// Deterministic for a fixed seed. The events of gate `g` depend only on the
/// seed, the configuration and the avalanches in earlier gates, so a longer
/// run reproduces a shorter one as its prefix.
///
/// ```
/// use selfdiff::apd::{simulate_gates, DetectorParams, GateConfig, IlluminationConfig};
/// let out = simulate_gates(
///     &DetectorParams::default(),
///     &GateConfig::default(),
///     &IlluminationConfig::default(),
///     100_000,
///     1,
/// )
/// .unwrap();
/// assert!(!out.events.is_empty());
/// assert!(out.events.windows(2).all(|w| w[0].gate_index < w[1].gate_index));
/// ```
pub fn simulate_gates(
    params: &DetectorParams,
    gate: &GateConfig,
    light: &IlluminationConfig,
    n_gates: u64,
    seed: u64,
) -> Result<SimulationOutput> {
    Simulator::new(params, gate, light, seed)?.run(n_gates, 1, true)
}

/// Same output as [`simulate_gates`], with the spontaneous sources drawn on
/// `threads` worker threads. Trap coupling is resolved afterwards in a single
/// sequential pass, so the result is bit-identical to the serial run.
pub fn simulate_gates_parallel(
    params: &DetectorParams,
    gate: &GateConfig,
    light: &IlluminationConfig,
    n_gates: u64,
    seed: u64,
    threads: usize,
) -> Result<SimulationOutput> {
    Simulator::new(params, gate, light, seed)?.run(n_gates, threads.max(1), true)
}

/// Like [`simulate_gates`] but without keeping the trap ledger, for long
/// runs where only the events are needed.
pub fn simulate_events(
    params: &DetectorParams,
    gate: &GateConfig,
    light: &IlluminationConfig,
    n_gates: u64,
    seed: u64,
) -> Result<SimulationOutput> {
    Simulator::new(params, gate, light, seed)?.run(n_gates, 1, false)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gate: u64,
    time: f64,
    provenance: Provenance,
}

fn earlier(a: Candidate, b: Candidate) -> Candidate {
    if (b.time, b.provenance) < (a.time, a.provenance) {
        b
    } else {
        a
    }
}

struct Simulator {
    params: DetectorParams,
    light: IlluminationConfig,
    period: f64,
    window: ActiveWindow,
    stats: GateStatistics,
    photon_density: TimeDensity,
    carrier_density: TimeDensity,
    rng: SubstreamRng,
    below_breakdown: bool,
}

impl Simulator {
    fn new(
        params: &DetectorParams,
        gate: &GateConfig,
        light: &IlluminationConfig,
        seed: u64,
    ) -> Result<Self> {
        gate.validate()?;
        params.validate(gate)?;
        light.validate()?;
        let window = ActiveWindow::new(params, gate);
        Ok(Self {
            params: *params,
            light: *light,
            period: gate.period(),
            window,
            stats: GateStatistics::new(params, gate, light),
            photon_density: window
                .photon_overlap(light.pulse_delay, light.pulse_fwhm)
                .density,
            carrier_density: window.carrier_density(),
            rng: SubstreamRng::new(seed),
            below_breakdown: gate.overbias() <= 0.0,
        })
    }

    fn run(&self, n_gates: u64, threads: usize, record_ledger: bool) -> Result<SimulationOutput> {
        if n_gates == 0 {
            return Err(Error::NoGates);
        }
        if self.below_breakdown {
            return Ok(SimulationOutput {
                below_breakdown: true,
                ..SimulationOutput::default()
            });
        }
        let n_blocks = n_gates.div_ceil(BLOCK_GATES);
        let candidates = if threads <= 1 || n_blocks < 2 {
            self.candidates(0..n_blocks, n_gates)
        } else {
            let chunk = n_blocks.div_ceil(threads as u64);
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..n_blocks)
                    .step_by(chunk as usize)
                    .map(|start| {
                        let end = (start + chunk).min(n_blocks);
                        s.spawn(move || self.candidates(start..end, n_gates))
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("candidate worker panicked"))
                    .collect()
            })
        };
        Ok(self.resolve(candidates, n_gates, record_ledger))
    }

    /// Spontaneous candidates of a block range, at most one per gate, in
    /// gate order.
    fn candidates(&self, blocks: std::ops::Range<u64>, n_gates: u64) -> Vec<Candidate> {
        let mut out = Vec::new();
        let mut photons = Vec::new();
        let mut spont = Vec::new();
        for b in blocks {
            photons.clear();
            spont.clear();
            self.photon_gates(b, &mut photons);
            self.spontaneous_gates(b, &mut spont);
            let (mut i, mut j) = (0, 0);
            loop {
                let next = match (photons.get(i), spont.get(j)) {
                    (None, None) => break,
                    (Some(&p), None) => {
                        i += 1;
                        self.photon_candidate(p)
                    }
                    (None, Some(&s)) => {
                        j += 1;
                        self.spontaneous_candidate(s)
                    }
                    (Some(&p), Some(&s)) if p < s => {
                        i += 1;
                        self.photon_candidate(p)
                    }
                    (Some(&p), Some(&s)) if s < p => {
                        j += 1;
                        self.spontaneous_candidate(s)
                    }
                    (Some(&p), Some(_)) => {
                        i += 1;
                        j += 1;
                        earlier(self.photon_candidate(p), self.spontaneous_candidate(p))
                    }
                };
                if next.gate >= n_gates {
                    break;
                }
                out.push(next);
            }
        }
        out
    }

    /// Illuminated gates of block `b` with at least one triggering photon.
    fn photon_gates(&self, b: u64, out: &mut Vec<u64>) {
        let mean = self.stats.photon_mean;
        if mean <= 0.0 {
            return;
        }
        let r = self.light.sync_divisor;
        let start = b * BLOCK_GATES;
        let end = start + BLOCK_GATES;
        let first = start.div_ceil(r);
        let last = end.div_ceil(r);
        let mut rng = self.rng.stream(Stream::PhotonBlock(b));
        skip_geometric(&mut rng, mean, last - first, |k| out.push((first + k) * r));
    }

    /// Gates of block `b` with at least one dark or background trigger.
    fn spontaneous_gates(&self, b: u64, out: &mut Vec<u64>) {
        let mean = self.stats.dark_mean + self.stats.background_mean;
        if mean <= 0.0 {
            return;
        }
        let start = b * BLOCK_GATES;
        let mut rng = self.rng.stream(Stream::BackgroundBlock(b));
        skip_geometric(&mut rng, mean, BLOCK_GATES, |k| out.push(start + k));
    }

    fn photon_candidate(&self, gate: u64) -> Candidate {
        let mut rng = self.rng.stream(Stream::PhotonDetail(gate));
        let k = zero_truncated_poisson(&mut rng, self.stats.photon_mean);
        Candidate {
            gate,
            time: self.photon_density.quantile_of_min(k, open01(&mut rng)),
            provenance: Provenance::Photon,
        }
    }

    fn spontaneous_candidate(&self, gate: u64) -> Candidate {
        let mut rng = self.rng.stream(Stream::BackgroundDetail(gate));
        let dark = self.stats.dark_mean;
        let bg = self.stats.background_mean;
        let k = zero_truncated_poisson(&mut rng, dark + bg);
        let time = self.carrier_density.quantile_of_min(k, open01(&mut rng));
        // Both kinds share one arrival density, so the earliest carrier is
        // background in proportion to the rates.
        let provenance = if rng.random::<f64>() * (dark + bg) < bg {
            Provenance::Background
        } else {
            Provenance::Dark
        };
        Candidate {
            gate,
            time,
            provenance,
        }
    }

    /// Merges spontaneous candidates with trap releases in gate order.
    fn resolve(&self, candidates: Vec<Candidate>, n_gates: u64, record: bool) -> SimulationOutput {
        let mut out = SimulationOutput {
            events: Vec::with_capacity(candidates.len()),
            ledger: TrapLedger::new(),
            below_breakdown: false,
        };
        // Pending afterpulse triggers keyed by (gate, time bits); times are
        // non-negative so their bit patterns sort like the values.
        let mut pending: BinaryHeap<Reverse<(u64, u64)>> = BinaryHeap::new();
        let mut spont = candidates.into_iter().peekable();
        loop {
            let next_spont = spont.peek().map(|c| c.gate);
            let next_trap = pending
                .peek()
                .map(|Reverse((g, _))| *g)
                .filter(|&g| g < n_gates);
            let g = match (next_spont, next_trap) {
                (None, None) => break,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (Some(a), Some(b)) => a.min(b),
            };
            let mut winner: Option<Candidate> = None;
            if next_spont == Some(g) {
                winner = spont.next();
            }
            if let Some(&Reverse((tg, bits))) = pending.peek() {
                if tg == g {
                    let ap = Candidate {
                        gate: g,
                        time: f64::from_bits(bits),
                        provenance: Provenance::Afterpulse,
                    };
                    winner = Some(winner.map_or(ap, |w| earlier(w, ap)));
                }
            }
            while matches!(pending.peek(), Some(Reverse((tg, _))) if *tg == g) {
                pending.pop();
            }
            let c = winner.expect("gate selected without a candidate");
            self.avalanche(c, &mut out, &mut pending, record);
        }
        out
    }

    fn avalanche(
        &self,
        c: Candidate,
        out: &mut SimulationOutput,
        pending: &mut BinaryHeap<Reverse<(u64, u64)>>,
        record: bool,
    ) {
        let p = &self.params;
        let t = self.period;
        let mut rng = self.rng.stream(Stream::Avalanche(c.gate));
        let charge = Exp::new(1.0 / p.mean_avalanche_charge)
            .expect("validated mean charge")
            .sample(&mut rng)
            .max(f64::MIN_POSITIVE);
        let jitter = if p.timing_jitter_sigma > 0.0 {
            Normal::new(0.0, p.timing_jitter_sigma)
                .expect("validated jitter")
                .sample(&mut rng)
        } else {
            0.0
        };
        out.events.push(AvalancheEvent {
            gate_index: c.gate,
            time_in_gate: (c.time + jitter).clamp(0.0, t.next_down()),
            charge,
            provenance: c.provenance,
        });

        let mean_traps = p.trap_capture_per_charge * charge;
        if mean_traps <= 0.0 {
            return;
        }
        let n_traps = Poisson::new(mean_traps)
            .expect("positive trap mean")
            .sample(&mut rng) as u64;
        let fill_time = c.gate as f64 * t + c.time;
        let fill_phase = c.time / t;
        let trigger_scale = p.afterpulse_trigger_scale * self.stats.trigger_fraction;
        for _ in 0..n_traps {
            let (whole, frac) =
                split_release_delay(p.detrap_time_constant, t, open01(&mut rng), rng.random());
            let u_trigger: f64 = rng.random();
            let x = fill_phase + frac;
            let carry = x.floor();
            let offset = whole.saturating_add(carry as u64);
            let time_in_gate = ((x - carry) * t).min(t.next_down());
            if record {
                let release = fill_time + t * (whole as f64 + frac);
                out.ledger.push(fill_time, release.max(fill_time.next_up()));
            }
            // A release in the gate that is already avalanching is absorbed.
            if offset == 0 {
                continue;
            }
            if u_trigger < trigger_scale * self.window.weight(time_in_gate) {
                let release_gate = c.gate.saturating_add(offset);
                pending.push(Reverse((release_gate, time_in_gate.to_bits())));
            }
        }
    }
}

/// Visits the indices in `0..len` that hold at least one Poisson(`mean`)
/// occurrence, by drawing the geometric gaps between them.
fn skip_geometric(rng: &mut ChaCha8Rng, mean: f64, len: u64, mut visit: impl FnMut(u64)) {
    // Empty-slot run length: P(gap >= k) = exp(-mean k).
    let mut pos: u64 = 0;
    loop {
        let gap = (-open01(rng).ln() / mean).floor();
        if gap >= (len - pos) as f64 {
            return;
        }
        pos += gap as u64;
        visit(pos);
        pos += 1;
        if pos >= len {
            return;
        }
    }
}

/// Poisson(`mean`) conditioned on being at least one.
fn zero_truncated_poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean > 10.0 {
        let poisson = Poisson::new(mean).expect("positive mean");
        loop {
            let k = poisson.sample(rng) as u64;
            if k > 0 {
                return k;
            }
        }
    }
    // Inverse CDF; the loop rarely goes past a few terms.
    let u = open01(rng) * -(-mean).exp_m1();
    let mut term = mean * (-mean).exp();
    let mut acc = term;
    let mut k = 1u64;
    while acc < u && k < 1000 {
        k += 1;
        term *= mean / k as f64;
        acc += term;
    }
    k
}
