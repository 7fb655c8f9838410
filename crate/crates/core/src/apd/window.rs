//! Geometry of the optical detection window inside one gate.
//!
//! The window weight `w(t)` multiplies the avalanche probability of a carrier
//! that appears at time `t` after the gate start. It is zero outside the
//! electrical gate `[0, gate_duration)`.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::erf::{erfc, erfc_inv};

use super::params::{DetectorParams, GateConfig, WindowShape, FWHM_PER_SIGMA};

/// Standard normal CDF.
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Inverse of the standard normal CDF on (0, 1).
pub(crate) fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// A time density on a finite interval from which arrival times are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeDensity {
    /// Normal density truncated to `[lo, hi)`.
    TruncatedNormal {
        mean: f64,
        sigma: f64,
        lo: f64,
        hi: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

impl TimeDensity {
    /// Inverse-CDF draw for uniform `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            TimeDensity::Uniform { lo, hi } => lo + (hi - lo) * u,
            TimeDensity::TruncatedNormal {
                mean,
                sigma,
                lo,
                hi,
            } => {
                if sigma == 0.0 {
                    return mean.clamp(lo, hi);
                }
                let a = (lo - mean) / sigma;
                let b = (hi - mean) / sigma;
                // Stay in the lower tail where the CDF keeps its precision.
                let z = if a > 0.0 {
                    -std_truncated_quantile(-b, -a, 1.0 - u)
                } else {
                    std_truncated_quantile(a, b, u)
                };
                (mean + sigma * z).clamp(lo, hi)
            }
        }
    }

    /// Earliest of `k` independent draws, from a single uniform.
    pub fn quantile_of_min(&self, k: u64, u: f64) -> f64 {
        if k <= 1 {
            return self.quantile(u);
        }
        // P(min <= x) = 1 - (1 - F(x))^k
        let v = -((-u).ln_1p() / k as f64).exp_m1();
        self.quantile(v)
    }
}

fn std_truncated_quantile(a: f64, b: f64, u: f64) -> f64 {
    let pa = norm_cdf(a);
    let pb = norm_cdf(b);
    if pb <= pa {
        return if a.abs() < b.abs() { a } else { b };
    }
    let p = pa + u * (pb - pa);
    norm_quantile(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)).clamp(a, b)
}

/// Photon arrival statistics for a laser pulse seen through the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonOverlap {
    /// Expected window weight of one photon of the pulse.
    pub mean_weight: f64,
    /// Arrival-time density of the photons that trigger.
    pub density: TimeDensity,
}

/// The optical detection window of a specific gate configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveWindow {
    pub shape: WindowShape,
    pub center: f64,
    pub fwhm: f64,
    /// Length of the electrical gate; the weight vanishes outside it.
    pub gate_duration: f64,
}

impl ActiveWindow {
    pub fn new(params: &DetectorParams, gate: &GateConfig) -> Self {
        Self {
            shape: params.detection_window_shape,
            center: params.detection_window_center,
            fwhm: params.detection_window_fwhm,
            gate_duration: gate.gate_duration(),
        }
    }

    fn sigma(&self) -> f64 {
        self.fwhm / FWHM_PER_SIGMA
    }

    fn flat_bounds(&self) -> (f64, f64) {
        let lo = (self.center - self.fwhm / 2.0).max(0.0);
        let hi = (self.center + self.fwhm / 2.0).min(self.gate_duration);
        (lo, hi.max(lo))
    }

    /// Window weight at time `t` after the gate start, in [0, 1].
    pub fn weight(&self, t: f64) -> f64 {
        if !(0.0..self.gate_duration).contains(&t) {
            return 0.0;
        }
        match self.shape {
            WindowShape::Gaussian => {
                let z = (t - self.center) / self.sigma();
                (-0.5 * z * z).exp()
            }
            WindowShape::Rectangular => {
                let (lo, hi) = self.flat_bounds();
                if (lo..hi).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Integral of the weight over the gate (s): the effective active time.
    pub fn integral(&self) -> f64 {
        match self.shape {
            WindowShape::Gaussian => {
                let s = self.sigma();
                s * (2.0 * PI).sqrt()
                    * (norm_cdf((self.gate_duration - self.center) / s)
                        - norm_cdf(-self.center / s))
            }
            WindowShape::Rectangular => {
                let (lo, hi) = self.flat_bounds();
                hi - lo
            }
        }
    }

    /// Arrival-time density of carriers that appear uniformly in time and
    /// are then thinned by the window.
    pub fn carrier_density(&self) -> TimeDensity {
        match self.shape {
            WindowShape::Gaussian => TimeDensity::TruncatedNormal {
                mean: self.center,
                sigma: self.sigma(),
                lo: 0.0,
                hi: self.gate_duration,
            },
            WindowShape::Rectangular => {
                let (lo, hi) = self.flat_bounds();
                TimeDensity::Uniform { lo, hi }
            }
        }
    }

    /// Overlap of a Gaussian laser pulse centred at `delay` with the window.
    pub fn photon_overlap(&self, delay: f64, pulse_fwhm: f64) -> PhotonOverlap {
        let sp = pulse_fwhm / FWHM_PER_SIGMA;
        match self.shape {
            WindowShape::Gaussian => {
                let sw = self.sigma();
                let var = sw * sw + sp * sp;
                let d = delay - self.center;
                let amplitude = sw / var.sqrt() * (-0.5 * d * d / var).exp();
                let mean = (self.center * sp * sp + delay * sw * sw) / var;
                let sigma = sw * sp / var.sqrt();
                let inside = if sigma == 0.0 {
                    if (0.0..self.gate_duration).contains(&mean) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    norm_cdf((self.gate_duration - mean) / sigma) - norm_cdf(-mean / sigma)
                };
                PhotonOverlap {
                    mean_weight: amplitude * inside,
                    density: TimeDensity::TruncatedNormal {
                        mean,
                        sigma,
                        lo: 0.0,
                        hi: self.gate_duration,
                    },
                }
            }
            WindowShape::Rectangular => {
                let (lo, hi) = self.flat_bounds();
                let inside = if sp == 0.0 {
                    if (lo..hi).contains(&delay) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    norm_cdf((hi - delay) / sp) - norm_cdf((lo - delay) / sp)
                };
                PhotonOverlap {
                    mean_weight: inside,
                    density: TimeDensity::TruncatedNormal {
                        mean: delay,
                        sigma: sp,
                        lo,
                        hi,
                    },
                }
            }
        }
    }
}
