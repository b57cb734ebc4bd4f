//! Closed forms for the Poisson-subsampled Gaussian mechanism with sensitivity 1:
//! `P = (1-q) N(0, s^2) + q N(1, s^2)` against `Q = N(0, s^2)` (remove), or the
//! reverse pair (add).

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Remove,
    Add,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Remove, Direction::Add];
}

/// Standard normal upper tail.
pub(crate) fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Standard normal CDF.
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Location where the likelihood ratio `(1-q) + q exp((2x-1)/(2 s^2))` equals
/// `exp(log_ratio)`, or `None` when the ratio never gets that low.
fn threshold(q: f64, sigma: f64, log_ratio: f64) -> Option<f64> {
    // (e^r - (1-q)) / q, kept in log space for large r.
    let inner = if log_ratio > 30.0 {
        log_ratio + (-(1.0 - q) * (-log_ratio).exp()).ln_1p() - q.ln()
    } else {
        let d = log_ratio.exp() - (1.0 - q);
        if d <= 0.0 {
            return None;
        }
        d.ln() - q.ln()
    };
    Some(0.5 + sigma * sigma * inner)
}

/// `exp(log_factor) * p` without overflowing when `p` underflows.
fn scaled(log_factor: f64, p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        (log_factor + p.ln()).exp()
    }
}

/// Hockey-stick divergence `sup_S P(S) - e^eps Q(S)` for the given adjacency direction.
pub fn hockey_stick_subsampled_gaussian(q: f64, sigma: f64, eps: f64, direction: Direction) -> f64 {
    assert!(sigma > 0.0, "noise multiplier must be positive");
    if q <= 0.0 {
        return 0.0;
    }
    let delta = match direction {
        Direction::Remove => match threshold(q, sigma, eps) {
            None => -eps.exp_m1(),
            Some(x) => {
                let tail_p1 = norm_sf((x - 1.0) / sigma);
                let tail_p0 = norm_sf(x / sigma);
                // (1-q) T0 + q T1 - e^eps T0 = q T1 - (e^eps - 1 + q) T0.
                let log_coeff = if eps > 30.0 {
                    eps + ((q - 1.0) * (-eps).exp()).ln_1p()
                } else {
                    (eps.exp_m1() + q).ln()
                };
                q * tail_p1 - scaled(log_coeff, tail_p0)
            }
        },
        Direction::Add => match threshold(q, sigma, -eps) {
            None => 0.0,
            Some(x) => {
                let c0 = norm_cdf(x / sigma);
                let c1 = norm_cdf((x - 1.0) / sigma);
                c0 - scaled(eps, (1.0 - q) * c0 + q * c1)
            }
        },
    };
    delta.clamp(0.0, 1.0)
}

/// `delta(eps) - (1 - e^eps)`, evaluated directly. It is small where `delta` is
/// close to `1 - e^eps` (below the bulk of the loss distribution), so second
/// differences taken on it keep their precision there.
pub(crate) fn hockey_stick_complement(q: f64, sigma: f64, eps: f64, direction: Direction) -> f64 {
    if q <= 0.0 {
        return eps.exp_m1().max(0.0);
    }
    let g = match direction {
        // e^eps Q[L < eps] - P[L < eps]
        Direction::Remove => match threshold(q, sigma, eps) {
            None => 0.0,
            Some(x) => {
                let log_coeff = if eps > 30.0 {
                    eps + ((q - 1.0) * (-eps).exp()).ln_1p()
                } else {
                    (eps.exp_m1() + q).ln()
                };
                scaled(log_coeff, norm_cdf(x / sigma)) - q * norm_cdf((x - 1.0) / sigma)
            }
        },
        Direction::Add => match threshold(q, sigma, -eps) {
            None => eps.exp_m1(),
            Some(x) => {
                let t0 = norm_sf(x / sigma);
                let t1 = norm_sf((x - 1.0) / sigma);
                scaled(eps, (1.0 - q) * t0 + q * t1) - t0
            }
        },
    };
    g.max(0.0)
}

/// `P[L <= eps]` for the privacy loss `L` of the given direction, `x ~ P`.
pub(crate) fn privacy_loss_cdf(q: f64, sigma: f64, eps: f64, direction: Direction) -> f64 {
    match direction {
        Direction::Remove => match threshold(q, sigma, eps) {
            None => 0.0,
            Some(x) => (1.0 - q) * norm_cdf(x / sigma) + q * norm_cdf((x - 1.0) / sigma),
        },
        Direction::Add => match threshold(q, sigma, -eps) {
            None => 1.0,
            Some(x) => norm_sf(x / sigma),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn unsubsampled_gaussian_at_zero() {
        // Phi(1/2) - Phi(-1/2), 50-digit reference.
        let d = hockey_stick_subsampled_gaussian(1.0, 1.0, 0.0, Direction::Remove);
        assert!(rel(d, 0.382_924_922_548_026_21) < 1e-14);
        let d = hockey_stick_subsampled_gaussian(1.0, 1.0, 0.0, Direction::Add);
        assert!(rel(d, 0.382_924_922_548_026_21) < 1e-14);
    }

    #[test]
    fn zero_sampling_rate() {
        for eps in [0.0, 0.5, 3.0] {
            for dir in Direction::BOTH {
                assert_eq!(hockey_stick_subsampled_gaussian(0.0, 1.0, eps, dir), 0.0);
            }
        }
    }

    #[test]
    fn subsampled_reference_values() {
        // (q, sigma, eps, remove, add) from a 50-digit evaluation of the same mixtures.
        let cases = [
            (0.01, 1.0, 0.5, 2.214_519_013_153_061_6e-7, 0.0),
            (0.01, 1.0, 2.0, 1.724_842_120_013_822_5e-12, 0.0),
            (0.1, 0.8, 1.0, 0.001_567_658_928_090_073_4, 0.0),
            (0.1, 0.8, 5.0, 1.719_651_586_128_028_1e-9, 0.0),
            (0.3, 2.0, 0.1, 0.028_863_721_790_776_806, 0.017_247_922_413_164_957),
            (0.01, 1.0, -0.5, 0.393_469_340_287_366_58, 0.393_469_474_604_734_38),
        ];
        for (q, s, e, rm, add) in cases {
            let r = hockey_stick_subsampled_gaussian(q, s, e, Direction::Remove);
            let a = hockey_stick_subsampled_gaussian(q, s, e, Direction::Add);
            assert!(rel(r, rm) < 1e-9, "remove {q} {s} {e}: {r} vs {rm}");
            if add == 0.0 {
                assert_eq!(a, 0.0);
            } else {
                assert!(rel(a, add) < 1e-9, "add {q} {s} {e}: {a} vs {add}");
            }
        }
    }

    #[test]
    fn vanishes_for_large_eps() {
        for dir in Direction::BOTH {
            let d = hockey_stick_subsampled_gaussian(1.0, 1.0, 60.0, dir);
            assert!(d < 1e-300);
            assert_eq!(hockey_stick_subsampled_gaussian(0.5, 1.0, 800.0, dir), 0.0);
            assert_eq!(hockey_stick_subsampled_gaussian(1.0, 0.3, 800.0, dir), 0.0);
        }
    }

    #[test]
    fn monotone_in_eps() {
        for dir in Direction::BOTH {
            let mut prev = f64::INFINITY;
            for k in -40..200 {
                let d = hockey_stick_subsampled_gaussian(0.2, 0.9, k as f64 * 0.05, dir);
                assert!(d <= prev + 1e-15);
                prev = d;
            }
        }
    }

    #[test]
    fn complement_identity() {
        for dir in Direction::BOTH {
            for (q, s) in [(1.0, 1.0), (0.1, 0.8), (0.3, 2.0)] {
                for k in -20..20 {
                    let e = 0.1 * k as f64;
                    let d = hockey_stick_subsampled_gaussian(q, s, e, dir);
                    let g = hockey_stick_complement(q, s, e, dir);
                    assert!((d - g - (-e.exp_m1())).abs() < 1e-14, "{dir:?} {q} {s} {e}");
                }
            }
        }
    }

    #[test]
    fn loss_cdf_limits() {
        assert_eq!(privacy_loss_cdf(0.1, 1.0, -1.0, Direction::Remove), 0.0);
        assert_eq!(privacy_loss_cdf(0.1, 1.0, 1.0, Direction::Add), 1.0);
        let mid = privacy_loss_cdf(1.0, 1.0, 0.5, Direction::Remove);
        // Gaussian: L ~ N(1/2, 1), so P[L <= 1/2] = 1/2.
        assert!((mid - 0.5).abs() < 1e-15);
    }
}
