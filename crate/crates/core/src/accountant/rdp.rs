use std::ops::RangeInclusive;

pub const RDP_ORDERS: RangeInclusive<u32> = 2..=512;

/// Per-step RDP of the Poisson-subsampled Gaussian at integer order `alpha`:
/// `1/(alpha-1) ln sum_j C(alpha,j) (1-q)^{alpha-j} q^j exp(j(j-1)/(2 sigma^2))`,
/// summed in log space.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: u32) -> f64 {
    assert!(alpha >= 2, "RDP order must be at least 2");
    assert!(sigma > 0.0, "noise multiplier must be positive");
    if q <= 0.0 {
        return 0.0;
    }
    let a = alpha as usize;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut terms = Vec::with_capacity(a + 1);
    let mut ln_binom = 0.0;
    for j in 0..=a {
        if j > 0 {
            ln_binom += ((a - j + 1) as f64).ln() - (j as f64).ln();
        }
        let mut t = ln_binom + (j * j.saturating_sub(1)) as f64 * inv_two_var;
        if j > 0 {
            t += j as f64 * ln_q;
        }
        if a > j {
            t += (a - j) as f64 * ln_1mq;
        }
        if t.is_finite() {
            terms.push(t);
        }
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    (lse / (alpha - 1) as f64).max(0.0)
}

/// Per-step RDP values over the integer orders 2..=512.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    pub orders: Vec<u32>,
    pub values: Vec<f64>,
}

impl RdpCurve {
    pub fn subsampled_gaussian(q: f64, sigma: f64) -> Self {
        let orders: Vec<u32> = RDP_ORDERS.collect();
        let values = orders
            .iter()
            .map(|&a| rdp_subsampled_gaussian(q, sigma, a))
            .collect();
        Self { orders, values }
    }

    /// `min_alpha T rho(alpha) + ln(1/delta) / (alpha - 1)`.
    pub fn epsilon(&self, steps: u64, delta: f64) -> f64 {
        rdp_epsilon(self, steps, delta)
    }
}

pub fn rdp_epsilon(curve: &RdpCurve, steps: u64, delta: f64) -> f64 {
    assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
    let log_inv_delta = -delta.ln();
    curve
        .orders
        .iter()
        .zip(&curve.values)
        .map(|(&a, &rho)| steps as f64 * rho + log_inv_delta / (a - 1) as f64)
        .fold(f64::INFINITY, f64::min)
}
