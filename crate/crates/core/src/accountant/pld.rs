//! Discretized privacy loss distributions on a uniform grid `i * h`, plus an
//! atom at +infinity. Built by connect-the-dots from a hockey-stick curve and
//! composed by FFT convolution with pessimistic tail truncation.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::gaussian::{
    hockey_stick_complement, hockey_stick_subsampled_gaussian, privacy_loss_cdf, Direction,
};
use super::AccountantError;

pub const DEFAULT_VALUE_STEP: f64 = 1e-4;

/// A reconstructed bottom mass below this means the grid cannot represent the curve.
const NEGATIVE_MASS_FAILURE: f64 = 1e-9;
const MAX_GRID_POINTS: usize = 1 << 27;
const DIRECT_CONVOLUTION_LIMIT: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLossDistribution {
    value_step: f64,
    /// Grid index of `masses[0]`; the loss value is `lower_index * value_step`.
    lower_index: i64,
    masses: Vec<f64>,
    infinity_mass: f64,
}

impl PrivacyLossDistribution {
    pub fn new(
        value_step: f64,
        lower_index: i64,
        masses: Vec<f64>,
        infinity_mass: f64,
    ) -> Result<Self, AccountantError> {
        if !(value_step > 0.0) || masses.is_empty() {
            return Err(AccountantError::InvalidInput(
                "a PLD needs a positive grid step and at least one grid point".into(),
            ));
        }
        if masses.iter().chain([&infinity_mass]).any(|p| !(*p >= 0.0)) {
            return Err(AccountantError::InvalidInput("PLD masses must be non-negative".into()));
        }
        Ok(Self {
            value_step,
            lower_index,
            masses,
            infinity_mass,
        })
    }

    /// Point mass at loss 0: the identity for composition.
    pub fn identity(value_step: f64) -> Self {
        Self {
            value_step,
            lower_index: 0,
            masses: vec![1.0],
            infinity_mass: 0.0,
        }
    }

    pub fn value_step(&self) -> f64 {
        self.value_step
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn infinity_mass(&self) -> f64 {
        self.infinity_mass
    }

    pub fn lower_index(&self) -> i64 {
        self.lower_index
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn loss(&self, i: usize) -> f64 {
        (self.lower_index + i as i64) as f64 * self.value_step
    }

    pub fn lowest_loss(&self) -> f64 {
        self.loss(0)
    }

    pub fn highest_loss(&self) -> f64 {
        self.loss(self.masses.len() - 1)
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.infinity_mass
    }

    /// `p_inf + sum_{l_i > eps} p_i (1 - e^{eps - l_i})`.
    pub fn delta(&self, eps: f64) -> f64 {
        let h = self.value_step;
        let first_above = ((eps / h).floor() as i64 + 1 - self.lower_index).max(0) as usize;
        let mut sum = 0.0;
        for i in (first_above..self.masses.len()).rev() {
            let l = self.loss(i);
            if l > eps {
                sum += self.masses[i] * -(eps - l).exp_m1();
            }
        }
        (self.infinity_mass + sum).min(1.0)
    }

    /// Smallest `eps` with `delta(eps) <= delta`. Between grid points the curve is
    /// `a - b e^eps`, so the crossing is solved exactly. Returns +infinity when
    /// `delta` is below the infinity mass.
    pub fn epsilon(&self, delta: f64) -> f64 {
        if delta < self.infinity_mass {
            return f64::INFINITY;
        }
        let decay = (-self.value_step).exp();
        let top = self.masses.len() - 1;
        // above: sum of p_i for i > k; weighted: sum p_i e^{l_k - l_i} for i > k.
        let (mut above, mut weighted) = (0.0, 0.0);
        for k in (0..top).rev() {
            above += self.masses[k + 1];
            weighted = decay * (weighted + self.masses[k + 1]);
            let dk = self.infinity_mass + above - weighted;
            if dk > delta {
                let lk = self.loss(k);
                let x = ((self.infinity_mass + above - delta) / weighted).ln();
                return (lk + x).clamp(lk, self.loss(k + 1));
            }
        }
        // Below the grid every finite atom contributes.
        above += self.masses[0];
        weighted += self.masses[0];
        let slack = self.infinity_mass + above - delta;
        if slack <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.lowest_loss() + (slack / weighted).ln().min(0.0)
    }

    /// Convolution of the finite parts; infinity masses combine as `1 - (1-a)(1-b)`.
    /// Tail mass below `tail_mass` at either end is moved pessimistically: the
    /// bottom onto the lowest kept point, the top into the infinity atom.
    pub fn compose(&self, other: &Self, tail_mass: f64) -> Result<Self, AccountantError> {
        if (self.value_step - other.value_step).abs() > 1e-15 * self.value_step {
            return Err(AccountantError::InvalidInput(
                "composed PLDs must share a grid step".into(),
            ));
        }
        let conv = convolve(&self.masses, &other.masses)?;
        let infinity = 1.0 - (1.0 - self.infinity_mass) * (1.0 - other.infinity_mass);
        Ok(truncate(
            self.value_step,
            self.lower_index + other.lower_index,
            conv,
            infinity,
            tail_mass,
        ))
    }

    /// `steps`-fold self composition by repeated squaring.
    pub fn self_compose(&self, steps: u64, tail_mass: f64) -> Result<Self, AccountantError> {
        if steps == 0 {
            return Err(AccountantError::InvalidInput("composition count must be >= 1".into()));
        }
        let mut result: Option<Self> = None;
        let mut base = self.clone();
        let mut k = steps;
        loop {
            if k & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.compose(&base, tail_mass)?,
                });
            }
            k >>= 1;
            if k == 0 {
                break;
            }
            base = base.compose(&base, tail_mass)?;
        }
        Ok(result.expect("steps >= 1"))
    }
}

fn truncate(
    value_step: f64,
    lower_index: i64,
    mut masses: Vec<f64>,
    mut infinity_mass: f64,
    tail_mass: f64,
) -> PrivacyLossDistribution {
    for m in masses.iter_mut() {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    let mut lo = 0;
    let mut acc = 0.0;
    while lo + 1 < masses.len() && acc + masses[lo] <= tail_mass {
        acc += masses[lo];
        lo += 1;
    }
    let mut hi = masses.len() - 1;
    let mut top = 0.0;
    while hi > lo && top + masses[hi] <= tail_mass {
        top += masses[hi];
        hi -= 1;
    }
    masses[lo] += acc;
    infinity_mass += top;
    masses.truncate(hi + 1);
    masses.drain(..lo);
    PrivacyLossDistribution {
        value_step,
        lower_index: lower_index + lo as i64,
        masses,
        infinity_mass,
    }
}

fn convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>, AccountantError> {
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 64 || a.len() * b.len() <= DIRECT_CONVOLUTION_LIMIT {
        let mut out = vec![0.0; out_len];
        for (i, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &y) in out[i..].iter_mut().zip(b) {
                *o += x * y;
            }
        }
        return Ok(out);
    }
    let n = out_len.next_power_of_two();
    if n > MAX_GRID_POINTS {
        return Err(AccountantError::GridTooFine(format!(
            "convolution of {} and {} points needs an FFT of {n}",
            a.len(),
            b.len()
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    // Both real inputs share one complex transform: z = a + i b.
    let mut z: Vec<Complex<f64>> = (0..n)
        .map(|k| Complex::new(a.get(k).copied().unwrap_or(0.0), b.get(k).copied().unwrap_or(0.0)))
        .collect();
    fwd.process(&mut z);
    let mut prod = vec![Complex::new(0.0, 0.0); n];
    for k in 0..n {
        let zk = z[k];
        let zc = z[(n - k) % n].conj();
        let fa = (zk + zc) * 0.5;
        let fb = (zk - zc) * Complex::new(0.0, -0.5);
        prod[k] = fa * fb;
    }
    inv.process(&mut prod);
    let scale = 1.0 / n as f64;
    Ok(prod[..out_len].iter().map(|c| c.re * scale).collect())
}

/// Connect-the-dots PLD matching `deltas[k] = delta((lower_index + k) h)` exactly at
/// every grid point. With `d_k` the curve values and `E = e^h`,
/// `p_k = [(d_{k+1} - d_k) - E (d_k - d_{k-1})] / (E - 1)` inside the grid,
/// `p_n = E (d_{n-1} - d_n) / (E - 1)`, `p_inf = d_n`, and `p_0` takes the rest.
/// This is the closed form of the top-down triangular solve.
pub fn pld_from_curve(
    value_step: f64,
    lower_index: i64,
    deltas: &[f64],
) -> Result<PrivacyLossDistribution, AccountantError> {
    connect_the_dots(value_step, lower_index, deltas, None)
}

/// As [`pld_from_curve`]; where given, `complements[k] = d_k - (1 - e^{eps_k})` is used
/// for the interior second differences at non-positive losses. The subtracted term
/// is linear in `e^eps` and contributes nothing to interior masses.
fn connect_the_dots(
    value_step: f64,
    lower_index: i64,
    deltas: &[f64],
    complements: Option<&[f64]>,
) -> Result<PrivacyLossDistribution, AccountantError> {
    let n = deltas.len();
    if n < 2 {
        return Err(AccountantError::InvalidInput("need at least two grid points".into()));
    }
    let e = value_step.exp();
    let em1 = value_step.exp_m1();
    let mut masses = vec![0.0; n];
    for k in 1..n {
        let above_index = lower_index + k as i64 + 1;
        let curve = match complements {
            Some(c) if k + 1 < n && above_index <= 0 => c,
            _ => deltas,
        };
        let up = if k + 1 < n { curve[k + 1] - curve[k] } else { 0.0 };
        masses[k] = (up - e * (curve[k] - curve[k - 1])) / em1;
    }
    let infinity_mass = deltas[n - 1];
    for (k, m) in masses.iter_mut().enumerate().skip(1) {
        if *m < 0.0 {
            if *m < -NEGATIVE_MASS_FAILURE {
                return Err(AccountantError::DiscretizationFailure(format!(
                    "mass {m:e} at grid point {k}: curve is not convex at this resolution"
                )));
            }
            *m = 0.0;
        }
    }
    let p0 = 1.0 - infinity_mass - masses[1..].iter().sum::<f64>();
    if p0 < -NEGATIVE_MASS_FAILURE {
        return Err(AccountantError::DiscretizationFailure(format!(
            "bottom mass {p0:e}: grid too coarse"
        )));
    }
    // Between -1e-9 and 0 the deficit is rounding in the sum; it is clamped away.
    masses[0] = p0.max(0.0);
    PrivacyLossDistribution::new(value_step, lower_index, masses, infinity_mass)
}

/// Grid indices `[lo, hi]` such that the loss CDF at `lo` and the hockey-stick
/// value at `hi` are both at most `tail_mass`.
fn grid_bounds(
    q: f64,
    sigma: f64,
    direction: Direction,
    h: f64,
    tail_mass: f64,
) -> Result<(i64, i64), AccountantError> {
    let too_wide = || {
        AccountantError::GridTooFine(format!(
            "privacy loss range for q={q}, sigma={sigma} exceeds {MAX_GRID_POINTS} grid points"
        ))
    };
    let delta_at = |k: i64| hockey_stick_subsampled_gaussian(q, sigma, k as f64 * h, direction);
    let cdf_at = |k: i64| privacy_loss_cdf(q, sigma, k as f64 * h, direction);

    // Smallest hi with delta(hi) <= tail_mass.
    let mut hi = 1i64;
    while delta_at(hi) > tail_mass {
        hi *= 2;
        if hi as usize > MAX_GRID_POINTS {
            return Err(too_wide());
        }
    }
    let mut below = hi / 2;
    if delta_at(below) <= tail_mass {
        below = i64::MIN;
    }
    if below != i64::MIN {
        while hi - below > 1 {
            let mid = below + (hi - below) / 2;
            if delta_at(mid) <= tail_mass {
                hi = mid;
            } else {
                below = mid;
            }
        }
    }

    // Largest lo with cdf(lo) <= tail_mass.
    let mut lo = -1i64;
    while cdf_at(lo) > tail_mass {
        lo *= 2;
        if (-lo) as usize > MAX_GRID_POINTS {
            return Err(too_wide());
        }
    }
    let mut above = (lo / 2).min(hi);
    if cdf_at(above) <= tail_mass {
        lo = above;
    } else {
        while above - lo > 1 {
            let mid = lo + (above - lo) / 2;
            if cdf_at(mid) <= tail_mass {
                lo = mid;
            } else {
                above = mid;
            }
        }
    }
    let lo = lo.min(hi - 1);
    if (hi - lo) as usize + 1 > MAX_GRID_POINTS {
        return Err(too_wide());
    }
    Ok((lo, hi))
}

/// Connect-the-dots PLD of one step of the subsampled Gaussian.
pub fn pld_from_hockey_stick(
    q: f64,
    sigma: f64,
    direction: Direction,
    value_step: f64,
    tail_mass: f64,
) -> Result<PrivacyLossDistribution, AccountantError> {
    if !(q > 0.0 && q <= 1.0) || !(sigma > 0.0) || !(value_step > 0.0) {
        return Err(AccountantError::InvalidInput(format!(
            "need q in (0,1], sigma > 0, step > 0; got q={q}, sigma={sigma}, step={value_step}"
        )));
    }
    let (lo, hi) = grid_bounds(q, sigma, direction, value_step, tail_mass)?;
    let deltas: Vec<f64> = (lo..=hi)
        .map(|k| hockey_stick_subsampled_gaussian(q, sigma, k as f64 * value_step, direction))
        .collect();
    let complements: Vec<f64> = (lo..=hi.min(1))
        .map(|k| hockey_stick_complement(q, sigma, k as f64 * value_step, direction))
        .collect();
    connect_the_dots(value_step, lo, &deltas, Some(&complements))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_pld(sigma: f64) -> PrivacyLossDistribution {
        pld_from_hockey_stick(1.0, sigma, Direction::Remove, DEFAULT_VALUE_STEP, 1e-15).unwrap()
    }

    #[test]
    fn reconstructs_curve_at_grid_points() {
        for (q, s, dir) in [
            (1.0, 1.0, Direction::Remove),
            (0.05, 0.9, Direction::Remove),
            (0.05, 0.9, Direction::Add),
        ] {
            let h = 1e-3;
            let pld = pld_from_hockey_stick(q, s, dir, h, 1e-14).unwrap();
            assert!((pld.total_mass() - 1.0).abs() < 1e-12, "{}", pld.total_mass());
            for i in (0..pld.len()).step_by(7) {
                let eps = pld.loss(i);
                let want = hockey_stick_subsampled_gaussian(q, s, eps, dir);
                let got = pld.delta(eps);
                assert!((got - want).abs() < 1e-10, "{q} {s} {dir:?} eps {eps}: {got} vs {want}");
            }
            assert_eq!(pld.delta(pld.highest_loss()), pld.infinity_mass());
        }
    }

    #[test]
    fn single_gaussian_delta_at_one() {
        let pld = gaussian_pld(1.0);
        let want = hockey_stick_subsampled_gaussian(1.0, 1.0, 1.0, Direction::Remove);
        assert!((pld.delta(1.0) - want).abs() / want < 1e-3);
    }

    #[test]
    fn upper_bounds_curve_off_grid() {
        let pld = pld_from_hockey_stick(0.1, 1.0, Direction::Remove, 1e-2, 1e-14).unwrap();
        for k in 0..100 {
            let eps = -0.05 + 0.0371 * k as f64;
            let truth = hockey_stick_subsampled_gaussian(0.1, 1.0, eps, Direction::Remove);
            assert!(pld.delta(eps) >= truth - 1e-14);
        }
    }

    #[test]
    fn epsilon_inverts_delta() {
        let pld = gaussian_pld(1.0).self_compose(3, 1e-15).unwrap();
        for d in [1e-2, 1e-4, 1e-6, 1e-9] {
            let e = pld.epsilon(d);
            assert!(pld.delta(e) <= d * (1.0 + 1e-9));
            assert!(pld.delta(e - 1e-3) > d);
        }
    }

    #[test]
    fn epsilon_infinite_below_atom() {
        let pld = PrivacyLossDistribution::new(0.1, 0, vec![0.5, 0.4], 0.1).unwrap();
        assert_eq!(pld.epsilon(0.05), f64::INFINITY);
        assert_eq!(pld.delta(pld.highest_loss()), 0.1);
        assert!(pld.epsilon(0.1) <= pld.highest_loss());
    }

    #[test]
    fn composition_basics() {
        let pld = pld_from_hockey_stick(0.2, 1.0, Direction::Remove, 1e-3, 1e-14).unwrap();
        assert_eq!(pld.self_compose(1, 1e-15).unwrap(), pld);
        let c = pld.self_compose(5, 1e-15).unwrap();
        assert!(c.infinity_mass() >= pld.infinity_mass());
        assert!((c.total_mass() - 1.0).abs() < 1e-10);
        let id = PrivacyLossDistribution::identity(1e-3);
        let same = pld.compose(&id, 0.0).unwrap();
        for k in 0..50 {
            let eps = -0.2 + 0.05 * k as f64;
            assert!((same.delta(eps) - pld.delta(eps)).abs() < 1e-15);
        }
        assert!(pld.self_compose(0, 1e-15).is_err());
    }

    #[test]
    fn fft_matches_direct_convolution() {
        let a: Vec<f64> = (0..300).map(|i| ((i * 7 % 11) as f64) / 100.0).collect();
        let b: Vec<f64> = (0..500).map(|i| ((i * 3 % 13) as f64) / 50.0).collect();
        let fft = convolve(&a, &b).unwrap();
        let mut direct = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                direct[i + j] += x * y;
            }
        }
        for (x, y) in fft.iter().zip(&direct) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn non_convex_curve_fails() {
        // delta must be convex in e^eps; a bump in the middle breaks it.
        let deltas = [0.5, 0.2, 0.3, 0.0];
        assert!(matches!(
            pld_from_curve(0.1, 0, &deltas),
            Err(AccountantError::DiscretizationFailure(_))
        ));
    }
}
