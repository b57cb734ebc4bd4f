use serde::{Deserialize, Serialize};

use super::{epsilon, AccountantError, AccountingMethod, MechanismSpec};

pub const SIGMA_MAX: f64 = 1e3;
const SIGMA_MIN: f64 = 1e-2;
const RELATIVE_TOLERANCE: f64 = 1e-3;
/// The returned sigma must spend at least this fraction of the target.
const MIN_SPEND: f64 = 0.99;

/// Smallest noise multiplier (to relative tolerance 1e-3) whose epsilon stays at or
/// below `target_eps`; the accountant's epsilon at the returned value lies in
/// `[0.99 target, target]`.
pub fn calibrate_sigma(
    target_eps: f64,
    delta: f64,
    q: f64,
    steps: u64,
    method: AccountingMethod,
) -> Result<f64, AccountantError> {
    if !(target_eps > 0.0) || !target_eps.is_finite() {
        return Err(AccountantError::InvalidInput(format!(
            "target epsilon {target_eps} must be positive"
        )));
    }
    let eps_at = |sigma: f64| epsilon(&MechanismSpec { q, sigma, steps }, delta, method);

    let mut hi_eps = eps_at(SIGMA_MAX)?;
    if hi_eps > target_eps {
        return Err(AccountantError::CalibrationOutOfRange {
            target: target_eps,
            max: SIGMA_MAX,
        });
    }
    // Bracket [lo, hi] with eps(lo) > target >= eps(hi), walking from sigma = 1.
    let (mut lo, mut hi) = (1.0, SIGMA_MAX);
    let e1 = eps_at(1.0)?;
    if e1 <= target_eps {
        hi = 1.0;
        hi_eps = e1;
        lo = 0.5;
        loop {
            let e = eps_at(lo)?;
            if e > target_eps {
                break;
            }
            hi = lo;
            hi_eps = e;
            if lo <= SIGMA_MIN {
                return Ok(hi);
            }
            lo /= 2.0;
        }
    } else {
        let mut s = 2.0;
        while s < SIGMA_MAX {
            let e = eps_at(s)?;
            if e <= target_eps {
                hi = s;
                hi_eps = e;
                break;
            }
            lo = s;
            s *= 2.0;
        }
    }
    for _ in 0..100 {
        if hi / lo - 1.0 <= RELATIVE_TOLERANCE && hi_eps >= MIN_SPEND * target_eps {
            break;
        }
        let mid = (lo * hi).sqrt();
        let e = eps_at(mid)?;
        if e <= target_eps {
            hi = mid;
            hi_eps = e;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Calibrated noise under both accountants for one target epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub epsilon: f64,
    pub sigma_pld: f64,
    pub sigma_rdp: f64,
}

pub fn compare_methods(
    targets: &[f64],
    delta: f64,
    q: f64,
    steps: u64,
) -> Result<Vec<MethodComparison>, AccountantError> {
    targets
        .iter()
        .map(|&epsilon| {
            Ok(MethodComparison {
                epsilon,
                sigma_pld: calibrate_sigma(epsilon, delta, q, steps, AccountingMethod::Pld)?,
                sigma_rdp: calibrate_sigma(epsilon, delta, q, steps, AccountingMethod::Rdp)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rdp_roundtrip_and_monotone() {
        let (delta, q, steps) = (1e-5, 0.01, 1000);
        let mut prev = f64::INFINITY;
        for target in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let s = calibrate_sigma(target, delta, q, steps, AccountingMethod::Rdp).unwrap();
            let e = epsilon(&MechanismSpec { q, sigma: s, steps }, delta, AccountingMethod::Rdp).unwrap();
            assert!(e <= target && e >= 0.99 * target, "{target}: {e}");
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(
            calibrate_sigma(1e-4, 1e-6, 1.0, 100_000, AccountingMethod::Rdp),
            Err(AccountantError::CalibrationOutOfRange { .. })
        ));
        assert!(calibrate_sigma(0.0, 1e-6, 0.1, 10, AccountingMethod::Rdp).is_err());
    }
}
