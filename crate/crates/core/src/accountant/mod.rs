//! Privacy accounting for Poisson-subsampled Gaussian DP-SGD: PLD
//! (connect-the-dots, FFT composition) and RDP, noise calibration, batch sweeps.

mod calibrate;
mod gaussian;
mod pld;
mod rdp;
mod sweep;

pub use calibrate::{calibrate_sigma, compare_methods, MethodComparison, SIGMA_MAX};
pub use gaussian::{hockey_stick_subsampled_gaussian, Direction};
pub use pld::{pld_from_curve, pld_from_hockey_stick, PrivacyLossDistribution, DEFAULT_VALUE_STEP};
pub use rdp::{rdp_epsilon, rdp_subsampled_gaussian, RdpCurve, RDP_ORDERS};
pub use sweep::{sweep_batch_noise, write_sweep_csv, SweepMode, SweepRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AccountantError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("PLD discretization failed: {0}")]
    DiscretizationFailure(String),
    #[error("grid too fine: {0}")]
    GridTooFine(String),
    #[error("no noise multiplier up to {max} reaches epsilon {target}")]
    CalibrationOutOfRange { target: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccountingMethod {
    Pld,
    Rdp,
}

impl std::str::FromStr for AccountingMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pld" => Ok(Self::Pld),
            "rdp" => Ok(Self::Rdp),
            other => Err(format!("unknown accounting method {other:?} (pld|rdp)")),
        }
    }
}

/// `steps` compositions of the subsampled Gaussian with rate `q` and multiplier `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
}

impl MechanismSpec {
    pub fn validate(&self) -> Result<(), AccountantError> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(AccountantError::InvalidInput(format!(
                "sampling probability {} outside (0, 1]",
                self.q
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(AccountantError::InvalidInput(format!(
                "noise multiplier {} must be positive",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Discard budget for PLD construction and composition, as a fraction of the
/// queried delta.
const DISCARD_FRACTION: f64 = 1e-4;
/// Discard budget when no delta is known (delta queries).
const DEFAULT_DISCARD: f64 = 1e-14;

/// PLD settings: grid step and the total probability mass that may be moved
/// pessimistically (grid ends and per-convolution tails).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PldOptions {
    pub value_step: f64,
    pub discard_budget: f64,
}

impl Default for PldOptions {
    fn default() -> Self {
        Self {
            value_step: DEFAULT_VALUE_STEP,
            discard_budget: DEFAULT_DISCARD,
        }
    }
}

impl PldOptions {
    pub fn for_delta(delta: f64) -> Self {
        Self {
            value_step: DEFAULT_VALUE_STEP,
            discard_budget: (delta * DISCARD_FRACTION).min(DEFAULT_DISCARD * 1e4),
        }
    }
}

/// PLD of `spec.steps` compositions for one adjacency direction. Half the discard
/// budget bounds the single-step grid ends (scaled by the step count), the other
/// half is split across the convolutions.
pub fn composed_pld(
    spec: &MechanismSpec,
    direction: Direction,
    opts: &PldOptions,
) -> Result<PrivacyLossDistribution, AccountantError> {
    spec.validate()?;
    let steps = spec.steps.max(1);
    let grid_tail = opts.discard_budget / (2.0 * steps as f64);
    let convolutions = 2 * (64 - steps.leading_zeros() as u64) + 2;
    let conv_tail = opts.discard_budget / (2.0 * convolutions as f64);
    let single = pld_from_hockey_stick(spec.q, spec.sigma, direction, opts.value_step, grid_tail)?;
    single.self_compose(steps, conv_tail)
}

/// Epsilon for each adjacency direction and the reported maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub remove: f64,
    pub add: f64,
}

fn for_both<T>(
    spec: &MechanismSpec,
    mut f: impl FnMut(Direction) -> Result<T, AccountantError>,
) -> Result<(T, T), AccountantError>
where
    T: Clone,
{
    let remove = f(Direction::Remove)?;
    // Without subsampling the two directions are the same Gaussian pair.
    let add = if spec.q == 1.0 {
        remove.clone()
    } else {
        f(Direction::Add)?
    };
    Ok((remove, add))
}

pub fn pld_epsilon(
    spec: &MechanismSpec,
    delta: f64,
    value_step: f64,
) -> Result<EpsilonReport, AccountantError> {
    check_delta(delta)?;
    spec.validate()?;
    if spec.steps == 0 {
        return Ok(EpsilonReport {
            epsilon: 0.0,
            remove: 0.0,
            add: 0.0,
        });
    }
    let opts = PldOptions {
        value_step,
        ..PldOptions::for_delta(delta)
    };
    let (remove, add) = for_both(spec, |d| {
        Ok(composed_pld(spec, d, &opts)?.epsilon(delta).max(0.0))
    })?;
    Ok(EpsilonReport {
        epsilon: remove.max(add),
        remove,
        add,
    })
}

pub fn pld_delta(spec: &MechanismSpec, epsilon: f64, value_step: f64) -> Result<f64, AccountantError> {
    spec.validate()?;
    if spec.steps == 0 {
        return Ok(0.0);
    }
    let opts = PldOptions {
        value_step,
        ..PldOptions::default()
    };
    let (remove, add) = for_both(spec, |d| Ok(composed_pld(spec, d, &opts)?.delta(epsilon)))?;
    Ok(remove.max(add))
}

pub fn rdp_epsilon_for(spec: &MechanismSpec, delta: f64) -> Result<f64, AccountantError> {
    check_delta(delta)?;
    spec.validate()?;
    Ok(RdpCurve::subsampled_gaussian(spec.q, spec.sigma).epsilon(spec.steps, delta))
}

/// Epsilon under the chosen accountant, default grid step for PLD.
pub fn epsilon(spec: &MechanismSpec, delta: f64, method: AccountingMethod) -> Result<f64, AccountantError> {
    match method {
        AccountingMethod::Pld => Ok(pld_epsilon(spec, delta, DEFAULT_VALUE_STEP)?.epsilon),
        AccountingMethod::Rdp => rdp_epsilon_for(spec, delta),
    }
}

fn check_delta(delta: f64) -> Result<(), AccountantError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(AccountantError::InvalidInput(format!("delta {delta} outside (0, 1)")))
    }
}

/// CLI-facing accounting result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountResult {
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub sigma: f64,
    pub q: f64,
    pub steps: u64,
    pub method: AccountingMethod,
    pub direction: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_is_free() {
        let spec = MechanismSpec {
            q: 0.1,
            sigma: 1.0,
            steps: 0,
        };
        assert_eq!(pld_epsilon(&spec, 1e-5, 1e-4).unwrap().epsilon, 0.0);
    }

    #[test]
    fn report_is_max_of_directions() {
        let spec = MechanismSpec {
            q: 0.05,
            sigma: 1.0,
            steps: 20,
        };
        let r = pld_epsilon(&spec, 1e-5, 1e-4).unwrap();
        assert!(r.epsilon >= r.remove && r.epsilon >= r.add);
        assert!(r.remove != r.add);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bad = MechanismSpec {
            q: 0.0,
            sigma: 1.0,
            steps: 1,
        };
        assert!(epsilon(&bad, 1e-5, AccountingMethod::Rdp).is_err());
        let ok = MechanismSpec { q: 0.5, ..bad };
        assert!(epsilon(&ok, 0.0, AccountingMethod::Pld).is_err());
        assert!(epsilon(&ok, 1.0, AccountingMethod::Rdp).is_err());
    }
}
