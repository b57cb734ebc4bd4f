use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{calibrate_sigma, AccountantError, AccountingMethod};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Steps follow the batch size: `T = ceil(E N / B)`.
    FixedEpochs(f64),
    FixedSteps(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: u64,
    pub q: f64,
    pub steps: u64,
    pub sigma: f64,
    /// Noise std on the averaged gradient at clip norm 1: `sigma / B`.
    pub effective_noise_std: f64,
}

pub fn sweep_batch_noise(
    n: u64,
    target_eps: f64,
    delta: f64,
    mode: SweepMode,
    batch_sizes: &[u64],
    method: AccountingMethod,
) -> Result<Vec<SweepRow>, AccountantError> {
    batch_sizes
        .iter()
        .map(|&b| {
            if b == 0 || b > n {
                return Err(AccountantError::InvalidInput(format!(
                    "batch size {b} outside 1..={n}"
                )));
            }
            let q = b as f64 / n as f64;
            let steps = match mode {
                SweepMode::FixedEpochs(e) => ((e * n as f64) / b as f64).ceil().max(1.0) as u64,
                SweepMode::FixedSteps(t) => t,
            };
            let sigma = calibrate_sigma(target_eps, delta, q, steps, method)?;
            Ok(SweepRow {
                batch_size: b,
                q,
                steps,
                sigma,
                effective_noise_std: sigma / b as f64,
            })
        })
        .collect()
}

/// CSV with header `B,sigma,effective_noise_std`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["B", "sigma", "effective_noise_std"])?;
    for r in rows {
        w.write_record([
            r.batch_size.to_string(),
            format!("{:.9e}", r.sigma),
            format!("{:.9e}", r.effective_noise_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape() {
        let rows = sweep_batch_noise(
            10_000,
            1.0,
            1e-4,
            SweepMode::FixedEpochs(1.0),
            &[100, 200],
            AccountingMethod::Rdp,
        )
        .unwrap();
        assert_eq!(rows[0].steps, 100);
        assert_eq!(rows[1].steps, 50);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("B,sigma,effective_noise_std\n100,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn rejects_oversized_batch() {
        assert!(sweep_batch_noise(10, 1.0, 1e-3, SweepMode::FixedSteps(1), &[11], AccountingMethod::Rdp).is_err());
    }
}
