//! Seeded random streams.
//!
//! Every consumer draws from its own ChaCha stream derived from a `(seed, stream)`
//! pair, so sampling, noise and initialization never interleave and replays are
//! bit-identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Stream ids for the independent generators a training run owns.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SAMPLING: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const LABELS: u64 = 5;
    pub const SYNTH: u64 = 6;
}

pub type DetRng = ChaCha12Rng;

pub fn seeded(seed: u64, stream: u64) -> DetRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Box–Muller standard normal sampler. Both values of each pair are used.
#[derive(Debug, Clone)]
pub struct Gaussian {
    rng: DetRng,
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new(rng: DetRng) -> Self {
        Self { rng, spare: None }
    }

    pub fn from_seed(seed: u64, stream: u64) -> Self {
        Self::new(seeded(seed, stream))
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Adds `std * z` to every entry of `out`.
    pub fn add_noise(&mut self, out: &mut [f64], std: f64) {
        if std == 0.0 {
            return;
        }
        for v in out.iter_mut() {
            *v += std * self.sample();
        }
    }
}
