use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng::DetRng;

/// Poisson subsampling: each of the `n` indices is kept independently with
/// probability `q`. The batch may be empty.
pub fn poisson_sample(n: usize, q: f64, rng: &mut DetRng) -> Vec<usize> {
    assert!(q > 0.0 && q <= 1.0, "sampling probability {q} outside (0, 1]");
    let mut out = Vec::with_capacity(((n as f64) * q * 1.1) as usize + 8);
    for i in 0..n {
        // random() is in [0, 1), so q = 1 keeps everything.
        if rng.random::<f64>() < q {
            out.push(i);
        }
    }
    out
}

/// Fixed-size batches over per-epoch shuffles, for non-private training.
/// The last batch of an epoch may be short.
#[derive(Debug, Clone)]
pub struct ShuffleBatcher {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: DetRng,
}

impl ShuffleBatcher {
    pub fn new(n: usize, batch_size: usize, rng: DetRng) -> Self {
        assert!(batch_size > 0);
        let mut b = Self {
            order: (0..n).collect(),
            cursor: n,
            batch_size,
            rng,
        };
        b.reshuffle();
        b
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}
