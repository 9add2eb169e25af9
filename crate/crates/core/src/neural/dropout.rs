use rand::{Rng, RngCore};

/// Whether a forward pass is for training (dropout active, masks drawn from
/// the given generator) or evaluation.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    /// Inverted-dropout mask, or `None` in evaluation mode or when `rate` is 0.
    pub fn mask(&mut self, n: usize, rate: f64) -> Option<Vec<f64>> {
        match self {
            Mode::Train(rng) if rate > 0.0 => Some(dropout_mask(n, rate, &mut **rng)),
            _ => None,
        }
    }
}

/// Each entry is 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

pub(crate) fn apply_mask(x: &mut [f64], mask: Option<&Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}
