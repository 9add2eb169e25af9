use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{axpy, dot};
use super::dropout::apply_mask;
use super::{check_len, ConvBranch, Dense, Mode, NeuralError, ParamTensor, Params};
use crate::features::CHAR_VOCAB_SIZE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharEncoderConfig {
    /// Width of the learned character embedding.
    pub char_dim: usize,
    /// Filters per convolution branch.
    pub filters: usize,
    /// Kernel width of each branch.
    pub kernels: Vec<usize>,
    /// Length of the produced character-level word vector.
    pub output_dim: usize,
}

impl Default for CharEncoderConfig {
    fn default() -> Self {
        CharEncoderConfig {
            char_dim: 25,
            filters: 15,
            kernels: vec![3, 5, 7],
            output_dim: 45,
        }
    }
}

impl CharEncoderConfig {
    pub fn max_kernel(&self) -> usize {
        self.kernels.iter().copied().max().unwrap_or(1)
    }
}

/// Multi-branch character CNN: embedding lookup, parallel convolutions with
/// tanh and global max pooling, concatenation, dense + tanh, dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct CharEncoder {
    /// `[97 × char_dim]`
    pub embedding: ParamTensor,
    pub branches: Vec<ConvBranch>,
    pub dense: Dense,
}

#[derive(Debug, Clone)]
pub struct CharEncoderCache {
    chars: Vec<usize>,
    embedded: Vec<f64>,
    /// Winning window start per (branch, filter).
    argmax: Vec<usize>,
    pooled: Vec<f64>,
    activated: Vec<f64>,
    mask: Option<Vec<f64>>,
}

impl CharEncoder {
    pub fn new<R: Rng + ?Sized>(prefix: &str, config: &CharEncoderConfig, rng: &mut R) -> Self {
        let d = config.char_dim;
        let embedding = ParamTensor::glorot(
            format!("{prefix}.embedding"),
            &[CHAR_VOCAB_SIZE, d],
            CHAR_VOCAB_SIZE,
            d,
            rng,
        );
        let branches = config
            .kernels
            .iter()
            .map(|&k| ConvBranch::new(&format!("{prefix}.conv{k}"), config.filters, k, d, rng))
            .collect();
        let dense = Dense::new(
            &format!("{prefix}.dense"),
            config.filters * config.kernels.len(),
            config.output_dim,
            rng,
        );
        CharEncoder {
            embedding,
            branches,
            dense,
        }
    }

    pub fn char_dim(&self) -> usize {
        self.embedding.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.dense.outputs()
    }

    pub fn forward(
        &self,
        chars: &[usize],
        mode: &mut Mode<'_>,
        dropout_rate: f64,
    ) -> Result<(Vec<f64>, CharEncoderCache), NeuralError> {
        let d = self.char_dim();
        let len = chars.len();
        let mut embedded = Vec::with_capacity(len * d);
        for &c in chars {
            if c >= CHAR_VOCAB_SIZE {
                return Err(NeuralError::Shape {
                    context: "character index".into(),
                    expected: CHAR_VOCAB_SIZE,
                    found: c,
                });
            }
            embedded.extend_from_slice(&self.embedding.values[c * d..(c + 1) * d]);
        }
        let total_filters: usize = self.branches.iter().map(ConvBranch::filters).sum();
        let mut pooled = Vec::with_capacity(total_filters);
        let mut argmax = Vec::with_capacity(total_filters);
        for branch in &self.branches {
            check_len("char conv row width", d, branch.row_dim())?;
            let k = branch.width();
            if len < k {
                return Err(NeuralError::TooShort { len, kernel: k });
            }
            for f in 0..branch.filters() {
                let kernel = branch.filter(f);
                let bias = branch.bias.values[f];
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0;
                for t in 0..=len - k {
                    let z = bias + dot(&embedded[t * d..(t + k) * d], kernel);
                    if z > best {
                        best = z;
                        best_at = t;
                    }
                }
                // tanh is monotone, so pooling pre-activations picks the same window.
                pooled.push(best.tanh());
                argmax.push(best_at);
            }
        }
        let mut activated = self.dense.forward(&pooled)?;
        activated.iter_mut().for_each(|v| *v = v.tanh());
        let mask = mode.mask(activated.len(), dropout_rate);
        let mut out = activated.clone();
        apply_mask(&mut out, mask.as_ref());
        Ok((
            out,
            CharEncoderCache {
                chars: chars.to_vec(),
                embedded,
                argmax,
                pooled,
                activated,
                mask,
            },
        ))
    }

    pub fn backward(&self, cache: &CharEncoderCache, d_out: &[f64], grad: &mut CharEncoder) {
        let d = self.char_dim();
        let mut d_act = d_out.to_vec();
        apply_mask(&mut d_act, cache.mask.as_ref());
        for (g, a) in d_act.iter_mut().zip(&cache.activated) {
            *g *= 1.0 - a * a;
        }
        let d_pooled = self.dense.backward(&cache.pooled, &d_act, &mut grad.dense);
        let mut d_embedded = vec![0.0; cache.embedded.len()];
        let mut idx = 0;
        for (branch, gbranch) in self.branches.iter().zip(grad.branches.iter_mut()) {
            let k = branch.width();
            let n = k * d;
            for f in 0..branch.filters() {
                let p = cache.pooled[idx];
                let g = d_pooled[idx] * (1.0 - p * p);
                let t = cache.argmax[idx];
                idx += 1;
                if g == 0.0 {
                    continue;
                }
                let window = t * d..t * d + n;
                axpy(
                    g,
                    &cache.embedded[window.clone()],
                    &mut gbranch.kernel.values[f * n..(f + 1) * n],
                );
                gbranch.bias.values[f] += g;
                axpy(g, branch.filter(f), &mut d_embedded[window]);
            }
        }
        for (pos, &c) in cache.chars.iter().enumerate() {
            axpy(
                1.0,
                &d_embedded[pos * d..(pos + 1) * d],
                &mut grad.embedding.values[c * d..(c + 1) * d],
            );
        }
    }
}

impl Params for CharEncoder {
    fn tensors(&self) -> Vec<&ParamTensor> {
        let mut out = vec![&self.embedding];
        for b in &self.branches {
            out.extend(b.tensors());
        }
        out.extend(self.dense.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = vec![&mut self.embedding];
        for b in &mut self.branches {
            out.extend(b.tensors_mut());
        }
        out.extend(self.dense.tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = CharEncoder::new("char", &CharEncoderConfig::default(), &mut rng).zeros_like();
        let (out, _) = enc.forward(&[0; 30], &mut Mode::Eval, 0.5).unwrap();
        assert_eq!(out, vec![0.0; 45]);
    }

    #[test]
    fn default_output_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = CharEncoder::new("char", &CharEncoderConfig::default(), &mut rng);
        let (out, _) = enc
            .forward(&[2, 3, 4, 0, 0, 0, 0, 0], &mut Mode::Eval, 0.5)
            .unwrap();
        assert_eq!(out.len(), 45);
        assert!(matches!(
            enc.forward(&[2, 3, 4], &mut Mode::Eval, 0.5),
            Err(NeuralError::TooShort { len: 3, .. })
        ));
    }

    #[test]
    fn eval_mode_is_deterministic_and_training_rescales() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = CharEncoder::new("char", &CharEncoderConfig::default(), &mut rng);
        let chars = [10, 20, 30, 40, 0, 0, 0, 0];
        let (a, _) = enc.forward(&chars, &mut Mode::Eval, 0.5).unwrap();
        let (b, _) = enc.forward(&chars, &mut Mode::Eval, 0.5).unwrap();
        assert_eq!(a, b);
        let (t, _) = enc
            .forward(&chars, &mut Mode::Train(&mut rng), 0.5)
            .unwrap();
        for (ti, ai) in t.iter().zip(&a) {
            assert!(*ti == 0.0 || (ti - 2.0 * ai).abs() < 1e-12);
        }
    }
}
