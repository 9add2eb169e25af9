use rand::Rng;

use super::{check_len, NeuralError, ParamTensor, Params};

/// Fully connected layer `y = x W + b`, with `W` stored as `[in × out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Dense {
            weight: ParamTensor::glorot(
                format!("{name}.weight"),
                &[inputs, outputs],
                inputs,
                outputs,
                rng,
            ),
            bias: ParamTensor::zeros(format!("{name}.bias"), &[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        check_len(&self.weight.name, self.inputs(), x.len())?;
        let out = self.outputs();
        let mut y = self.bias.values.clone();
        for (xi, row) in x.iter().zip(self.weight.values.chunks_exact(out)) {
            if *xi != 0.0 {
                for (yj, w) in y.iter_mut().zip(row) {
                    *yj += xi * w;
                }
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let out = self.outputs();
        for (g, d) in grad.bias.values.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; x.len()];
        for (i, (xi, row)) in x
            .iter()
            .zip(self.weight.values.chunks_exact(out))
            .enumerate()
        {
            let grow = &mut grad.weight.values[i * out..(i + 1) * out];
            let mut acc = 0.0;
            for ((g, w), d) in grow.iter_mut().zip(row).zip(dy) {
                *g += xi * d;
                acc += w * d;
            }
            dx[i] = acc;
        }
        dx
    }
}

impl Params for Dense {
    fn tensors(&self) -> Vec<&ParamTensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}
