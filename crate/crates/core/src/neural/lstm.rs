use rand::Rng;

use super::conv::axpy;
use super::{check_len, sigmoid, NeuralError, ParamTensor, Params};

/// LSTM cell weights. Gate blocks are ordered input, forget, candidate, output
/// along the `4 × units` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `[inputs × 4·units]`
    pub input_weight: ParamTensor,
    /// `[units × 4·units]`
    pub recurrent_weight: ParamTensor,
    /// `[4·units]`
    pub bias: ParamTensor,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i | f | g | o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Per-step caches of one direction, in processing order.
#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<LstmStepCache>,
    reverse: bool,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, units: usize, rng: &mut R) -> Self {
        let mut bias = ParamTensor::zeros(format!("{name}.bias"), &[4 * units]);
        bias.values[units..2 * units]
            .iter_mut()
            .for_each(|b| *b = 1.0);
        Lstm {
            input_weight: ParamTensor::glorot(
                format!("{name}.input_weight"),
                &[inputs, 4 * units],
                inputs,
                4 * units,
                rng,
            ),
            recurrent_weight: ParamTensor::glorot(
                format!("{name}.recurrent_weight"),
                &[units, 4 * units],
                units,
                4 * units,
                rng,
            ),
            bias,
        }
    }

    pub fn inputs(&self) -> usize {
        self.input_weight.shape[0]
    }

    pub fn units(&self) -> usize {
        self.recurrent_weight.shape[0]
    }

    pub fn step(
        &self,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache), NeuralError> {
        let u = self.units();
        check_len(&self.input_weight.name, self.inputs(), x.len())?;
        check_len(&self.recurrent_weight.name, u, h.len())?;
        check_len("lstm cell state", u, c.len())?;
        let mut z = self.bias.values.clone();
        for (xi, row) in x.iter().zip(self.input_weight.values.chunks_exact(4 * u)) {
            axpy(*xi, row, &mut z);
        }
        for (hi, row) in h
            .iter()
            .zip(self.recurrent_weight.values.chunks_exact(4 * u))
        {
            axpy(*hi, row, &mut z);
        }
        for (j, v) in z.iter_mut().enumerate() {
            *v = if (2 * u..3 * u).contains(&j) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        let (i, rest) = z.split_at(u);
        let (f, rest) = rest.split_at(u);
        let (g, o) = rest.split_at(u);
        let c_new: Vec<f64> = (0..u).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f64> = (0..u).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmStepCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            c_prev: c.to_vec(),
            gates: z,
            tanh_c,
        };
        Ok((h_new, c_new, cache))
    }

    /// Backpropagates one step given `dL/dh'` and `dL/dc'`; returns
    /// `(dL/dx, dL/dh, dL/dc)`.
    pub fn step_backward(
        &self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc_next: &[f64],
        grad: &mut Lstm,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let u = self.units();
        let gates = &cache.gates;
        let mut dz = vec![0.0; 4 * u];
        let mut dc_prev = vec![0.0; u];
        for k in 0..u {
            let (i, f, g, o) = (gates[k], gates[u + k], gates[2 * u + k], gates[3 * u + k]);
            let tc = cache.tanh_c[k];
            let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
            dz[k] = dc * g * i * (1.0 - i);
            dz[u + k] = dc * cache.c_prev[k] * f * (1.0 - f);
            dz[2 * u + k] = dc * i * (1.0 - g * g);
            dz[3 * u + k] = dh[k] * tc * o * (1.0 - o);
            dc_prev[k] = dc * f;
        }
        axpy(1.0, &dz, &mut grad.bias.values);
        let dx = outer_backward(
            &cache.x,
            &dz,
            &self.input_weight.values,
            &mut grad.input_weight.values,
        );
        let dh_prev = outer_backward(
            &cache.h_prev,
            &dz,
            &self.recurrent_weight.values,
            &mut grad.recurrent_weight.values,
        );
        (dx, dh_prev, dc_prev)
    }

    /// Runs the cell over `xs` from zero state, right to left when `reverse`.
    /// Hidden states are returned in input order.
    pub fn forward_seq(
        &self,
        xs: &[Vec<f64>],
        reverse: bool,
    ) -> Result<(Vec<Vec<f64>>, LstmCache), NeuralError> {
        let u = self.units();
        let mut h = vec![0.0; u];
        let mut c = vec![0.0; u];
        let mut hs = vec![Vec::new(); xs.len()];
        let mut steps = Vec::with_capacity(xs.len());
        for idx in order(xs.len(), reverse) {
            let (h2, c2, cache) = self.step(&xs[idx], &h, &c)?;
            hs[idx] = h2.clone();
            h = h2;
            c = c2;
            steps.push(cache);
        }
        Ok((hs, LstmCache { steps, reverse }))
    }

    /// Backpropagation through time; `d_hs` is indexed like the inputs.
    pub fn backward_seq(
        &self,
        cache: &LstmCache,
        d_hs: &[Vec<f64>],
        grad: &mut Lstm,
    ) -> Vec<Vec<f64>> {
        let u = self.units();
        let n = cache.steps.len();
        let mut dxs = vec![Vec::new(); n];
        let mut dh_next = vec![0.0; u];
        let mut dc_next = vec![0.0; u];
        let idxs: Vec<usize> = order(n, cache.reverse).collect();
        for (step, &idx) in cache.steps.iter().zip(&idxs).rev() {
            let mut dh = d_hs[idx].clone();
            axpy(1.0, &dh_next, &mut dh);
            let (dx, dh_prev, dc_prev) = self.step_backward(step, &dh, &dc_next, grad);
            dxs[idx] = dx;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dxs
    }
}

fn order(n: usize, reverse: bool) -> Box<dyn DoubleEndedIterator<Item = usize>> {
    if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    }
}

// For z = v W with W `[len(v) × len(dz)]`: accumulates dW += v ⊗ dz, returns W dz.
fn outer_backward(v: &[f64], dz: &[f64], weight: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let n = dz.len();
    v.iter()
        .zip(weight.chunks_exact(n).zip(grad.chunks_exact_mut(n)))
        .map(|(vi, (row, grow))| {
            axpy(*vi, dz, grow);
            row.iter().zip(dz).map(|(w, d)| w * d).sum()
        })
        .collect()
}

impl Params for Lstm {
    fn tensors(&self) -> Vec<&ParamTensor> {
        vec![&self.input_weight, &self.recurrent_weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.input_weight,
            &mut self.recurrent_weight,
            &mut self.bias,
        ]
    }
}

/// One LSTM step from `(h, c)` on input `x`.
pub fn lstm_step(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    params: &Lstm,
) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
    params.step(x, h, c).map(|(h, c, _)| (h, c))
}

/// Independent left-to-right and right-to-left LSTMs; each output row is
/// `[h_forward | h_backward]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    forward: LstmCache,
    backward: LstmCache,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, units: usize, rng: &mut R) -> Self {
        BiLstm {
            forward: Lstm::new(&format!("{name}.fwd"), inputs, units, rng),
            backward: Lstm::new(&format!("{name}.bwd"), inputs, units, rng),
        }
    }

    pub fn units(&self) -> usize {
        self.forward.units()
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, BiLstmCache), NeuralError> {
        let (hf, cf) = self.forward.forward_seq(xs, false)?;
        let (hb, cb) = self.backward.forward_seq(xs, true)?;
        let out = hf
            .into_iter()
            .zip(hb)
            .map(|(mut f, b)| {
                f.extend(b);
                f
            })
            .collect();
        Ok((
            out,
            BiLstmCache {
                forward: cf,
                backward: cb,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &BiLstmCache,
        d_out: &[Vec<f64>],
        grad: &mut BiLstm,
    ) -> Vec<Vec<f64>> {
        let u = self.units();
        let (df, db): (Vec<Vec<f64>>, Vec<Vec<f64>>) = d_out
            .iter()
            .map(|d| (d[..u].to_vec(), d[u..].to_vec()))
            .unzip();
        let mut dx = self
            .forward
            .backward_seq(&cache.forward, &df, &mut grad.forward);
        let dxb = self
            .backward
            .backward_seq(&cache.backward, &db, &mut grad.backward);
        for (a, b) in dx.iter_mut().zip(&dxb) {
            axpy(1.0, b, a);
        }
        dx
    }
}

impl Params for BiLstm {
    fn tensors(&self) -> Vec<&ParamTensor> {
        let mut out = self.forward.tensors();
        out.extend(self.backward.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = self.forward.tensors_mut();
        out.extend(self.backward.tensors_mut());
        out
    }
}
