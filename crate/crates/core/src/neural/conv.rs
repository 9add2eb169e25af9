use rand::Rng;

use super::{check_len, NeuralError, ParamTensor, Params};

/// Valid (unpadded), stride-1 1-D convolution of a `[T × d]` input with one
/// `[k × d]` kernel: `out[t] = bias + Σ input[t + j][c] · kernel[j][c]`.
pub fn conv1d_valid(
    input: &[f64],
    width: usize,
    kernel: &[f64],
    bias: f64,
) -> Result<Vec<f64>, NeuralError> {
    let (len, k) = conv_dims(input, width, kernel)?;
    Ok((0..=len - k)
        .map(|t| bias + dot(&input[t * width..(t + k) * width], kernel))
        .collect())
}

/// Gradients of [`conv1d_valid`]: `(d_input, d_kernel, d_bias)`.
pub fn conv1d_valid_backward(
    input: &[f64],
    width: usize,
    kernel: &[f64],
    d_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, f64), NeuralError> {
    let (len, k) = conv_dims(input, width, kernel)?;
    check_len("conv1d output gradient", len - k + 1, d_out.len())?;
    let mut d_input = vec![0.0; input.len()];
    let mut d_kernel = vec![0.0; kernel.len()];
    for (t, g) in d_out.iter().enumerate() {
        let window = t * width..(t + k) * width;
        axpy(*g, &input[window.clone()], &mut d_kernel);
        axpy(*g, kernel, &mut d_input[window]);
    }
    Ok((d_input, d_kernel, d_out.iter().sum()))
}

fn conv_dims(input: &[f64], width: usize, kernel: &[f64]) -> Result<(usize, usize), NeuralError> {
    if width == 0 || !input.len().is_multiple_of(width) || !kernel.len().is_multiple_of(width) || kernel.is_empty() {
        return Err(NeuralError::Shape {
            context: "conv1d row width".into(),
            expected: width,
            found: kernel.len(),
        });
    }
    let (len, k) = (input.len() / width, kernel.len() / width);
    if len < k {
        return Err(NeuralError::TooShort { len, kernel: k });
    }
    Ok((len, k))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// A bank of `filters` kernels of width `k` over `width`-dimensional rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBranch {
    /// `[filters × k × width]`
    pub kernel: ParamTensor,
    /// `[filters]`
    pub bias: ParamTensor,
}

impl ConvBranch {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        filters: usize,
        k: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        ConvBranch {
            kernel: ParamTensor::glorot(
                format!("{name}.kernel"),
                &[filters, k, width],
                k * width,
                filters,
                rng,
            ),
            bias: ParamTensor::zeros(format!("{name}.bias"), &[filters]),
        }
    }

    pub fn filters(&self) -> usize {
        self.kernel.shape[0]
    }

    pub fn width(&self) -> usize {
        self.kernel.shape[1]
    }

    pub fn row_dim(&self) -> usize {
        self.kernel.shape[2]
    }

    pub fn filter(&self, f: usize) -> &[f64] {
        let n = self.width() * self.row_dim();
        &self.kernel.values[f * n..(f + 1) * n]
    }
}

impl Params for ConvBranch {
    fn tensors(&self) -> Vec<&ParamTensor> {
        vec![&self.kernel, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.kernel, &mut self.bias]
    }
}
