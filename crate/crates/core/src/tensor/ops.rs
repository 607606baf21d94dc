//! Forward-only layer functions. The [`Tape`](super::Tape) records the same
//! computations with the activations needed for reverse mode.

use super::kernels::{self, ConvGeom};
use super::{nhwc, nhwc_shape, same_shape, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight kept on the old running statistic at each training batch.
pub const BN_MOMENTUM: f64 = 0.9;
/// Probabilities are clipped from below before taking logs.
pub const PROB_FLOOR: f32 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k-1)/2` on each side; spatial size is kept.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    initialized: bool,
}

impl BnState {
    /// State with no statistics yet; inference is refused until a training
    /// batch has been seen.
    pub fn uninitialized(channels: usize) -> Self {
        BnState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            initialized: false,
        }
    }

    /// Mean 0, variance 1: inference normalizes by the identity.
    pub fn standard(channels: usize) -> Self {
        BnState {
            initialized: true,
            ..Self::uninitialized(channels)
        }
    }

    pub fn from_stats(mean: Vec<f32>, var: Vec<f32>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::shape("running mean/var length mismatch"));
        }
        Ok(BnState {
            running_mean: mean,
            running_var: var,
            initialized: true,
        })
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub(crate) fn update(&mut self, mean: &[f64], var: &[f64]) {
        for c in 0..self.channels() {
            if self.initialized {
                self.running_mean[c] = (BN_MOMENTUM * self.running_mean[c] as f64
                    + (1.0 - BN_MOMENTUM) * mean[c]) as f32;
                self.running_var[c] = (BN_MOMENTUM * self.running_var[c] as f64
                    + (1.0 - BN_MOMENTUM) * var[c]) as f32;
            } else {
                self.running_mean[c] = mean[c] as f32;
                self.running_var[c] = var[c] as f32;
            }
        }
        self.initialized = true;
    }
}

pub(crate) fn conv_geom(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    padding: Padding,
) -> Result<ConvGeom> {
    let (n, h, w, cin) = nhwc(input.shape())?;
    let &[k, k2, kin, cout] = kernel.shape() else {
        return Err(Error::shape(format!(
            "conv kernel must be [k, k, Cin, Cout], got {:?}",
            kernel.shape()
        )));
    };
    if k != k2 || k % 2 == 0 {
        return Err(Error::shape(format!(
            "kernel must be square and odd, got {k}x{k2}"
        )));
    }
    if kin != cin {
        return Err(Error::shape(format!(
            "kernel expects {kin} input channels, input has {cin}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(format!(
            "bias must be [{cout}], got {:?}",
            bias.shape()
        )));
    }
    let pad = match padding {
        Padding::Same => (k - 1) / 2,
        Padding::Valid => {
            if h < k || w < k {
                return Err(Error::shape(format!(
                    "valid convolution needs at least {k}x{k} input, got {h}x{w}"
                )));
            }
            0
        }
    };
    Ok(ConvGeom {
        n,
        h,
        w,
        cin,
        cout,
        k,
        pad,
    })
}

/// Stride-1 cross-correlation of `[H, W, Cin]` (or batched) input with a
/// `[k, k, Cin, Cout]` kernel.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, padding: Padding) -> Result<Tensor> {
    let g = conv_geom(input, kernel, bias, padding)?;
    let cols = kernels::batch_im2col(input.data(), &g);
    let out = kernels::conv_from_cols(&cols, kernel.data(), bias.data(), &g);
    Tensor::new(&nhwc_shape(input.shape(), g.n, g.ho(), g.wo(), g.cout), out)
}

/// Geometry of the valid convolution whose adjoint is this transposed one.
pub(crate) fn conv_transpose_geom(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
) -> Result<ConvGeom> {
    let (n, h, w, cin) = nhwc(input.shape())?;
    let &[k, k2, cout, kin] = kernel.shape() else {
        return Err(Error::shape(format!(
            "transposed kernel must be [k, k, Cout, Cin], got {:?}",
            kernel.shape()
        )));
    };
    if k != k2 {
        return Err(Error::shape("transposed kernel must be square"));
    }
    if kin != cin {
        return Err(Error::shape(format!(
            "transposed kernel expects {kin} input channels, input has {cin}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(format!(
            "bias must be [{cout}], got {:?}",
            bias.shape()
        )));
    }
    Ok(ConvGeom {
        n,
        h: h + k - 1,
        w: w + k - 1,
        cin: cout,
        cout: cin,
        k,
        pad: 0,
    })
}

/// Stride-1 transposed convolution: `[H, W, Cin]` → `[H+k-1, W+k-1, Cout]`.
pub fn conv2d_transpose(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = conv_transpose_geom(input, kernel, bias)?;
    let out = kernels::conv_transpose_forward(input.data(), kernel.data(), bias.data(), &g);
    Tensor::new(&nhwc_shape(input.shape(), g.n, g.h, g.w, g.cin), out)
}

pub(crate) struct BnForward {
    pub output: Tensor,
    pub normalized: Vec<f32>,
    pub inv_std: Vec<f32>,
}

pub(crate) fn batch_norm_impl(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &mut BnState,
    mode: BnMode,
) -> Result<BnForward> {
    let channels = *input.shape().last().unwrap();
    if gamma.shape() != [channels] || beta.shape() != [channels] || state.channels() != channels {
        return Err(Error::shape(format!(
            "batch norm over {channels} channels got gamma {:?}, beta {:?}, state {}",
            gamma.shape(),
            beta.shape(),
            state.channels()
        )));
    }
    let (mean, var) = match mode {
        BnMode::Train => {
            let (mean, var) = kernels::channel_moments(input.data(), channels);
            state.update(&mean, &var);
            (mean, var)
        }
        BnMode::Infer => {
            if !state.is_initialized() {
                return Err(Error::invalid(
                    "batch norm inference requested before running statistics exist",
                ));
            }
            (
                state.running_mean.iter().map(|&v| v as f64).collect(),
                state.running_var.iter().map(|&v| v as f64).collect(),
            )
        }
    };
    let inv_std: Vec<f32> = var
        .iter()
        .map(|&v| (1.0 / (v + BN_EPSILON).sqrt()) as f32)
        .collect();
    let mean: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
    let mut normalized = vec![0.0; input.len()];
    let mut output = vec![0.0; input.len()];
    for ((x, xn), y) in input
        .data()
        .chunks(channels)
        .zip(normalized.chunks_mut(channels))
        .zip(output.chunks_mut(channels))
    {
        for c in 0..channels {
            xn[c] = (x[c] - mean[c]) * inv_std[c];
            y[c] = gamma.data()[c] * xn[c] + beta.data()[c];
        }
    }
    Ok(BnForward {
        output: Tensor::new(input.shape(), output)?,
        normalized,
        inv_std,
    })
}

/// Per-channel batch normalization over every axis but the last.
///
/// Train mode normalizes by batch statistics and folds them into `state`;
/// infer mode normalizes by the running statistics.
pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &mut BnState,
    mode: BnMode,
) -> Result<Tensor> {
    Ok(batch_norm_impl(input, gamma, beta, state, mode)?.output)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

/// Spatial mean per channel: `[H, W, C]` → `[C]`, `[N, H, W, C]` → `[N, C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = nhwc(input.shape())?;
    let data = gap_forward(input.data(), n, h * w, c);
    if input.rank() == 3 {
        Tensor::new(&[c], data)
    } else {
        Tensor::new(&[n, c], data)
    }
}

pub(crate) fn gap_forward(data: &[f32], n: usize, positions: usize, c: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * c);
    for inst in data.chunks(positions * c) {
        let sums = kernels::column_sums(inst, c);
        out.extend(sums.iter().map(|&s| s / positions as f32));
    }
    out
}

/// `[n]` or batched `[N, n]` input times a `[n, m]` weight, plus bias.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, n, m) = dense_dims(input, weight, bias)?;
    let out = dense_forward(input.data(), weight.data(), bias.data(), rows, n, m);
    if input.rank() == 1 {
        Tensor::new(&[m], out)
    } else {
        Tensor::new(&[rows, m], out)
    }
}

pub(crate) fn dense_dims(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize, usize)> {
    let (rows, n) = match *input.shape() {
        [n] => (1, n),
        [rows, n] => (rows, n),
        _ => {
            return Err(Error::shape(format!(
                "dense input must be [n] or [N, n], got {:?}",
                input.shape()
            )))
        }
    };
    let &[wn, m] = weight.shape() else {
        return Err(Error::shape("dense weight must be [n, m]"));
    };
    if wn != n {
        return Err(Error::shape(format!(
            "dense weight expects {wn} inputs, got {n}"
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(format!("dense bias must be [{m}]")));
    }
    Ok((rows, n, m))
}

pub(crate) fn dense_forward(
    input: &[f32],
    weight: &[f32],
    bias: &[f32],
    rows: usize,
    n: usize,
    m: usize,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * m);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    kernels::gemm(
        rows,
        n,
        m,
        input,
        kernels::row_major(n),
        weight,
        kernels::row_major(m),
        &mut out,
        true,
    );
    out
}

/// Row-wise softmax over the last axis, max-subtracted.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = *logits.shape().last().unwrap();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        softmax_row(row);
    }
    out
}

pub(crate) fn softmax_row(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        let e = ((*v - max) as f64).exp();
        *v = e as f32;
        sum += e;
    }
    for v in row.iter_mut() {
        *v = (*v as f64 / sum) as f32;
    }
}

pub(crate) fn check_onehot(prob: &Tensor, onehot: &Tensor) -> Result<()> {
    same_shape(prob, onehot)?;
    let c = *onehot.shape().last().unwrap();
    for (i, row) in onehot.data().chunks(c).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != c - 1 {
            return Err(Error::invalid(format!(
                "row {i} of the target is not one-hot"
            )));
        }
    }
    Ok(())
}

/// `−Σ y log max(p, 1e-12)`, averaged over rows when batched.
pub fn cross_entropy(prob: &Tensor, onehot: &Tensor) -> Result<f32> {
    check_onehot(prob, onehot)?;
    let c = *prob.shape().last().unwrap();
    let rows = prob.len() / c;
    let total: f64 = prob
        .data()
        .iter()
        .zip(onehot.data())
        .filter(|(_, &y)| y != 0.0)
        .map(|(&p, &y)| -(y as f64) * (p.max(PROB_FLOOR) as f64).ln())
        .sum();
    Ok((total / rows as f64) as f32)
}

/// Mean absolute elementwise difference.
pub fn l1_loss(x: &Tensor, xhat: &Tensor) -> Result<f32> {
    same_shape(x, xhat)?;
    Ok(l1_mean(x.data(), xhat.data()) as f32)
}

pub(crate) fn l1_mean(x: &[f32], xhat: &[f32]) -> f64 {
    let sum: f64 = x
        .iter()
        .zip(xhat)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    sum / x.len() as f64
}
