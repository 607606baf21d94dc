//! Reverse-mode differentiation over a linear record of executed ops.

use super::kernels::{self, ConvGeom};
use super::ops::{self, BnMode, BnState, Padding, PROB_FLOOR};
use super::{nhwc, nhwc_shape, same_shape, Parameter, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(usize),
    Conv {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f32>,
    },
    ConvTranspose {
        x: Var,
        k: Var,
        b: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        normalized: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Relu(Var),
    Add(Var, Var),
    GlobalAvgPool(Var),
    Reshape(Var),
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Softmax(Var),
    CrossEntropy {
        p: Var,
        onehot: Tensor,
    },
    L1 {
        pred: Var,
        target: Tensor,
    },
    WeightedSum {
        a: Var,
        wa: f32,
        b: Var,
        wb: f32,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of a forward pass.
///
/// Parameters enter through [`Tape::param`] with an index into the slice
/// later handed to [`Tape::backward`]. A tape built with
/// [`Tape::inference`] keeps no activations and cannot be differentiated.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Records parameter `index` (position in the slice given to `backward`).
    pub fn param(&mut self, index: usize, p: &Parameter) -> Var {
        self.push(p.value.clone(), Op::Param(index))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, padding: Padding) -> Result<Var> {
        let (input, kernel, bias) = (self.value(x), self.value(k), self.value(b));
        let geom = ops::conv_geom(input, kernel, bias, padding)?;
        let cols = kernels::batch_im2col(input.data(), &geom);
        let out = kernels::conv_from_cols(&cols, kernel.data(), bias.data(), &geom);
        let shape = nhwc_shape(input.shape(), geom.n, geom.ho(), geom.wo(), geom.cout);
        let value = Tensor::new(&shape, out)?;
        let cols = if self.recording { cols } else { Vec::new() };
        Ok(self.push(
            value,
            Op::Conv {
                x,
                k,
                b,
                geom,
                cols,
            },
        ))
    }

    pub fn conv2d_transpose(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (input, kernel, bias) = (self.value(x), self.value(k), self.value(b));
        let geom = ops::conv_transpose_geom(input, kernel, bias)?;
        let out = kernels::conv_transpose_forward(input.data(), kernel.data(), bias.data(), &geom);
        let shape = nhwc_shape(input.shape(), geom.n, geom.h, geom.w, geom.cin);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::ConvTranspose { x, k, b, geom }))
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState,
        mode: BnMode,
    ) -> Result<Var> {
        let fwd = ops::batch_norm_impl(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            state,
            mode,
        )?;
        let (normalized, inv_std) = if self.recording {
            (fwd.normalized, fwd.inv_std)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(self.push(
            fwd.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                normalized,
                inv_std,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        self.push(value, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let value = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let value = ops::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(value, Op::Dense { x, w, b }))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let value = ops::softmax(self.value(x));
        self.push(value, Op::Softmax(x))
    }

    /// Mean cross-entropy over rows.
    pub fn cross_entropy(&mut self, p: Var, onehot: &Tensor) -> Result<Var> {
        let loss = ops::cross_entropy(self.value(p), onehot)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                p,
                onehot: onehot.clone(),
            },
        ))
    }

    /// Mean absolute error of `pred` against a constant target.
    pub fn l1_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let loss = ops::l1_loss(target, self.value(pred))?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::L1 {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// `wa·a + wb·b` for two scalars.
    pub fn weighted_sum(&mut self, a: Var, wa: f32, b: Var, wb: f32) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != 1 || tb.len() != 1 {
            return Err(Error::shape("weighted_sum expects scalars"));
        }
        let v = (wa as f64 * ta.data()[0] as f64 + wb as f64 * tb.data()[0] as f64) as f32;
        Ok(self.push(Tensor::scalar(v), Op::WeightedSum { a, wa, b, wb }))
    }

    /// Back-propagates from the scalar `loss` and overwrites `grad` of every
    /// parameter in `params` (untouched parameters get zero gradient).
    pub fn backward(&self, loss: Var, params: &mut [Parameter]) -> Result<()> {
        if !self.recording {
            return Err(Error::invalid("backward on an inference tape"));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid("backward without a recorded forward pass"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape("backward requires a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for p in params.iter_mut() {
            p.zero_grad();
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Param(index) => {
                    let p = params.get_mut(*index).ok_or_else(|| {
                        Error::invalid(format!("tape references missing parameter {index}"))
                    })?;
                    if p.grad.len() != g.len() {
                        return Err(Error::shape(format!("parameter {index} changed shape")));
                    }
                    for (d, s) in p.grad.data_mut().iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::Conv {
                    x,
                    k,
                    b,
                    geom,
                    cols,
                } => {
                    let (dx, dk, db) =
                        kernels::conv_backward(cols, self.value(*k).data(), &g, geom);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *b, db);
                }
                Op::ConvTranspose { x, k, b, geom } => {
                    let (dx, dk, db) = kernels::conv_transpose_backward(
                        self.value(*x).data(),
                        self.value(*k).data(),
                        &g,
                        geom,
                    );
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *b, db);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mode,
                    normalized,
                    inv_std,
                } => {
                    let (dx, dgamma, dbeta) =
                        bn_backward(&g, normalized, inv_std, self.value(*gamma).data(), *mode);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::Relu(x) => {
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::GlobalAvgPool(x) => {
                    let (n, h, w, c) = nhwc(self.value(*x).shape())?;
                    let scale = 1.0 / (h * w) as f32;
                    let mut dx = Vec::with_capacity(n * h * w * c);
                    for row in g.chunks(c) {
                        for _ in 0..h * w {
                            dx.extend(row.iter().map(|v| v * scale));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, g),
                Op::Dense { x, w, b } => {
                    let (rows, n, m) =
                        ops::dense_dims(self.value(*x), self.value(*w), self.value(*b))?;
                    let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                    let mut dw = vec![0.0; n * m];
                    kernels::gemm(
                        n,
                        rows,
                        m,
                        xv,
                        kernels::transposed(n),
                        &g,
                        kernels::row_major(m),
                        &mut dw,
                        false,
                    );
                    let mut dx = vec![0.0; rows * n];
                    kernels::gemm(
                        rows,
                        m,
                        n,
                        &g,
                        kernels::row_major(m),
                        wv,
                        kernels::transposed(m),
                        &mut dx,
                        false,
                    );
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, kernels::column_sums(&g, m));
                }
                Op::Softmax(x) => {
                    let p = node.value.data();
                    let c = *node.value.shape().last().unwrap();
                    let mut dx = vec![0.0; p.len()];
                    for ((pr, gr), dr) in p.chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                        let dot: f64 = pr.iter().zip(gr).map(|(&a, &b)| a as f64 * b as f64).sum();
                        for i in 0..c {
                            dr[i] = (pr[i] as f64 * (gr[i] as f64 - dot)) as f32;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::CrossEntropy { p, onehot } => {
                    let pv = self.value(*p);
                    let c = *pv.shape().last().unwrap();
                    let rows = (pv.len() / c) as f32;
                    let dp = pv
                        .data()
                        .iter()
                        .zip(onehot.data())
                        .map(|(&pi, &yi)| {
                            if yi == 0.0 || pi < PROB_FLOOR {
                                0.0
                            } else {
                                -g[0] * yi / (pi * rows)
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *p, dp);
                }
                Op::L1 { pred, target } => {
                    let pv = self.value(*pred).data();
                    let scale = g[0] / pv.len() as f32;
                    let dp = pv
                        .iter()
                        .zip(target.data())
                        .map(|(&a, &t)| {
                            if a > t {
                                scale
                            } else if a < t {
                                -scale
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *pred, dp);
                }
                Op::WeightedSum { a, wa, b, wb } => {
                    accumulate(&mut grads, *a, vec![g[0] * wa]);
                    accumulate(&mut grads, *b, vec![g[0] * wb]);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(&g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn bn_backward(
    g: &[f32],
    normalized: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    mode: BnMode,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let c = gamma.len();
    let count = (g.len() / c) as f64;
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (gr, nr) in g.chunks(c).zip(normalized.chunks(c)) {
        for i in 0..c {
            dgamma[i] += gr[i] as f64 * nr[i] as f64;
            dbeta[i] += gr[i] as f64;
        }
    }
    let mut dx = vec![0.0f32; g.len()];
    match mode {
        BnMode::Infer => {
            for (dr, gr) in dx.chunks_mut(c).zip(g.chunks(c)) {
                for i in 0..c {
                    dr[i] = gr[i] * gamma[i] * inv_std[i];
                }
            }
        }
        BnMode::Train => {
            // dx = γ·s/m · (m·g − Σg − x̂·Σ(g·x̂))
            for (dr, (gr, nr)) in dx.chunks_mut(c).zip(g.chunks(c).zip(normalized.chunks(c))) {
                for i in 0..c {
                    let v = gamma[i] as f64 * inv_std[i] as f64 / count
                        * (count * gr[i] as f64 - dbeta[i] - nr[i] as f64 * dgamma[i]);
                    dr[i] = v as f32;
                }
            }
        }
    }
    let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect();
    (dx, to32(dgamma), to32(dbeta))
}
