//! Dense f32 tensors and the small set of layers the network is built from.
//!
//! Activations use channel-last layout: a single instance is `[H, W, C]`
//! and a batch is `[N, H, W, C]`. Convolution kernels are `[k, k, Cin, Cout]`;
//! transposed-convolution kernels are `[k, k, Cout, Cin]` so that the same
//! array is the adjoint of a valid convolution mapping `Cout -> Cin`.

mod kernels;
mod ops;
mod optim;
mod tape;

pub use ops::{
    batch_norm, conv2d, conv2d_transpose, cross_entropy, dense, global_avg_pool, l1_loss, relu,
    softmax, BnMode, BnState, Padding, BN_EPSILON, BN_MOMENTUM, PROB_FLOOR,
};
pub use optim::{adadelta_step, AdaDelta, Parameter};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_shape(shape)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Panics on an invalid shape; meant for shapes known at compile time.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        check_shape(shape).expect("invalid tensor shape");
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        assert!(!data.is_empty(), "empty tensor");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Inner product in f64.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        same_shape(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let mut shape = Vec::with_capacity(first.rank() + 1);
        shape.push(items.len());
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            same_shape(first, t)?;
            data.extend_from_slice(t.data());
        }
        Tensor::new(&shape, data)
    }

    /// Splits the leading axis back into separate tensors.
    pub fn unstack(&self) -> Vec<Tensor> {
        let n = self.shape[0];
        let inner: Vec<usize> = if self.rank() > 1 {
            self.shape[1..].to_vec()
        } else {
            vec![1]
        };
        let len = self.len() / n;
        self.data
            .chunks(len)
            .map(|c| Tensor {
                shape: inner.clone(),
                data: c.to_vec(),
            })
            .collect()
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape(format!(
            "rank must be 1..={MAX_RANK}, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::shape(format!("zero extent in shape {shape:?}")));
    }
    Ok(())
}

pub(crate) fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

/// Views a rank-3 `[H, W, C]` or rank-4 `[N, H, W, C]` shape as `(n, h, w, c)`.
pub(crate) fn nhwc(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c)),
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(Error::shape(format!(
            "expected [H, W, C] or [N, H, W, C], got {shape:?}"
        ))),
    }
}

/// Same rank as `like`: rank-3 inputs produce rank-3 outputs.
pub(crate) fn nhwc_shape(like: &[usize], n: usize, h: usize, w: usize, c: usize) -> Vec<usize> {
    if like.len() == 3 {
        vec![h, w, c]
    } else {
        vec![n, h, w, c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], vec![1.0]).is_err());
    }

    #[test]
    fn stack_unstack() {
        let a = Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 1]);
        assert_eq!(s.unstack(), vec![a, b]);
    }
}
