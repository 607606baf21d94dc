use super::Tensor;

/// A learnable tensor with its gradient and AdaDelta accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    /// Running average of squared gradients, E[g²].
    pub accum_sq_grad: Tensor,
    /// Running average of squared updates, E[Δx²].
    pub accum_sq_update: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Parameter {
            grad: zeros.clone(),
            accum_sq_grad: zeros.clone(),
            accum_sq_update: zeros,
            value,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    pub fn reset_optimizer(&mut self) {
        self.accum_sq_grad.data_mut().fill(0.0);
        self.accum_sq_update.data_mut().fill(0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaDelta {
    pub rho: f32,
    pub epsilon: f32,
}

impl Default for AdaDelta {
    fn default() -> Self {
        AdaDelta {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

/// One AdaDelta update over all parameters. `lr` scales the computed step;
/// with `lr = 0` values stay put while the accumulators still advance.
pub fn adadelta_step(params: &mut [Parameter], opt: AdaDelta, lr: f32) {
    let AdaDelta { rho, epsilon } = opt;
    for p in params.iter_mut() {
        let value = p.value.data_mut();
        let grad = p.grad.data();
        let eg = p.accum_sq_grad.data_mut();
        let ex = p.accum_sq_update.data_mut();
        for i in 0..value.len() {
            let g = grad[i];
            eg[i] = rho * eg[i] + (1.0 - rho) * g * g;
            let dx = -((ex[i] + epsilon).sqrt() / (eg[i] + epsilon).sqrt()) * g;
            ex[i] = rho * ex[i] + (1.0 - rho) * dx * dx;
            value[i] += lr * dx;
        }
    }
}
