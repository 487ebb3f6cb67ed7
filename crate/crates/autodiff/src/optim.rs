use crate::float::Float;
use crate::tensor::Tensor;

/// Trainable tensor with its gradient buffer and Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter<F> {
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    /// Weights are L1-penalized; biases are not.
    pub penalized: bool,
    m: Vec<F>,
    v: Vec<F>,
    step: u64,
}

impl<F: Float> Parameter<F> {
    pub fn new(value: Tensor<F>, penalized: bool) -> Self {
        let n = value.len();
        Parameter {
            grad: Tensor::zeros(value.shape()),
            value,
            penalized,
            m: vec![F::ZERO; n],
            v: vec![F::ZERO; n],
            step: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(F::ZERO);
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn accumulate_grad(&mut self, g: &Tensor<F>) {
        self.grad.add_assign(g);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// One bias-corrected Adam update from the accumulated gradients.
    pub fn step<F: Float>(&self, params: &mut [Parameter<F>], lr: f64) {
        let (b1, b2) = (F::from_f64(self.beta1), F::from_f64(self.beta2));
        let (one_b1, one_b2) = (F::ONE - b1, F::ONE - b2);
        let eps = F::from_f64(self.eps);
        for p in params.iter_mut() {
            p.step += 1;
            let t = p.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            // folded bias correction: lr_t = lr * sqrt(c2) / c1
            let lr_t = F::from_f64(lr * c2.sqrt() / c1);
            let eps_t = eps * F::from_f64(c2.sqrt());
            let g = p.grad.data();
            let val = p.value.data_mut();
            for i in 0..val.len() {
                let gi = g[i];
                p.m[i] = b1 * p.m[i] + one_b1 * gi;
                p.v[i] = b2 * p.v[i] + one_b2 * gi * gi;
                val[i] -= lr_t * p.m[i] / (p.v[i].sqrt() + eps_t);
            }
        }
    }
}

/// `adam_step(params, lr)` with the default moments.
pub fn adam_step<F: Float>(params: &mut [Parameter<F>], lr: f64) {
    Adam::default().step(params, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first update is lr * g / (|g| + eps)
        let mut p = vec![Parameter::new(Tensor::new(&[2], vec![1.0f64, -1.0]).unwrap(), true)];
        p[0].grad = Tensor::new(&[2], vec![0.5, -2.0]).unwrap();
        adam_step(&mut p, 1e-3);
        let v = p[0].value.data();
        assert!((v[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((v[1] - (-1.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(p[0].step_count(), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![Parameter::new(Tensor::new(&[1], vec![5.0f64]).unwrap(), false)];
        for _ in 0..5000 {
            let x = p[0].value.data()[0];
            p[0].grad = Tensor::new(&[1], vec![2.0 * (x - 2.0)]).unwrap();
            adam_step(&mut p, 1e-2);
        }
        assert!((p[0].value.data()[0] - 2.0).abs() < 1e-3);
    }
}
