use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with bias correction. `beta1 = 0` gives the momentum-free
/// (RMSProp-style) variant.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &ParamSet<S>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            lr: S::lit(lr),
            beta1: S::lit(beta1),
            beta2: S::lit(beta2),
            eps: S::lit(1e-8),
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &[Tensor<S>]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.t += 1;
        let one = S::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        let step = self.lr * bc2.sqrt() / bc1;
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let pd = p.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (one - self.beta1) * gi;
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (one - self.beta2) * gi * gi;
                pd[i] -= step * *mi / (vi.sqrt() + self.eps);
            }
        }
    }
}

/// `base * (1 - iter / max_iter) ^ power`.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    if max_iter == 0 {
        return base;
    }
    base * (1.0 - iter.min(max_iter) as f64 / max_iter as f64).powf(power)
}
