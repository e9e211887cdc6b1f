use rand::Rng;

use crate::error::Result;
use crate::params::{Bound, ParamRef, ParamSet};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Square-kernel 2-D convolution with bias, He-initialized.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamRef,
    pub bias: ParamRef,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        params: &mut ParamSet<S>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let weight = params.add_normal(format!("{name}.weight"), &[cout, cin, kernel, kernel], (2.0 / fan_in).sqrt(), rng);
        let bias = params.add(format!("{name}.bias"), crate::Tensor::zeros(&[cout]));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    /// "Same" padding for odd kernels.
    pub fn same<S: Scalar, R: Rng>(
        params: &mut ParamSet<S>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        Self::new(params, rng, name, cin, cout, kernel, stride, kernel / 2)
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, bound.var(self.weight), Some(bound.var(self.bias)), self.stride, self.pad)
    }
}

/// Fully connected layer on `[N, F]` inputs.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamRef,
    pub bias: ParamRef,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng>(params: &mut ParamSet<S>, rng: &mut R, name: &str, fin: usize, fout: usize, std: f64) -> Self {
        let weight = params.add_normal(format!("{name}.weight"), &[fout, fin], std, rng);
        let bias = params.add(format!("{name}.bias"), crate::Tensor::zeros(&[fout]));
        Self { weight, bias }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, bound.var(self.weight), Some(bound.var(self.bias)))
    }
}
