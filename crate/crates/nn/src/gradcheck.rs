//! Central finite-difference validation of analytic parameter gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::params::{flatten_grads, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradSample {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_err).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from dividing rounding noise by zero.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare analytic gradients against `(L(p + h) - L(p - h)) / 2h` on
/// `count` randomly chosen scalar parameters.
///
/// `eval(params, want_grads)` returns the loss and, when asked, the analytic
/// gradients in parameter order.
pub fn check<R, F>(params: &mut ParamSet<f64>, count: usize, step: f64, rng: &mut R, mut eval: F) -> GradCheckReport
where
    R: Rng,
    F: FnMut(&ParamSet<f64>, bool) -> (f64, Option<Vec<Tensor<f64>>>),
{
    let (_, grads) = eval(params, true);
    let analytic = flatten_grads(&grads.expect("analytic gradients requested"));
    let total = params.num_scalars();
    let picks = sample(rng, total, count.min(total)).into_vec();
    let samples = picks
        .into_iter()
        .map(|index| {
            let orig = params.flat_get(index);
            params.flat_set(index, orig + step);
            let (up, _) = eval(params, false);
            params.flat_set(index, orig - step);
            let (down, _) = eval(params, false);
            params.flat_set(index, orig);
            let numeric = (up - down) / (2.0 * step);
            GradSample {
                index,
                analytic: analytic[index],
                numeric,
                rel_err: rel_err(analytic[index], numeric, 1e-7),
            }
        })
        .collect();
    GradCheckReport { samples }
}
