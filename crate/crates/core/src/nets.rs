//! Building blocks shared by the hallucination and adaptation networks.

use dha_nn::{sigmoid, Bound, Conv2d, ParamSet, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;

pub const LEAK: f64 = 0.2;

/// A network whose weights live in one [`ParamSet`].
pub trait Network<S: Scalar> {
    fn params(&self) -> &ParamSet<S>;
    fn params_mut(&mut self) -> &mut ParamSet<S>;
}

/// Patch discriminator: three stride-2 4×4 convs down to a one-channel
/// logit map, averaged to one logit per sample.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator<S> {
    params: ParamSet<S>,
    convs: [Conv2d; 3],
    in_channels: usize,
}

impl<S: Scalar> PatchDiscriminator<S> {
    pub fn new<R: Rng>(rng: &mut R, in_channels: usize, width: usize) -> Self {
        let mut params = ParamSet::new();
        let convs = [
            Conv2d::new(&mut params, rng, "d1", in_channels, width, 4, 2, 1),
            Conv2d::new(&mut params, rng, "d2", width, 2 * width, 4, 2, 1),
            Conv2d::new(&mut params, rng, "d3", 2 * width, 1, 4, 2, 1),
        ];
        Self {
            params,
            convs,
            in_channels,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// `[N, C, H, W]` → `[N, 1]` averaged patch logits.
    pub fn logits(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(tape, bound, h)?;
            if i + 1 < self.convs.len() {
                h = tape.leaky_relu(h, S::lit(LEAK));
            }
        }
        Ok(tape.spatial_mean(h)?)
    }

    /// Probability of "real" per sample, outside any training graph.
    pub fn score(&self, x: &Tensor<S>) -> Result<Vec<S>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let l = self.logits(&mut tape, &bound, xv)?;
        Ok(tape.value(l).data().iter().map(|&z| sigmoid(z)).collect())
    }
}

impl<S: Scalar> Network<S> for PatchDiscriminator<S> {
    fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_is_a_probability_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = PatchDiscriminator::<f32>::new(&mut rng, 6, 8);
        let x = Tensor::full(&[2, 6, 32, 32], 0.3);
        let s = d.score(&x).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
