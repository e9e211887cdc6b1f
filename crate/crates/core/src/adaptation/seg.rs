use dha_nn::{Bound, Conv2d, ParamSet, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::data::{batch_tensor, Image, SegMask};
use crate::error::{invalid, Result};
use crate::nets::{Network, LEAK};

/// Feature layers that can be exported by name.
pub const SEG_LAYERS: [&str; 5] = ["conv1", "conv2", "conv3", "conv4", "penultimate"];

/// Encoder–decoder segmentation network F.
///
/// conv 3→32 (stride 1), 32→64 (stride 2), 64→64 (stride 2), 64→64,
/// then a 1×1 head to C logits and bilinear upsampling to the input size.
/// The head runs before the upsampling: both are linear per pixel and the
/// bilinear weights sum to one, so the order does not change the output.
#[derive(Clone, Debug)]
pub struct SegNetwork<S> {
    params: ParamSet<S>,
    convs: [Conv2d; 4],
    head: Conv2d,
    classes: usize,
}

pub struct SegOutput {
    pub logits: Var,
    /// Activations after each conv, in `SEG_LAYERS` order (conv1..conv4).
    pub features: [Var; 4],
}

impl<S: Scalar> SegNetwork<S> {
    pub fn new<R: Rng>(rng: &mut R, classes: usize) -> Self {
        let mut params = ParamSet::new();
        let convs = [
            Conv2d::same(&mut params, rng, "conv1", 3, 32, 3, 1),
            Conv2d::same(&mut params, rng, "conv2", 32, 64, 3, 2),
            Conv2d::same(&mut params, rng, "conv3", 64, 64, 3, 2),
            Conv2d::same(&mut params, rng, "conv4", 64, 64, 3, 1),
        ];
        let head = Conv2d::new(&mut params, rng, "head", 64, classes, 1, 1, 0);
        Self {
            params,
            convs,
            head,
            classes,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn forward(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Result<SegOutput> {
        let [_, _, h, w] = tape.value(x).dims4()?;
        let mut feats = [x; 4];
        let mut a = x;
        for (i, conv) in self.convs.iter().enumerate() {
            a = conv.forward(tape, bound, a)?;
            a = tape.leaky_relu(a, S::lit(LEAK));
            feats[i] = a;
        }
        let low = self.head.forward(tape, bound, a)?;
        let logits = tape.upsample_bilinear(low, h, w)?;
        Ok(SegOutput { logits, features: feats })
    }

    /// Logits on a fresh tape with frozen weights.
    pub fn logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Per-pixel class probabilities, `[N, C, H, W]`.
    pub fn probabilities(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let l = tape.constant(self.logits(x)?);
        let p = tape.softmax(l)?;
        Ok(tape.value(p).clone())
    }

    /// Arg-max labels for a batch of images.
    pub fn predict(&self, images: &[&Image]) -> Result<Vec<SegMask>> {
        let logits = self.logits(&batch_tensor(images)?)?;
        let [n, c, h, w] = logits.dims4()?;
        let hw = h * w;
        (0..n)
            .map(|i| {
                let item = logits.item(i);
                let labels = (0..hw)
                    .map(|p| {
                        let mut best = 0;
                        for k in 1..c {
                            if item[k * hw + p] > item[best * hw + p] {
                                best = k;
                            }
                        }
                        best as u8
                    })
                    .collect();
                SegMask::new(h, w, c, labels)
            })
            .collect()
    }

    /// Spatial mean of a named layer, one row per image.
    pub fn layer_features(&self, images: &[&Image], layer: &str) -> Result<Vec<Vec<S>>> {
        let idx = match layer {
            "penultimate" => 3,
            _ => match SEG_LAYERS[..4].iter().position(|&l| l == layer) {
                Some(i) => i,
                None => return invalid(format!("unknown layer `{layer}` (expected one of {SEG_LAYERS:?})")),
            },
        };
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(batch_tensor(images)?);
        let out = self.forward(&mut tape, &bound, x)?;
        let m = tape.spatial_mean(out.features[idx])?;
        let v = tape.value(m);
        let width = v.shape()[1];
        Ok(v.data().chunks(width).map(<[S]>::to_vec).collect())
    }
}

impl<S: Scalar> Network<S> for SegNetwork<S> {
    fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }
}
