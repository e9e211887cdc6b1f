//! Style codes: per-channel mean and standard deviation of convolutional
//! feature maps.

use dha_nn::{Conv2d, ParamSet, Scalar, Tape, Tensor};

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::seed::rng_for;

/// Anything that maps a `[1, 3, H, W]` image tensor to a `[1, C, H', W']`
/// feature map. The style code is computed on its output, so a pretrained
/// extractor can replace the default random encoder.
pub trait FeatureExtractor<S: Scalar> {
    fn features(&self, image: &Tensor<S>) -> Result<Tensor<S>>;

    fn channels(&self) -> usize;
}

/// Fixed two-layer conv encoder (3→16→32, 3×3, stride 1, ReLU), weights drawn
/// once from a seeded Gaussian and never updated. Convolutions are unpadded
/// so a constant image yields exactly constant feature maps.
#[derive(Clone, Debug)]
pub struct StyleEncoder<S> {
    params: ParamSet<S>,
    conv1: Conv2d,
    conv2: Conv2d,
}

pub const STYLE_CHANNELS: usize = 32;
pub const STYLE_CODE_LEN: usize = 2 * STYLE_CHANNELS;

impl<S: Scalar> StyleEncoder<S> {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_for(seed, "style-encoder");
        let mut params = ParamSet::new();
        let conv1 = Conv2d::new(&mut params, &mut rng, "enc1", 3, 16, 3, 1, 0);
        let conv2 = Conv2d::new(&mut params, &mut rng, "enc2", 16, STYLE_CHANNELS, 3, 1, 0);
        Self { params, conv1, conv2 }
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }
}

impl<S: Scalar> FeatureExtractor<S> for StyleEncoder<S> {
    fn features(&self, image: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let h = self.conv1.forward(&mut tape, &bound, x)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(&mut tape, &bound, h)?;
        let h = tape.relu(h);
        Ok(tape.value(h).clone())
    }

    fn channels(&self) -> usize {
        STYLE_CHANNELS
    }
}

/// Passes the image through unchanged (3 channels).
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl<S: Scalar> FeatureExtractor<S> for IdentityExtractor {
    fn features(&self, image: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(image.clone())
    }

    fn channels(&self) -> usize {
        3
    }
}

/// Per-channel means followed by per-channel population standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleCode<S>(pub Vec<S>);

impl<S: Scalar> StyleCode<S> {
    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &StyleCode<S>) -> S {
        euclidean(&self.0, &other.0)
    }

    pub fn to_tensor(codes: &[&StyleCode<S>]) -> Result<Tensor<S>> {
        let width = codes.first().map_or(0, |c| c.len());
        let mut data = Vec::with_capacity(codes.len() * width);
        for c in codes {
            if c.len() != width {
                return invalid("style codes of different lengths");
            }
            data.extend_from_slice(&c.0);
        }
        Ok(Tensor::new(vec![codes.len(), width], data)?)
    }
}

pub fn euclidean<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<S>().sqrt()
}

/// Style code of the first batch element of a `[N, C, H, W]` feature map.
pub fn style_code_from_features<S: Scalar>(features: &Tensor<S>) -> Result<StyleCode<S>> {
    let [_, c, h, w] = features.dims4()?;
    let hw = h * w;
    let n = S::from_usize(hw).unwrap();
    let data = features.item(0);
    let mut means = Vec::with_capacity(c);
    let mut stds = Vec::with_capacity(c);
    for plane in data.chunks(hw).take(c) {
        // exact for constant maps; a summed mean can be off by rounding
        if plane.iter().all(|&v| v == plane[0]) {
            means.push(plane[0]);
            stds.push(S::zero());
            continue;
        }
        let mean = plane.iter().copied().sum::<S>() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        means.push(mean);
        stds.push(var.max(S::zero()).sqrt());
    }
    means.extend(stds);
    Ok(StyleCode(means))
}

/// Resize so the shorter side equals `native_side`, keeping aspect ratio.
/// Images already at that size are returned unchanged.
pub fn resize_to_native(image: &Image, native_side: usize) -> Result<Image> {
    let (h, w) = (image.height(), image.width());
    let short = h.min(w);
    if short == native_side {
        return Ok(image.clone());
    }
    let scale = native_side as f64 / short as f64;
    let nh = ((h as f64 * scale).round() as usize).max(native_side);
    let nw = ((w as f64 * scale).round() as usize).max(native_side);
    image.resize(nh, nw)
}

pub fn extract_style_code<S: Scalar, E: FeatureExtractor<S> + ?Sized>(image: &Image, encoder: &E) -> Result<StyleCode<S>> {
    let feats = encoder.features(&image.to_tensor())?;
    let code = style_code_from_features(&feats)?;
    if code.0.iter().any(|v| !v.is_finite()) {
        return invalid("non-finite style code");
    }
    Ok(code)
}
