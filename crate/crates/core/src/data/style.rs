//! Photometric styles. A style only recolors pixels; it never moves them,
//! so the mask of a styled image is the mask of its source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::Image;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StyleParams {
    /// Rotation about the gray axis, radians.
    pub hue_shift: f32,
    pub brightness: f32,
    pub contrast: f32,
    /// 1 keeps colors, 0 maps every pixel to its luma.
    pub saturation: f32,
    pub color_cast: [f32; 3],
    pub noise_sigma: f32,
    pub seed: u64,
}

impl StyleParams {
    pub const IDENTITY: StyleParams = StyleParams {
        hue_shift: 0.0,
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        color_cast: [0.0; 3],
        noise_sigma: 0.0,
        seed: 0,
    };

    pub fn validate(&self) -> Result<()> {
        let finite = [self.hue_shift, self.brightness, self.contrast, self.saturation, self.noise_sigma]
            .iter()
            .chain(&self.color_cast)
            .all(|v| v.is_finite());
        if !finite {
            return invalid("style parameters must be finite");
        }
        if self.brightness <= 0.0 || self.contrast <= 0.0 {
            return invalid("brightness and contrast must be positive");
        }
        if self.saturation < 0.0 || self.noise_sigma < 0.0 {
            return invalid("saturation and noise_sigma must be non-negative");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Small per-image perturbation of a style preset.
    pub fn jittered(&self, seed: u64) -> StyleParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4c45);
        let mut f = |v: f32, rel: f32| v * (1.0 + rng.random_range(-rel..=rel));
        StyleParams {
            hue_shift: self.hue_shift,
            brightness: f(self.brightness, 0.06),
            contrast: f(self.contrast, 0.05),
            saturation: f(self.saturation, 0.05),
            color_cast: self.color_cast.map(|c| c + 0.01 * (f(1.0, 1.0) - 1.0)),
            noise_sigma: self.noise_sigma,
            seed,
        }
    }
}

fn hue_matrix(angle: f32) -> [[f32; 3]; 3] {
    // Rodrigues rotation about (1, 1, 1) / sqrt(3)
    let (s, c) = angle.sin_cos();
    let t = (1.0 - c) / 3.0;
    let r = s / 3f32.sqrt();
    [
        [c + t, t - r, t + r],
        [t + r, c + t, t - r],
        [t - r, t + r, c + t],
    ]
}

/// Apply a photometric style. Each stage is skipped at its identity value,
/// so identity parameters return the input bit-for-bit.
pub fn apply_style(image: &Image, params: &StyleParams) -> Result<Image> {
    params.validate()?;
    let (h, w) = (image.height(), image.width());
    let plane = h * w;
    let src = image.pixels();
    let mut px: Vec<[f32; 3]> = (0..plane).map(|i| [src[i], src[plane + i], src[2 * plane + i]]).collect();

    if params.hue_shift != 0.0 {
        let m = hue_matrix(params.hue_shift);
        for p in &mut px {
            let v = *p;
            *p = [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2]);
        }
    }
    if params.saturation != 1.0 {
        for p in &mut px {
            let luma = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            *p = p.map(|c| luma + params.saturation * (c - luma));
        }
    }
    if params.contrast != 1.0 {
        for p in &mut px {
            *p = p.map(|c| 0.5 + params.contrast * (c - 0.5));
        }
    }
    if params.brightness != 1.0 {
        for p in &mut px {
            *p = p.map(|c| c * params.brightness);
        }
    }
    if params.color_cast != [0.0; 3] {
        for p in &mut px {
            for c in 0..3 {
                p[c] += params.color_cast[c];
            }
        }
    }
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let normal = Normal::new(0.0f32, params.noise_sigma).expect("sigma checked");
        for p in &mut px {
            for c in p.iter_mut() {
                *c += normal.sample(&mut rng);
            }
        }
    }

    let mut out = vec![0.0; 3 * plane];
    for (i, p) in px.iter().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = p[c].clamp(0.0, 1.0);
        }
    }
    Image::new(h, w, out)
}

/// Named appearance presets of the synthetic benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StylePreset {
    /// Dark with a blue cast.
    Night,
    /// Dim, desaturated and grainy.
    Rain,
    /// Bright gray haze with low contrast.
    Cloudy,
    /// Warm cast at moderate brightness; held out as the open domain.
    Sunset,
}

impl std::str::FromStr for StylePreset {
    type Err = crate::error::DhaError;

    fn from_str(s: &str) -> Result<Self> {
        StylePreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| crate::error::DhaError::Invalid(format!("unknown style `{s}` (night|rain|cloudy|sunset)")))
    }
}

impl StylePreset {
    pub const COMPOUND: [StylePreset; 3] = [StylePreset::Night, StylePreset::Rain, StylePreset::Cloudy];
    pub const ALL: [StylePreset; 4] = [StylePreset::Night, StylePreset::Rain, StylePreset::Cloudy, StylePreset::Sunset];

    pub fn name(self) -> &'static str {
        match self {
            StylePreset::Night => "night",
            StylePreset::Rain => "rain",
            StylePreset::Cloudy => "cloudy",
            StylePreset::Sunset => "sunset",
        }
    }

    pub fn params(self) -> StyleParams {
        let base = StyleParams::IDENTITY;
        match self {
            StylePreset::Night => StyleParams {
                brightness: 0.42,
                contrast: 0.85,
                saturation: 0.6,
                color_cast: [-0.03, 0.0, 0.14],
                noise_sigma: 0.01,
                ..base
            },
            StylePreset::Rain => StyleParams {
                brightness: 0.8,
                contrast: 0.75,
                saturation: 0.3,
                color_cast: [-0.02, 0.03, 0.06],
                noise_sigma: 0.1,
                ..base
            },
            StylePreset::Cloudy => StyleParams {
                brightness: 1.0,
                contrast: 0.5,
                saturation: 0.5,
                color_cast: [0.12, 0.12, 0.12],
                ..base
            },
            StylePreset::Sunset => StyleParams {
                brightness: 0.72,
                contrast: 0.8,
                saturation: 0.85,
                color_cast: [0.14, 0.04, -0.06],
                noise_sigma: 0.01,
                ..base
            },
        }
    }
}
