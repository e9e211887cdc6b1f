use dha_nn::{Bound, Conv2d, Linear, ParamSet, Scalar, Tape, Tensor, Var};
use rand::Rng;

use crate::data::Image;
use crate::discovery::StyleCode;
use crate::error::{invalid, Result};
use crate::nets::{Network, LEAK};

const IN_EPS: f64 = 1e-5;
/// Input pixels are clamped to this margin before the logit skip.
const SKIP_MARGIN: f64 = 1e-3;

/// Per-dimension standardization of style codes, fitted on the exemplar pool.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeNorm<S> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
}

impl<S: Scalar> CodeNorm<S> {
    pub fn identity(len: usize) -> Self {
        Self {
            mean: vec![S::zero(); len],
            std: vec![S::one(); len],
        }
    }

    pub fn fit(codes: &[StyleCode<S>]) -> Result<Self> {
        let Some(first) = codes.first() else {
            return invalid("no style codes to fit normalization");
        };
        let d = first.len();
        let n = S::from_usize(codes.len()).unwrap();
        let mean: Vec<S> = (0..d).map(|i| codes.iter().map(|c| c.0[i]).sum::<S>() / n).collect();
        let std = (0..d)
            .map(|i| {
                let v = codes.iter().map(|c| (c.0[i] - mean[i]).powi(2)).sum::<S>() / n;
                v.sqrt().max(S::lit(1e-6))
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, code: &StyleCode<S>) -> Vec<S> {
        code.0
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }
}

/// Per-channel scale and shift predicted from the style embedding.
#[derive(Clone, Copy, Debug)]
struct Modulation {
    gamma: Linear,
    beta: Linear,
}

impl Modulation {
    fn new<S: Scalar, R: Rng>(params: &mut ParamSet<S>, rng: &mut R, name: &str, embed: usize, channels: usize) -> Self {
        // small init so an untrained generator starts near the identity
        Self {
            gamma: Linear::new(params, rng, &format!("{name}.gamma"), embed, channels, 0.01),
            beta: Linear::new(params, rng, &format!("{name}.beta"), embed, channels, 0.01),
        }
    }

    fn apply<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, h: Var, style: Var) -> Result<Var> {
        let n = tape.instance_norm(h, S::lit(IN_EPS))?;
        let g = self.gamma.forward(tape, bound, style)?;
        let b = self.beta.forward(tape, bound, style)?;
        Ok(tape.channel_affine(n, g, b)?)
    }
}

/// Exemplar-conditioned translator G(x_S, style code) → image.
///
/// Content encoder: 3×3 convs 3→32 (stride 1), 32→64 and 64→64 (stride 2),
/// giving 64 channels at quarter resolution. Decoder: two residual blocks
/// and two nearest-upsample + conv stages, every stage modulated by the
/// embedded style code. The output is `sigmoid(d + logit(x_S))`, so a zero
/// decoder reproduces the input.
#[derive(Clone, Debug)]
pub struct Generator<S> {
    params: ParamSet<S>,
    enc: [Conv2d; 3],
    embed: Linear,
    res: [[Conv2d; 2]; 2],
    res_mod: [[Modulation; 2]; 2],
    up: [Conv2d; 2],
    up_mod: [Modulation; 2],
    out: Conv2d,
    pub code_norm: CodeNorm<S>,
}

pub const EMBED_DIM: usize = 64;

impl<S: Scalar> Generator<S> {
    pub fn new<R: Rng>(rng: &mut R, code_len: usize) -> Self {
        let mut p = ParamSet::new();
        let enc = [
            Conv2d::same(&mut p, rng, "enc1", 3, 32, 3, 1),
            Conv2d::same(&mut p, rng, "enc2", 32, 64, 3, 2),
            Conv2d::same(&mut p, rng, "enc3", 64, 64, 3, 2),
        ];
        let embed = Linear::new(&mut p, rng, "embed", code_len, EMBED_DIM, (1.0 / code_len as f64).sqrt());
        let mut res = Vec::new();
        let mut res_mod = Vec::new();
        for b in 0..2 {
            res.push([
                Conv2d::same(&mut p, rng, &format!("res{b}.conv1"), 64, 64, 3, 1),
                Conv2d::same(&mut p, rng, &format!("res{b}.conv2"), 64, 64, 3, 1),
            ]);
            res_mod.push([
                Modulation::new(&mut p, rng, &format!("res{b}.mod1"), EMBED_DIM, 64),
                Modulation::new(&mut p, rng, &format!("res{b}.mod2"), EMBED_DIM, 64),
            ]);
        }
        let up = [
            Conv2d::same(&mut p, rng, "up1", 64, 32, 3, 1),
            Conv2d::same(&mut p, rng, "up2", 32, 16, 3, 1),
        ];
        let up_mod = [
            Modulation::new(&mut p, rng, "up1.mod", EMBED_DIM, 32),
            Modulation::new(&mut p, rng, "up2.mod", EMBED_DIM, 16),
        ];
        let out = Conv2d::same(&mut p, rng, "out", 16, 3, 3, 1);
        // start the residual decoder output at zero
        p.get_mut(out.weight).scale_assign(S::lit(0.1));
        Self {
            params: p,
            enc,
            embed,
            res: [res[0], res[1]],
            res_mod: [res_mod[0], res_mod[1]],
            up,
            up_mod,
            out,
            code_norm: CodeNorm::identity(code_len),
        }
    }

    pub fn code_len(&self) -> usize {
        self.code_norm.mean.len()
    }

    /// Normalized codes as a `[N, code_len]` tensor.
    pub fn code_tensor(&self, codes: &[&StyleCode<S>]) -> Result<Tensor<S>> {
        let d = self.code_len();
        let mut data = Vec::with_capacity(codes.len() * d);
        for c in codes {
            if c.len() != d {
                return invalid(format!("style code of length {} for a generator expecting {d}", c.len()));
            }
            data.extend(self.code_norm.apply(c));
        }
        Ok(Tensor::new(vec![codes.len(), d], data)?)
    }

    /// `x`: `[N, 3, H, W]` in [0, 1] with H, W divisible by 4; `codes`: `[N, code_len]` normalized.
    pub fn forward(&self, tape: &mut Tape<S>, bound: &Bound, x: Var, codes: Var) -> Result<Var> {
        let [n, c, h, w] = tape.value(x).dims4()?;
        if c != 3 || h % 4 != 0 || w % 4 != 0 {
            return invalid(format!("generator input {n}x{c}x{h}x{w}: need 3 channels and sides divisible by 4"));
        }
        if tape.value(codes).shape() != [n, self.code_len()] {
            return invalid(format!(
                "style codes {:?} for a batch of {n}",
                tape.value(codes).shape()
            ));
        }
        let leak = S::lit(LEAK);
        let e = self.embed.forward(tape, bound, codes)?;
        let style = tape.leaky_relu(e, leak);

        let mut a = x;
        for conv in &self.enc {
            a = conv.forward(tape, bound, a)?;
            a = tape.leaky_relu(a, leak);
        }
        for (convs, mods) in self.res.iter().zip(&self.res_mod) {
            let mut r = mods[0].apply(tape, bound, a, style)?;
            r = tape.leaky_relu(r, leak);
            r = convs[0].forward(tape, bound, r)?;
            r = mods[1].apply(tape, bound, r, style)?;
            r = tape.leaky_relu(r, leak);
            r = convs[1].forward(tape, bound, r)?;
            a = tape.add(a, r)?;
        }
        for (conv, m) in self.up.iter().zip(&self.up_mod) {
            a = tape.upsample_nearest2x(a)?;
            a = conv.forward(tape, bound, a)?;
            a = m.apply(tape, bound, a, style)?;
            a = tape.leaky_relu(a, leak);
        }
        let d = self.out.forward(tape, bound, a)?;
        let margin = SKIP_MARGIN;
        let skip = tape.value(x).map(|v| {
            let p = v.max(S::lit(margin)).min(S::lit(1.0 - margin));
            (p / (S::one() - p)).ln()
        });
        let skip = tape.constant(skip);
        let z = tape.add(d, skip)?;
        Ok(tape.sigmoid(z))
    }

    /// Translate a batch of images with frozen weights.
    pub fn translate(&self, images: &[&Image], codes: &[&StyleCode<S>]) -> Result<Vec<Image>> {
        if images.len() != codes.len() {
            return invalid("one style code per image required");
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(crate::data::batch_tensor(images)?);
        let c = tape.constant(self.code_tensor(codes)?);
        let y = self.forward(&mut tape, &bound, x, c)?;
        let out = tape.value(y);
        (0..images.len()).map(|i| Image::from_tensor(out, i)).collect()
    }
}

impl<S: Scalar> Network<S> for Generator<S> {
    fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }
}
