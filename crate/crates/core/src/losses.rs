//! Adversarial, semantic and task losses, all built from logits on a tape.
//!
//! Discriminators output one logit per sample; "D(x)" in the objectives is
//! its logistic. Every expectation is a batch mean.

use dha_nn::{Scalar, Tape, Var};

use crate::error::{invalid, Result};

/// Adversarial objective family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GanForm {
    /// Binary cross-entropy (log form).
    Log,
    /// Least squares against labels {1, 0}.
    LeastSquares,
}

impl GanForm {
    pub fn as_str(self) -> &'static str {
        match self {
            GanForm::Log => "log",
            GanForm::LeastSquares => "ls",
        }
    }
}

/// Loss pushing `logits` toward label `target` ∈ {0, 1}.
pub fn adv_term<S: Scalar>(tape: &mut Tape<S>, form: GanForm, logits: Var, target: bool) -> Var {
    let t = if target { S::one() } else { S::zero() };
    match form {
        GanForm::Log => tape.bce_with_logits(logits, t),
        GanForm::LeastSquares => {
            let p = tape.sigmoid(logits);
            tape.squared_error(p, t)
        }
    }
}

/// Discriminator loss: `real` → 1, `fake` → 0.
pub fn disc_loss<S: Scalar>(tape: &mut Tape<S>, form: GanForm, real: Var, fake: Var) -> Result<Var> {
    let a = adv_term(tape, form, real, true);
    let b = adv_term(tape, form, fake, false);
    Ok(tape.weighted_sum(&[(a, S::one()), (b, S::one())])?)
}

/// Non-saturating generator-side loss: make `fake` score as real.
pub fn gen_loss<S: Scalar>(tape: &mut Tape<S>, form: GanForm, fake: Var) -> Var {
    adv_term(tape, form, fake, true)
}

/// Image-level GAN loss for D_I: real target → 1, translated → 0.
pub fn loss_gan_disc<S: Scalar>(tape: &mut Tape<S>, real_target: Var, translated: Var) -> Result<Var> {
    disc_loss(tape, GanForm::Log, real_target, translated)
}

pub fn loss_gan_gen<S: Scalar>(tape: &mut Tape<S>, translated: Var) -> Var {
    gen_loss(tape, GanForm::Log, translated)
}

/// Pixel-mean cross-entropy of segmentation `logits` against `labels` (NHW order).
pub fn cross_entropy<S: Scalar>(tape: &mut Tape<S>, logits: Var, labels: &[usize]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    Ok(tape.nll(lp, labels)?)
}

/// Style-consistency objective value for one domain j:
/// `E log D(x'_j, x''_j) + Σ_l E log(1 − D(x_j, x_l)) + E log(1 − D(x_j, G(x_S, x_j)))`.
/// The discriminator maximizes it; [`loss_style_disc`] is its negation.
pub fn loss_style_objective<S: Scalar>(tape: &mut Tape<S>, same: Var, cross: &[Var], translated: Var) -> Result<Var> {
    let d = loss_style_disc(tape, same, cross, translated)?;
    Ok(tape.scale(d, -S::one()))
}

pub fn loss_style_disc<S: Scalar>(tape: &mut Tape<S>, same: Var, cross: &[Var], translated: Var) -> Result<Var> {
    if cross.is_empty() {
        return invalid("style loss needs at least one cross-domain pair");
    }
    let mut terms = vec![(adv_term(tape, GanForm::Log, same, true), S::one())];
    for &c in cross {
        terms.push((adv_term(tape, GanForm::Log, c, false), S::one()));
    }
    terms.push((adv_term(tape, GanForm::Log, translated, false), S::one()));
    Ok(tape.weighted_sum(&terms)?)
}

/// Generator side of the style loss: only the translated-pair term, non-saturating.
pub fn loss_style_gen<S: Scalar>(tape: &mut Tape<S>, translated: Var) -> Var {
    gen_loss(tape, GanForm::Log, translated)
}

/// Output-space objective value `E log D(F(x_S,j)) + E log(1 − D(F(x_T,j)))`
/// in log form. For least squares, the discriminator loss is returned instead
/// (there is no log objective to report).
pub fn loss_out_value<S: Scalar>(tape: &mut Tape<S>, form: GanForm, source: Var, target: Var) -> Result<Var> {
    let d = disc_loss(tape, form, source, target)?;
    Ok(match form {
        GanForm::Log => tape.scale(d, -S::one()),
        GanForm::LeastSquares => d,
    })
}

/// Discriminator loss for D_O,j: translated-source predictions → 1, target → 0.
pub fn loss_out_disc<S: Scalar>(tape: &mut Tape<S>, form: GanForm, source: Var, target: Var) -> Result<Var> {
    disc_loss(tape, form, source, target)
}

/// F side: target predictions should look like source ones.
pub fn loss_out_seg<S: Scalar>(tape: &mut Tape<S>, form: GanForm, target: Var) -> Var {
    gen_loss(tape, form, target)
}

/// λ weights of the five loss families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gan: f64,
    pub sem: f64,
    pub style: f64,
    pub out: f64,
    pub task: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gan: 1.0,
            sem: 10.0,
            style: 10.0,
            out: 0.01,
            task: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !v.is_finite() || v < 0.0 {
                return invalid(format!("loss weight {name} = {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("lambda_gan", self.gan),
            ("lambda_sem", self.sem),
            ("lambda_style", self.style),
            ("lambda_out", self.out),
            ("lambda_task", self.task),
        ]
    }
}

/// Per-domain values of the five loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub gan: f64,
    pub sem: f64,
    pub style: f64,
    pub out: f64,
    pub task: f64,
}

/// Weighted sum over domains of all five terms.
pub fn total_loss(components: &[LossComponents], weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(components
        .iter()
        .map(|c| weights.gan * c.gan + weights.sem * c.sem + weights.style * c.style + weights.out * c.out + weights.task * c.task)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dha_nn::Tensor;

    /// Constant-logit stub for a discriminator answering `p` on `n` samples.
    fn stub(tape: &mut Tape<f64>, p: f64, n: usize) -> Var {
        tape.constant(Tensor::full(&[n, 1], (p / (1.0 - p)).ln()))
    }

    #[test]
    fn gan_half_stub() {
        let mut t = Tape::new();
        let (r, f) = (stub(&mut t, 0.5, 1), stub(&mut t, 0.5, 1));
        let l = loss_gan_disc(&mut t, r, f).unwrap();
        assert!((t.scalar(l) + 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gan_asymmetric_stub() {
        let mut t = Tape::new();
        let (r, f) = (stub(&mut t, 0.8, 1), stub(&mut t, 0.3, 1));
        let l = loss_gan_disc(&mut t, r, f).unwrap();
        assert!((t.scalar(l) - (-(0.8f64.ln()) - 0.7f64.ln())).abs() < 1e-12);
        assert!((t.scalar(l) - 0.5798).abs() < 1e-4);
    }

    #[test]
    fn style_half_stub_k2() {
        let mut t = Tape::new();
        let (s, c, g) = (stub(&mut t, 0.5, 1), stub(&mut t, 0.5, 1), stub(&mut t, 0.5, 1));
        let v = loss_style_objective(&mut t, s, &[c], g).unwrap();
        assert!((t.scalar(v) - 3.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!(loss_style_disc(&mut t, s, &[], g).is_err());
    }

    #[test]
    fn out_forms() {
        let mut t = Tape::new();
        let (s, g) = (stub(&mut t, 0.5, 1), stub(&mut t, 0.5, 1));
        let v = loss_out_value(&mut t, GanForm::Log, s, g).unwrap();
        assert!((t.scalar(v) - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let ls = loss_out_disc(&mut t, GanForm::LeastSquares, s, g).unwrap();
        assert!((t.scalar(ls) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let mut t = Tape::new();
        let uniform = t.constant(Tensor::<f64>::zeros(&[1, 5, 2, 2]));
        let l = cross_entropy(&mut t, uniform, &[0, 1, 4, 2]).unwrap();
        assert!((t.scalar(l) - 5f64.ln()).abs() < 1e-12);
        let logits = t.constant(Tensor::new(vec![1, 2, 1, 1], vec![0.9f64.ln(), 0.1f64.ln()]).unwrap());
        let l = cross_entropy(&mut t, logits, &[0]).unwrap();
        assert!((t.scalar(l) + 0.9f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&mut t, logits, &[2]).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        let one = LossComponents {
            gan: 1.0,
            sem: 1.0,
            style: 1.0,
            out: 1.0,
            task: 1.0,
        };
        let w = LossWeights::default();
        assert!((total_loss(&[one], &w).unwrap() - 22.01).abs() < 1e-12);
        assert!((total_loss(&[one, one], &w).unwrap() - 44.02).abs() < 1e-12);
        assert_eq!(total_loss(&[LossComponents::default()], &w).unwrap(), 0.0);
        let bad = LossWeights { out: -0.1, ..w };
        assert!(total_loss(&[one], &bad).is_err());
    }
}
