use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use dha_nn::{poly_lr, Adam, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::seg::SegNetwork;
use crate::data::{batch_labels, batch_tensor, Image, SegMask};
use crate::error::{invalid, DhaError, Result};
use crate::losses::{cross_entropy, loss_out_disc, loss_out_seg, GanForm};
use crate::nets::{Network, PatchDiscriminator};
use crate::seed::derive;

/// Which source stream F learns from and how target outputs are aligned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AdaptMode {
    /// Raw source, no adversary. Also the pretrained f_seg of hallucination.
    SourceOnly,
    /// Translated source, no adversary.
    None,
    /// Raw source, one output discriminator over the pooled target.
    TraditionalRaw,
    /// Translated source, one output discriminator over the pooled target.
    TraditionalTranslated,
    /// Translated source, one discriminator per latent domain.
    DomainWise,
    /// Raw source, one discriminator per latent domain (discover and adapt
    /// without hallucination).
    DomainWiseRaw,
}

impl AdaptMode {
    pub const ALL: [AdaptMode; 6] = [
        AdaptMode::SourceOnly,
        AdaptMode::None,
        AdaptMode::TraditionalRaw,
        AdaptMode::TraditionalTranslated,
        AdaptMode::DomainWise,
        AdaptMode::DomainWiseRaw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdaptMode::SourceOnly => "source_only",
            AdaptMode::None => "none",
            AdaptMode::TraditionalRaw => "traditional_raw",
            AdaptMode::TraditionalTranslated => "traditional_translated",
            AdaptMode::DomainWise => "domain_wise",
            AdaptMode::DomainWiseRaw => "domain_wise_raw",
        }
    }

    pub fn uses_translated(self) -> bool {
        matches!(self, AdaptMode::None | AdaptMode::TraditionalTranslated | AdaptMode::DomainWise)
    }

    /// Number of output discriminators for `k` latent domains.
    pub fn num_discriminators(self, k: usize) -> usize {
        match self {
            AdaptMode::SourceOnly | AdaptMode::None => 0,
            AdaptMode::TraditionalRaw | AdaptMode::TraditionalTranslated => 1,
            AdaptMode::DomainWise | AdaptMode::DomainWiseRaw => k,
        }
    }
}

impl fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdaptMode {
    type Err = DhaError;

    fn from_str(s: &str) -> Result<Self> {
        AdaptMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DhaError::Invalid(format!("unknown adapt mode `{s}`")))
    }
}

/// Training length and adversarial form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// 5k iterations, log-form GAN.
    Short,
    /// 15k iterations, least-squares GAN.
    Long,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Short => "short",
            Scheme::Long => "long",
        }
    }

    pub fn iterations(self) -> usize {
        match self {
            Scheme::Short => 5000,
            Scheme::Long => 15000,
        }
    }

    pub fn gan_form(self) -> GanForm {
        match self {
            Scheme::Short => GanForm::Log,
            Scheme::Long => GanForm::LeastSquares,
        }
    }
}

impl FromStr for Scheme {
    type Err = DhaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(Scheme::Short),
            "long" => Ok(Scheme::Long),
            _ => Err(DhaError::Invalid(format!("unknown scheme `{s}` (short|long)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub mode: AdaptMode,
    pub form: GanForm,
    pub iterations: usize,
    pub lr_seg: f64,
    pub lr_disc: f64,
    pub poly_power: f64,
    pub lambda_out: f64,
    pub lambda_task: f64,
    pub disc_width: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl AdaptConfig {
    pub fn new(mode: AdaptMode, scheme: Scheme, seed: u64) -> Self {
        Self {
            mode,
            form: scheme.gan_form(),
            iterations: scheme.iterations(),
            lr_seg: 2.5e-4,
            lr_disc: 1e-4,
            poly_power: 0.9,
            lambda_out: 0.01,
            lambda_task: 1.0,
            disc_width: 32,
            checkpoint_every: 500,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_out", self.lambda_out), ("lambda_task", self.lambda_task), ("lr_seg", self.lr_seg), ("lr_disc", self.lr_disc)] {
            if !v.is_finite() || v < 0.0 {
                return invalid(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if self.checkpoint_every == 0 {
            return invalid("checkpoint_every must be positive");
        }
        Ok(())
    }
}

/// Training data, grouped by latent domain.
///
/// `translated[j]` holds source images translated into domain j with their
/// original labels; `targets[j]` is the discovered partition j.
#[derive(Clone, Copy, Debug)]
pub struct AdaptData<'a> {
    pub source: &'a [(Image, SegMask)],
    pub translated: &'a [Vec<(Image, SegMask)>],
    pub targets: &'a [Vec<Image>],
}

impl AdaptData<'_> {
    fn validate(&self, mode: AdaptMode) -> Result<()> {
        let k = self.targets.len();
        if self.source.is_empty() {
            return invalid("no source images");
        }
        if mode != AdaptMode::SourceOnly && (k == 0 || self.targets.iter().any(Vec::is_empty)) {
            return invalid("every latent domain needs target images");
        }
        if mode.uses_translated() {
            if self.translated.len() != k {
                return invalid(format!("{} translated sets for {k} latent domains", self.translated.len()));
            }
            if self.translated.iter().any(Vec::is_empty) {
                return invalid("empty translated-source set");
            }
        }
        Ok(())
    }

    fn num_streams(&self) -> usize {
        self.targets.len().max(1)
    }
}

/// One row of the adaptation log; per-stream values are indexed by j.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptStep {
    pub iteration: usize,
    pub loss_task: f64,
    pub loss_out: Vec<f64>,
    pub loss_d: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct AdaptModels<S> {
    pub seg: SegNetwork<S>,
    pub discriminators: Vec<PatchDiscriminator<S>>,
}

impl<S: Scalar> AdaptModels<S> {
    pub fn init(seed: u64, classes: usize, num_disc: usize, disc_width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "adapt-init"));
        let seg = SegNetwork::new(&mut rng, classes);
        let discriminators = (0..num_disc).map(|_| PatchDiscriminator::new(&mut rng, classes, disc_width)).collect();
        Self { seg, discriminators }
    }
}

fn finite(v: f64, what: &str, iteration: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DhaError::Diverged {
            what: what.into(),
            iteration,
        })
    }
}

fn softmax_of<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let mut t = Tape::new();
    let l = t.constant(logits.clone());
    let p = t.softmax(l)?;
    Ok(t.value(p).clone())
}

/// One update of an output-space discriminator: source predictions → 1,
/// target predictions → 0. Only `d` and its optimizer state change.
pub fn disc_step<S: Scalar>(
    d: &mut PatchDiscriminator<S>,
    opt: &mut Adam<S>,
    form: GanForm,
    source_probs: Tensor<S>,
    target_probs: Tensor<S>,
) -> Result<f64> {
    let mut dt = Tape::new();
    let db = d.params().bind(&mut dt, true);
    let s = dt.constant(source_probs);
    let tv = dt.constant(target_probs);
    let sl = d.logits(&mut dt, &db, s)?;
    let tl = d.logits(&mut dt, &db, tv)?;
    let loss = loss_out_disc(&mut dt, form, sl, tl)?;
    let value = dt.scalar(loss).to_f64().unwrap();
    let grads = dt.backward(loss);
    let g = db.grads(&grads, d.params());
    opt.step(d.params_mut(), &g);
    Ok(value)
}

/// Train F for `config.iterations` iterations.
///
/// Each iteration visits the K domain streams in order. For stream j: one F
/// step on `λ_task·L_task(x_S,j) + λ_out·L_out,F(x_T,j)`, then one step of
/// the discriminator that stream uses (D_j, or the shared one). Source and
/// target draws come from independent generators, so with `λ_out = 0` the F
/// trajectory equals the adversary-free one. `on_snapshot` is called with
/// the current F every `checkpoint_every` iterations and at the end.
pub fn train_adapt<S: Scalar>(
    data: &AdaptData<'_>,
    classes: usize,
    config: &AdaptConfig,
    mut on_step: impl FnMut(&AdaptStep),
    mut on_snapshot: impl FnMut(usize, &SegNetwork<S>) -> Result<()>,
) -> Result<AdaptModels<S>> {
    config.validate()?;
    data.validate(config.mode)?;
    let k = data.num_streams();
    let n_disc = config.mode.num_discriminators(data.targets.len());
    let mut models = AdaptModels::<S>::init(config.seed, classes, n_disc, config.disc_width);
    let mut opt_f = Adam::new(models.seg.params(), config.lr_seg, 0.9, 0.99);
    let mut opt_d: Vec<Adam<S>> = models
        .discriminators
        .iter()
        .map(|d| Adam::new(d.params(), config.lr_disc, 0.9, 0.99))
        .collect();
    let pooled: Vec<&Image> = data.targets.iter().flatten().collect();
    let mut src_rng = ChaCha8Rng::seed_from_u64(derive(config.seed, "adapt-source"));
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(derive(config.seed, "adapt-target"));
    let adv_f = n_disc > 0 && config.lambda_out > 0.0;
    let start = Instant::now();

    for it in 0..config.iterations {
        let lr = poly_lr(config.lr_seg, it, config.iterations, config.poly_power);
        let lr_d = poly_lr(config.lr_disc, it, config.iterations, config.poly_power);
        opt_f.lr = S::lit(lr);
        for o in &mut opt_d {
            o.lr = S::lit(lr_d);
        }
        let mut row = AdaptStep {
            iteration: it + 1,
            loss_task: 0.0,
            loss_out: vec![0.0; k],
            loss_d: vec![0.0; k],
            wall_time_s: 0.0,
        };
        for j in 0..k {
            let stream: &[(Image, SegMask)] = if config.mode.uses_translated() { &data.translated[j] } else { data.source };
            let (img, mask) = &stream[src_rng.random_range(0..stream.len())];
            let target: Option<&Image> = match config.mode {
                AdaptMode::SourceOnly | AdaptMode::None => None,
                AdaptMode::DomainWise | AdaptMode::DomainWiseRaw => {
                    Some(&data.targets[j][tgt_rng.random_range(0..data.targets[j].len())])
                }
                _ => Some(pooled[tgt_rng.random_range(0..pooled.len())]),
            };
            let d_idx = if config.mode.num_discriminators(k) == k { j } else { 0 };

            // predictions fed to the discriminator come from F before its update
            let mut target_probs = match (adv_f, target) {
                (false, Some(t)) => Some(models.seg.probabilities(&batch_tensor(&[t])?)?),
                _ => None,
            };

            // F step
            let mut tape = Tape::new();
            let bound = models.seg.params().bind(&mut tape, true);
            let x = tape.constant(batch_tensor(&[img])?);
            let out = models.seg.forward(&mut tape, &bound, x)?;
            let task = cross_entropy(&mut tape, out.logits, &batch_labels(&[mask]))?;
            row.loss_task += finite(tape.scalar(task).to_f64().unwrap(), "task loss", it)? / k as f64;
            let mut terms: Vec<(Var, S)> = vec![(task, S::lit(config.lambda_task))];
            if let (true, Some(t)) = (adv_f, target) {
                let d = &models.discriminators[d_idx];
                let d_bound = d.params().bind(&mut tape, false);
                let xt = tape.constant(batch_tensor(&[t])?);
                let tout = models.seg.forward(&mut tape, &bound, xt)?;
                let probs = tape.softmax(tout.logits)?;
                target_probs = Some(tape.value(probs).clone());
                let dl = d.logits(&mut tape, &d_bound, probs)?;
                let adv = loss_out_seg(&mut tape, config.form, dl);
                row.loss_out[j] = finite(tape.scalar(adv).to_f64().unwrap(), "output adversarial loss", it)?;
                terms.push((adv, S::lit(config.lambda_out)));
            }
            let source_probs = softmax_of(tape.value(out.logits))?;
            let total = tape.weighted_sum(&terms)?;
            let grads = tape.backward(total);
            let g = bound.grads(&grads, models.seg.params());
            opt_f.step(models.seg.params_mut(), &g);

            // D step on detached predictions
            if let Some(target_probs) = target_probs {
                let loss = disc_step(&mut models.discriminators[d_idx], &mut opt_d[d_idx], config.form, source_probs, target_probs)?;
                row.loss_d[j] = finite(loss, "output discriminator loss", it)?;
            }
        }
        row.wall_time_s = start.elapsed().as_secs_f64();
        on_step(&row);
        let done = it + 1;
        if done % config.checkpoint_every == 0 || done == config.iterations {
            on_snapshot(done, &models.seg)?;
        }
    }
    Ok(models)
}
