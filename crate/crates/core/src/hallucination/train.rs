use std::time::Instant;

use dha_nn::{Adam, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generator::{CodeNorm, Generator};
use crate::adaptation::SegNetwork;
use crate::data::{batch_labels, batch_tensor, Image, SegMask};
use crate::discovery::StyleCode;
use crate::error::{invalid, DhaError, Result};
use crate::losses::{cross_entropy, loss_gan_disc, loss_gan_gen, loss_style_disc, loss_style_gen, LossWeights};
use crate::nets::{Network, PatchDiscriminator};
use crate::seed::derive;

/// Images of one discovered domain with their precomputed style codes.
#[derive(Clone, Debug)]
pub struct TargetDomain<S> {
    pub ids: Vec<String>,
    pub images: Vec<Image>,
    pub codes: Vec<StyleCode<S>>,
}

impl<S: Scalar> TargetDomain<S> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HallucinationConfig {
    pub iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weights: LossWeights,
    pub disc_width: usize,
    pub seed: u64,
}

impl Default for HallucinationConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            weights: LossWeights::default(),
            disc_width: 32,
            seed: 0,
        }
    }
}

/// One row of the hallucination training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HallucinationStep {
    pub iteration: usize,
    pub d_image: f64,
    pub d_style: f64,
    pub g_gan: f64,
    pub g_sem: f64,
    pub g_style: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct HallucinationModels<S> {
    pub generator: Generator<S>,
    pub d_image: PatchDiscriminator<S>,
    pub d_style: PatchDiscriminator<S>,
}

impl<S: Scalar> HallucinationModels<S> {
    pub fn init(seed: u64, code_len: usize, disc_width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "hallucination-init"));
        Self {
            generator: Generator::new(&mut rng, code_len),
            d_image: PatchDiscriminator::new(&mut rng, 3, disc_width),
            d_style: PatchDiscriminator::new(&mut rng, 6, disc_width),
        }
    }
}

/// Images sampled for one iteration, one entry per domain.
struct Draw {
    source: Vec<usize>,
    exemplar: Vec<usize>,
    anchor: Vec<usize>,
    same: Vec<(usize, usize)>,
    /// `cross[o - 1][j]`: index in domain `(j + o) % K`.
    cross: Vec<Vec<usize>>,
}

fn draw<S: Scalar>(rng: &mut ChaCha8Rng, n_source: usize, domains: &[TargetDomain<S>]) -> Draw {
    let k = domains.len();
    let mut d = Draw {
        source: Vec::with_capacity(k),
        exemplar: Vec::with_capacity(k),
        anchor: Vec::with_capacity(k),
        same: Vec::with_capacity(k),
        cross: vec![Vec::with_capacity(k); k - 1],
    };
    for dom in domains {
        let n = dom.len();
        d.source.push(rng.random_range(0..n_source));
        d.exemplar.push(rng.random_range(0..n));
        d.anchor.push(rng.random_range(0..n));
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        d.same.push((a, b));
    }
    for (o, row) in d.cross.iter_mut().enumerate() {
        for j in 0..k {
            row.push(rng.random_range(0..domains[(j + o + 1) % k].len()));
        }
    }
    d
}

fn pair_tensor<S: Scalar>(left: &[&Image], right: &[&Image]) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let l = tape.constant(batch_tensor(left)?);
    let r = tape.constant(batch_tensor(right)?);
    let c = tape.concat_channels(l, r)?;
    Ok(tape.value(c).clone())
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

pub fn validate_inputs<S: Scalar>(source: &[(Image, SegMask)], domains: &[TargetDomain<S>], f_seg: &SegNetwork<S>) -> Result<()> {
    if source.is_empty() {
        return invalid("no source images");
    }
    if domains.len() < 2 {
        return invalid("hallucination needs at least 2 latent domains for the cross-domain style term");
    }
    for (j, d) in domains.iter().enumerate() {
        if d.len() < 2 {
            return invalid(format!("domain {} has {} images; at least 2 needed", j + 1, d.len()));
        }
        if d.codes.len() != d.len() || d.ids.len() != d.len() {
            return invalid(format!("domain {}: ids, images and codes differ in count", j + 1));
        }
    }
    if let Some((_, m)) = source.iter().find(|(_, m)| m.num_classes() != f_seg.classes()) {
        return invalid(format!("source mask has {} classes, f_seg {}", m.num_classes(), f_seg.classes()));
    }
    Ok(())
}

/// Alternating GAN training of the generator against D_I and D_Sty with a
/// frozen segmentation model providing the semantic loss.
///
/// Each iteration draws one source image per domain. With `weights.style = 0`
/// D_Sty is neither evaluated nor trained.
pub fn train_hallucination<S: Scalar>(
    source: &[(Image, SegMask)],
    domains: &[TargetDomain<S>],
    f_seg: &SegNetwork<S>,
    config: &HallucinationConfig,
    mut on_step: impl FnMut(&HallucinationStep),
) -> Result<HallucinationModels<S>> {
    validate_inputs(source, domains, f_seg)?;
    config.weights.validate()?;
    let k = domains.len();
    let code_len = domains[0].codes[0].len();
    let mut models = HallucinationModels::init(config.seed, code_len, config.disc_width);
    let all_codes: Vec<StyleCode<S>> = domains.iter().flat_map(|d| d.codes.iter().cloned()).collect();
    models.generator.code_norm = CodeNorm::fit(&all_codes)?;

    let opt = |p| Adam::new(p, config.lr, config.beta1, config.beta2);
    let mut opt_g = opt(models.generator.params());
    let mut opt_di = opt(models.d_image.params());
    let mut opt_ds = opt(models.d_style.params());
    let mut rng = ChaCha8Rng::seed_from_u64(derive(config.seed, "hallucination-draw"));
    let w = config.weights;
    let use_style = w.style > 0.0;
    let start = Instant::now();

    for it in 0..config.iterations {
        let d = draw(&mut rng, source.len(), domains);
        let src_imgs: Vec<&Image> = d.source.iter().map(|&i| &source[i].0).collect();
        let src_masks: Vec<&SegMask> = d.source.iter().map(|&i| &source[i].1).collect();
        let ex_codes: Vec<&StyleCode<S>> = d.exemplar.iter().enumerate().map(|(j, &i)| &domains[j].codes[i]).collect();
        let anchors: Vec<&Image> = d.anchor.iter().enumerate().map(|(j, &i)| &domains[j].images[i]).collect();

        // generator forward, kept for the generator step
        let mut gt = Tape::new();
        let g_bound = models.generator.params().bind(&mut gt, true);
        let x = gt.constant(batch_tensor(&src_imgs)?);
        let codes = gt.constant(models.generator.code_tensor(&ex_codes)?);
        let fake = models.generator.forward(&mut gt, &g_bound, x, codes)?;
        let fake_val = gt.value(fake).clone();

        // discriminator step
        let mut dt = Tape::new();
        let di_bound = models.d_image.params().bind(&mut dt, true);
        let real_v = dt.constant(batch_tensor(&anchors)?);
        let fake_v = dt.constant(fake_val.clone());
        let real_l = models.d_image.logits(&mut dt, &di_bound, real_v)?;
        let fake_l = models.d_image.logits(&mut dt, &di_bound, fake_v)?;
        let d_image_loss = loss_gan_disc(&mut dt, real_l, fake_l)?;
        let d_image_val = finite(dt.scalar(d_image_loss).to_f64().unwrap(), "D_I loss", it)?;
        let grads = dt.backward(d_image_loss);
        let gi = di_bound.grads(&grads, models.d_image.params());
        opt_di.step(models.d_image.params_mut(), &gi);

        let mut d_style_val = 0.0;
        if use_style {
            let mut st = Tape::new();
            let ds_bound = models.d_style.params().bind(&mut st, true);
            let (sa, sb): (Vec<&Image>, Vec<&Image>) = d
                .same
                .iter()
                .enumerate()
                .map(|(j, &(a, b))| (&domains[j].images[a], &domains[j].images[b]))
                .unzip();
            let same = st.constant(pair_tensor(&sa, &sb)?);
            let same_l = models.d_style.logits(&mut st, &ds_bound, same)?;
            let mut cross_l = Vec::with_capacity(k - 1);
            for (o, row) in d.cross.iter().enumerate() {
                let other: Vec<&Image> = row.iter().enumerate().map(|(j, &i)| &domains[(j + o + 1) % k].images[i]).collect();
                let c = st.constant(pair_tensor(&anchors, &other)?);
                cross_l.push(models.d_style.logits(&mut st, &ds_bound, c)?);
            }
            let anchor_t = st.constant(batch_tensor(&anchors)?);
            let fake_c = st.constant(fake_val.clone());
            let tp = st.concat_channels(anchor_t, fake_c)?;
            let trans_l = models.d_style.logits(&mut st, &ds_bound, tp)?;
            let loss = loss_style_disc(&mut st, same_l, &cross_l, trans_l)?;
            d_style_val = finite(st.scalar(loss).to_f64().unwrap(), "D_Sty loss", it)?;
            let grads = st.backward(loss);
            let gs = ds_bound.grads(&grads, models.d_style.params());
            opt_ds.step(models.d_style.params_mut(), &gs);
        }

        // generator step against the updated discriminators
        let di_frozen = models.d_image.params().bind(&mut gt, false);
        let fl = models.d_image.logits(&mut gt, &di_frozen, fake)?;
        let g_gan = loss_gan_gen(&mut gt, fl);
        let seg_frozen = f_seg.params().bind(&mut gt, false);
        let seg = f_seg.forward(&mut gt, &seg_frozen, fake)?;
        let g_sem = cross_entropy(&mut gt, seg.logits, &batch_labels(&src_masks))?;
        let mut terms: Vec<(Var, S)> = vec![(g_gan, S::lit(w.gan)), (g_sem, S::lit(w.sem))];
        let mut g_style_val = 0.0;
        if use_style {
            let ds_frozen = models.d_style.params().bind(&mut gt, false);
            let anchor_t = gt.constant(batch_tensor(&anchors)?);
            let tp = gt.concat_channels(anchor_t, fake)?;
            let tl = models.d_style.logits(&mut gt, &ds_frozen, tp)?;
            let g_style = loss_style_gen(&mut gt, tl);
            g_style_val = gt.scalar(g_style).to_f64().unwrap();
            terms.push((g_style, S::lit(w.style)));
        }
        let total = gt.weighted_sum(&terms)?;
        finite(gt.scalar(total).to_f64().unwrap(), "generator loss", it)?;
        let grads = gt.backward(total);
        let gg = g_bound.grads(&grads, models.generator.params());
        opt_g.step(models.generator.params_mut(), &gg);

        on_step(&HallucinationStep {
            iteration: it + 1,
            d_image: d_image_val,
            d_style: d_style_val,
            g_gan: gt.scalar(g_gan).to_f64().unwrap(),
            g_sem: gt.scalar(g_sem).to_f64().unwrap(),
            g_style: g_style_val,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(models)
}
