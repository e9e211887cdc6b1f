use dha::adaptation::{disc_step, train_adapt, AdaptConfig, AdaptData, AdaptMode, AdaptModels, AdaptStep, Scheme, SegNetwork};
use dha::data::{apply_style, generate_scene, Image, SceneConfig, SegMask, StylePreset, NUM_CLASSES};
use dha::nets::Network;
use dha_nn::{Adam, Tensor};

const SIDE: usize = 16;

fn scene_cfg() -> SceneConfig {
    SceneConfig {
        height: SIDE,
        width: SIDE,
        num_classes: NUM_CLASSES,
    }
}

struct Fixture {
    source: Vec<(Image, SegMask)>,
    translated: Vec<Vec<(Image, SegMask)>>,
    targets: Vec<Vec<Image>>,
}

impl Fixture {
    fn new(k: usize) -> Self {
        let sc = scene_cfg();
        let source: Vec<(Image, SegMask)> = (0..6).map(|i| generate_scene(i, &sc).unwrap()).collect();
        let styles = StylePreset::ALL;
        let translated = (0..k)
            .map(|j| {
                source
                    .iter()
                    .map(|(im, m)| (apply_style(im, &styles[j % 4].params()).unwrap(), m.clone()))
                    .collect()
            })
            .collect();
        let targets = (0..k)
            .map(|j| {
                (0..4)
                    .map(|i| apply_style(&generate_scene(100 + 10 * j as u64 + i, &sc).unwrap().0, &styles[j % 4].params()).unwrap())
                    .collect()
            })
            .collect();
        Self {
            source,
            translated,
            targets,
        }
    }

    fn data(&self) -> AdaptData<'_> {
        AdaptData {
            source: &self.source,
            translated: &self.translated,
            targets: &self.targets,
        }
    }
}

fn config(mode: AdaptMode, iterations: usize) -> AdaptConfig {
    let mut c = AdaptConfig::new(mode, Scheme::Short, 3);
    c.iterations = iterations;
    c.checkpoint_every = 2;
    c.disc_width = 8;
    c
}

fn run(fx: &Fixture, cfg: &AdaptConfig) -> (AdaptModels<f64>, Vec<AdaptStep>, Vec<usize>) {
    let mut steps = Vec::new();
    let mut snaps = Vec::new();
    let models = train_adapt::<f64>(&fx.data(), NUM_CLASSES, cfg, |s| steps.push(s.clone()), |it, _| {
        snaps.push(it);
        Ok(())
    })
    .unwrap();
    (models, steps, snaps)
}

fn params_of(net: &SegNetwork<f64>) -> Vec<Tensor<f64>> {
    net.params().tensors().to_vec()
}

#[test]
fn lambda_out_zero_follows_the_none_trajectory() {
    let fx = Fixture::new(3);
    let mut dw = config(AdaptMode::DomainWise, 3);
    dw.lambda_out = 0.0;
    let (a, sa, _) = run(&fx, &dw);
    let (b, sb, _) = run(&fx, &config(AdaptMode::None, 3));
    let task = |s: &[AdaptStep]| s.iter().map(|r| r.loss_task.to_bits()).collect::<Vec<_>>();
    assert_eq!(task(&sa), task(&sb));
    assert_eq!(params_of(&a.seg), params_of(&b.seg));
    // the discriminators still trained, they just never reached F
    assert!(sa.iter().all(|r| r.loss_d.iter().all(|&d| d > 0.0)));
}

#[test]
fn discriminator_counts_per_mode() {
    let fx = Fixture::new(3);
    let expect = [
        (AdaptMode::SourceOnly, 0),
        (AdaptMode::None, 0),
        (AdaptMode::TraditionalRaw, 1),
        (AdaptMode::TraditionalTranslated, 1),
        (AdaptMode::DomainWise, 3),
        (AdaptMode::DomainWiseRaw, 3),
    ];
    for (mode, n) in expect {
        let (m, steps, _) = run(&fx, &config(mode, 1));
        assert_eq!(m.discriminators.len(), n, "{mode}");
        assert_eq!(steps[0].loss_out.len(), 3);
    }
}

#[test]
fn domain_discriminators_are_parameter_disjoint() {
    let k = 3;
    let mut models = AdaptModels::<f64>::init(5, NUM_CLASSES, k, 8);
    let before: Vec<Vec<Tensor<f64>>> = models.discriminators.iter().map(|d| d.params().tensors().to_vec()).collect();
    // independently initialized, not aliases of one another
    assert_ne!(before[0], before[1]);
    let mut opt = Adam::new(models.discriminators[1].params(), 1e-2, 0.9, 0.99);
    let probs = Tensor::full(&[1, NUM_CLASSES, SIDE, SIDE], 1.0 / NUM_CLASSES as f64);
    let mut skewed = probs.clone();
    skewed.data_mut()[0] = 0.9;
    disc_step(&mut models.discriminators[1], &mut opt, Scheme::Short.gan_form(), probs, skewed).unwrap();
    let after: Vec<Vec<Tensor<f64>>> = models.discriminators.iter().map(|d| d.params().tensors().to_vec()).collect();
    assert_eq!(after[0], before[0]);
    assert_eq!(after[2], before[2]);
    assert_ne!(after[1], before[1]);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let fx = Fixture::new(2);
    let cfg = config(AdaptMode::DomainWise, 3);
    let (a, sa, _) = run(&fx, &cfg);
    let (b, sb, _) = run(&fx, &cfg);
    let strip = |s: Vec<AdaptStep>| s.into_iter().map(|r| (r.loss_task, r.loss_out, r.loss_d)).collect::<Vec<_>>();
    assert_eq!(strip(sa), strip(sb));
    assert_eq!(params_of(&a.seg), params_of(&b.seg));
    let mut other = cfg.clone();
    other.seed = 4;
    let (c, _, _) = run(&fx, &other);
    assert_ne!(params_of(&a.seg), params_of(&c.seg));
}

#[test]
fn snapshots_at_interval_and_end() {
    let fx = Fixture::new(2);
    let (_, steps, snaps) = run(&fx, &config(AdaptMode::None, 5));
    assert_eq!(snaps, vec![2, 4, 5]);
    assert_eq!(steps.len(), 5);
    assert_eq!(steps.last().unwrap().iteration, 5);
}

#[test]
fn least_squares_scheme_runs() {
    let fx = Fixture::new(2);
    let mut cfg = AdaptConfig::new(AdaptMode::TraditionalTranslated, Scheme::Long, 1);
    cfg.iterations = 2;
    cfg.disc_width = 8;
    let (_, steps, _) = run(&fx, &cfg);
    // LS discriminator loss is bounded by 2 (two squared errors of probabilities)
    assert!(steps.iter().flat_map(|s| &s.loss_d).all(|&d| (0.0..=2.0).contains(&d)));
}

#[test]
fn mode_and_data_mismatches_are_rejected() {
    let fx = Fixture::new(2);
    let missing_translated = AdaptData {
        source: &fx.source,
        translated: &[],
        targets: &fx.targets,
    };
    let run_with = |data: &AdaptData, mode| train_adapt::<f64>(data, NUM_CLASSES, &config(mode, 1), |_| {}, |_, _| Ok(()));
    assert!(run_with(&missing_translated, AdaptMode::DomainWise).is_err());
    assert!(run_with(&missing_translated, AdaptMode::TraditionalRaw).is_ok());
    let no_targets = AdaptData {
        source: &fx.source,
        translated: &fx.translated,
        targets: &[],
    };
    assert!(run_with(&no_targets, AdaptMode::None).is_err());
    assert!(run_with(&no_targets, AdaptMode::SourceOnly).is_ok());
    let mut bad = config(AdaptMode::None, 1);
    bad.lambda_out = -1.0;
    assert!(train_adapt::<f64>(&fx.data(), NUM_CLASSES, &bad, |_| {}, |_, _| Ok(())).is_err());
}

#[test]
fn mode_names_round_trip() {
    for m in AdaptMode::ALL {
        assert_eq!(m.as_str().parse::<AdaptMode>().unwrap(), m);
    }
    assert!("sideways".parse::<AdaptMode>().is_err());
}
