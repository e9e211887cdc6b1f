use dha_nn::gradcheck::rel_err;
use dha_nn::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks every element of every input against central differences of
/// `build`, which must return a scalar loss.
fn check_inputs(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let eval = |ins: &[Tensor<f64>], grad: bool| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
        let loss = build(&mut tape, &vars);
        let value = tape.scalar(loss);
        let grads = grad.then(|| {
            let g = tape.backward(loss);
            vars.iter()
                .zip(ins)
                .map(|(&v, t)| g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect::<Vec<_>>()
        });
        (value, grads)
    };
    let (_, analytic) = eval(&inputs, true);
    let analytic = analytic.unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (ti, t) in inputs.iter().enumerate() {
        for i in 0..t.numel() {
            let mut up = inputs.clone();
            up[ti].data_mut()[i] += h;
            let mut down = inputs.clone();
            down[ti].data_mut()[i] -= h;
            let numeric = (eval(&up, false).0 - eval(&down, false).0) / (2.0 * h);
            let e = rel_err(analytic[ti].data()[i], numeric, 1e-4);
            worst = worst.max(e);
            assert!(e < 1e-5, "input {ti} elem {i}: analytic {} numeric {numeric}", analytic[ti].data()[i]);
        }
    }
    assert!(worst < 1e-5);
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (4, 2, 1)] {
        let x = random(&mut rng, &[2, 3, 6, 5]);
        let w = random(&mut rng, &[4, 3, k, k]);
        let b = random(&mut rng, &[4]);
        check_inputs(vec![x, w, b], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
            t.squared_error(y, 0.3)
        });
    }
}

#[test]
fn linear_and_affine_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[2, 5]);
    let w = random(&mut rng, &[3, 5]);
    let b = random(&mut rng, &[3]);
    let feat = random(&mut rng, &[2, 3, 4, 4]);
    check_inputs(vec![x, w, b, feat], |t, v| {
        let g = t.linear(v[0], v[1], Some(v[2])).unwrap();
        let beta = t.scale(g, 0.5);
        let y = t.channel_affine(v[3], g, beta).unwrap();
        t.squared_error(y, -0.2)
    });
}

#[test]
fn norm_activation_and_resampling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[2, 2, 4, 4]);
    check_inputs(vec![x.clone()], |t, v| {
        let y = t.instance_norm(v[0], 1e-5).unwrap();
        let y = t.leaky_relu(y, 0.2);
        t.squared_error(y, 0.1)
    });
    check_inputs(vec![x.clone()], |t, v| {
        let y = t.upsample_bilinear(v[0], 16, 12).unwrap();
        let y = t.sigmoid(y);
        t.squared_error(y, 0.9)
    });
    check_inputs(vec![x.clone(), random(&mut rng, &[2, 1, 8, 8])], |t, v| {
        let up = t.upsample_nearest2x(v[0]).unwrap();
        let cat = t.concat_channels(up, v[1]).unwrap();
        let m = t.spatial_mean(cat).unwrap();
        t.squared_error(m, 0.4)
    });
}

#[test]
fn softmax_and_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[2, 5, 3, 3]);
    let labels: Vec<usize> = (0..18).map(|i| (i * 7) % 5).collect();
    check_inputs(vec![x.clone()], |t, v| {
        let lp = t.log_softmax(v[0]).unwrap();
        t.nll(lp, &labels).unwrap()
    });
    check_inputs(vec![x.clone()], |t, v| {
        let p = t.softmax(v[0]).unwrap();
        t.squared_error(p, 0.5)
    });
    check_inputs(vec![random(&mut rng, &[4])], |t, v| {
        let real = t.bce_with_logits(v[0], 1.0);
        let fake = t.bce_with_logits(v[0], 0.0);
        let m = t.mean(v[0]);
        t.weighted_sum(&[(real, 0.7), (fake, 0.2), (m, 1.5)]).unwrap()
    });
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = Tape::new();
    let x = t.constant(random(&mut rng, &[1, 5, 4, 4]).map(|v| v * 40.0));
    let p = t.softmax(x).unwrap();
    let d = t.value(p).data();
    for px in 0..16 {
        let s: f64 = (0..5).map(|c| d[c * 16 + px]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn frozen_leaves_receive_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut t = Tape::new();
    let x = t.leaf(random(&mut rng, &[1, 2, 4, 4]), true);
    let w = t.constant(random(&mut rng, &[2, 2, 3, 3]));
    let y = t.conv2d(x, w, None, 1, 1).unwrap();
    let d = t.detach(y);
    let loss = t.squared_error(d, 0.0);
    let g = t.backward(loss);
    assert!(g.get(x).is_none());
    assert!(!t.requires_grad(loss));
}
