mod common;

use common::{check_network, random_tensor, rel_err, FD_STEP, REL_TOL};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensornet::loss::{dbl_loss, DiceFocal, PairLabels};
use tensornet::{LayerSpec, Mode, Network, NetworkSpec, Shape, Tensor};

fn net(in_ch: usize, layers: Vec<LayerSpec>, seed: u64) -> Network<f64> {
    Network::new(NetworkSpec {
        in_ch,
        layers,
        seed,
    })
    .unwrap()
}

fn conv(out_ch: usize, k: usize, pad: usize, bias: bool) -> LayerSpec {
    LayerSpec::Conv2d {
        out_ch,
        k,
        pad,
        bias,
    }
}

#[test]
fn conv_same_padding_gradients() {
    for (seed, (n, c, h, w)) in [(1u64, (2, 2, 5, 6)), (2, (1, 3, 4, 4)), (3, (3, 1, 7, 3))] {
        let mut m = net(c, vec![conv(3, 3, 1, true)], seed);
        let x = random_tensor(Shape::new(n, c, h, w), seed);
        let err = check_network(&mut m, &x, seed);
        assert!(err <= REL_TOL, "conv 3x3 seed {seed}: {err}");
    }
}

#[test]
fn conv_valid_and_pointwise_gradients() {
    let mut m = net(2, vec![conv(2, 3, 0, true), conv(3, 1, 0, false)], 4);
    let x = random_tensor(Shape::new(2, 2, 6, 5), 4);
    let err = check_network(&mut m, &x, 4);
    assert!(err <= REL_TOL, "{err}");

    let mut m = net(1, vec![conv(2, 5, 2, true)], 5);
    let x = random_tensor(Shape::new(2, 1, 4, 6), 5);
    assert!(check_network(&mut m, &x, 5) <= REL_TOL);
}

#[test]
fn batch_norm_gradients() {
    let mut m = net(3, vec![LayerSpec::BatchNorm { ch: 3 }], 6);
    // Give gamma/beta non-trivial values so their gradients are exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for p in m.params_mut() {
        for v in p.iter_mut() {
            *v = rng.random_range(0.5..1.5);
        }
    }
    let x = random_tensor(Shape::new(3, 3, 3, 4), 6);
    let err = check_network(&mut m, &x, 6);
    assert!(err <= REL_TOL, "{err}");
}

#[test]
fn relu_gradients_away_from_kink() {
    let mut m = net(2, vec![LayerSpec::Relu], 7);
    let mut x = random_tensor(Shape::new(2, 2, 4, 4), 7);
    for v in x.data_mut() {
        // Keep every input at least 50 steps from zero.
        if v.abs() < 50.0 * FD_STEP {
            *v = if *v >= 0.0 { 0.1 } else { -0.1 };
        }
    }
    assert!(check_network(&mut m, &x, 7) <= REL_TOL);
}

#[test]
fn sigmoid_gradients() {
    let mut m = net(1, vec![LayerSpec::Sigmoid], 8);
    let mut x = random_tensor(Shape::new(2, 1, 3, 3), 8);
    for v in x.data_mut() {
        *v *= 4.0;
    }
    assert!(check_network(&mut m, &x, 8) <= REL_TOL);
}

fn distinct_values(shape: Shape, seed: u64) -> Tensor<f64> {
    // Values spaced 0.01 apart so no perturbation changes a pooling argmax.
    let mut vals: Vec<f64> = (0..shape.len()).map(|i| i as f64 * 0.01 - 0.5).collect();
    vals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Tensor::from_vec(shape, vals).unwrap()
}

#[test]
fn max_pool_gradients() {
    let mut m = net(2, vec![LayerSpec::MaxPool2], 9);
    let x = distinct_values(Shape::new(2, 2, 4, 6), 9);
    assert!(check_network(&mut m, &x, 9) <= REL_TOL);
}

#[test]
fn upsample_gradients() {
    let mut m = net(
        2,
        vec![LayerSpec::MaxPool2, LayerSpec::UpsampleNearest2],
        10,
    );
    let x = distinct_values(Shape::new(1, 2, 4, 4), 10);
    assert!(check_network(&mut m, &x, 10) <= REL_TOL);
}

#[test]
fn concat_skip_gradients() {
    // conv -> [skip 0] -> pool -> conv -> up -> concat(0) -> conv -> sigmoid
    let layers = vec![
        conv(2, 3, 1, true),
        LayerSpec::Sigmoid,
        LayerSpec::MaxPool2,
        conv(3, 3, 1, true),
        LayerSpec::UpsampleNearest2,
        LayerSpec::Concat { skip: 1 },
        conv(1, 1, 0, true),
        LayerSpec::Sigmoid,
    ];
    let mut m = net(1, layers, 11);
    // Spread-out inputs make pooling ties after the first sigmoid unlikely.
    let x = distinct_values(Shape::new(2, 1, 4, 4), 11);
    let err = check_network(&mut m, &x, 11);
    assert!(err <= REL_TOL, "{err}");
}

#[test]
fn three_layer_network_gradients() {
    let layers = vec![
        conv(3, 3, 1, false),
        LayerSpec::BatchNorm { ch: 3 },
        LayerSpec::Sigmoid,
        conv(2, 3, 1, true),
    ];
    for seed in 20..23 {
        let mut m = net(2, layers.clone(), seed);
        let x = random_tensor(Shape::new(3, 2, 5, 5), seed);
        let err = check_network(&mut m, &x, seed);
        assert!(err <= REL_TOL, "seed {seed}: {err}");
    }
}

#[test]
fn zero_upstream_gives_zero_parameter_gradients() {
    let layers = vec![
        conv(3, 3, 1, true),
        LayerSpec::BatchNorm { ch: 3 },
        LayerSpec::Relu,
        conv(1, 3, 1, true),
    ];
    let mut m = net(1, layers, 30);
    let x = random_tensor(Shape::new(2, 1, 6, 6), 30);
    let f = m.forward(&x, Mode::Train).unwrap();
    let g = m
        .backward(&f, &Tensor::zeros(f.output.shape()))
        .unwrap();
    assert!(g.params.iter().flatten().all(|&v| v == 0.0));
    assert!(g.input.data().iter().all(|&v| v == 0.0));
}

#[test]
fn duplicated_batch_doubles_gradient() {
    let layers = vec![conv(3, 3, 1, true), LayerSpec::Sigmoid, conv(1, 3, 1, true)];
    let mut m = net(1, layers, 31);
    let x = random_tensor(Shape::new(1, 1, 5, 5), 31);
    let x2 = Tensor::stack(&[x.clone(), x.clone()]).unwrap();

    let f1 = m.forward(&x, Mode::Train).unwrap();
    let g1 = m.backward(&f1, &Tensor::filled(f1.output.shape(), 1.0)).unwrap();
    let f2 = m.forward(&x2, Mode::Train).unwrap();
    let g2 = m.backward(&f2, &Tensor::filled(f2.output.shape(), 1.0)).unwrap();
    for (a, b) in g1.params.iter().flatten().zip(g2.params.iter().flatten()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} {b}");
    }
}

#[test]
fn dbl_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let (n, dim) = (6, 5);
    let products = [0, 0, 1, 1, 2, 2];
    let labels = PairLabels::from_fn(n, |i, j| products[i] == products[j]);
    let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-0.8..0.8)).collect();
    let out = dbl_loss(&x, dim, &labels).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp[j] += FD_STEP;
        let up = dbl_loss(&xp, dim, &labels).unwrap().loss;
        xp[j] -= 2.0 * FD_STEP;
        let down = dbl_loss(&xp, dim, &labels).unwrap().loss;
        worst = worst.max(rel_err(out.grad[j], (up - down) / (2.0 * FD_STEP)));
    }
    assert!(worst <= REL_TOL, "{worst}");
}

#[test]
fn dice_focal_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 40;
    let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    let truth: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
    let loss = DiceFocal::default();
    let out = loss.evaluate(&pred, &truth).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let mut p = pred.clone();
        p[j] += FD_STEP;
        let up = loss.evaluate(&p, &truth).unwrap().loss;
        p[j] -= 2.0 * FD_STEP;
        let down = loss.evaluate(&p, &truth).unwrap().loss;
        worst = worst.max(rel_err(out.grad[j], (up - down) / (2.0 * FD_STEP)));
    }
    assert!(worst <= REL_TOL, "{worst}");
}

#[test]
fn sigmoid_head_with_dice_focal_end_to_end() {
    // Chain rule through the network into the segmentation loss.
    let layers = vec![conv(2, 3, 1, true), LayerSpec::Sigmoid, conv(1, 1, 0, true), LayerSpec::Sigmoid];
    let mut m = net(1, layers, 42);
    let x = random_tensor(Shape::new(2, 1, 4, 4), 42);
    let truth: Vec<f64> = (0..32).map(|i| ((i / 3) % 2) as f64).collect();
    let loss = DiceFocal::default();
    let eval = |m: &mut Network<f64>| {
        let f = m.forward(&x, Mode::Train).unwrap();
        loss.evaluate(f.output.data(), &truth).unwrap().loss
    };
    let f = m.forward(&x, Mode::Train).unwrap();
    let l = loss.evaluate(f.output.data(), &truth).unwrap();
    let up = Tensor::from_vec(f.output.shape(), l.grad).unwrap();
    let g = m.backward(&f, &up).unwrap();
    let mut worst: f64 = 0.0;
    for p in 0..m.params().len() {
        for j in 0..m.params()[p].len() {
            let orig = m.params()[p][j];
            m.params_mut()[p][j] = orig + FD_STEP;
            let a = eval(&mut m);
            m.params_mut()[p][j] = orig - FD_STEP;
            let b = eval(&mut m);
            m.params_mut()[p][j] = orig;
            worst = worst.max(rel_err(g.params[p][j], (a - b) / (2.0 * FD_STEP)));
        }
    }
    assert!(worst <= REL_TOL, "{worst}");
}
