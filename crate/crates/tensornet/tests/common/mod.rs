#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensornet::{Mode, Network, Shape, Tensor};

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
pub const MAG_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(MAG_FLOOR)
}

pub fn random_tensor(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Loss `sum(r * y)` for fixed random weights `r`.
fn weighted_loss(net: &mut Network<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    let f = net.forward(x, Mode::Train).unwrap();
    f.output
        .data()
        .iter()
        .zip(r.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// Central finite differences for every parameter and every input element.
/// Returns the maximum relative error.
pub fn check_network(net: &mut Network<f64>, x: &Tensor<f64>, seed: u64) -> f64 {
    let probe = net.forward(x, Mode::Train).unwrap();
    let r = random_tensor(probe.output.shape(), seed ^ 0x5eed);
    let grads = net.backward(&probe, &r).unwrap();

    let mut worst: f64 = 0.0;
    let nparams = net.params().len();
    for p in 0..nparams {
        let len = net.params()[p].len();
        for j in 0..len {
            let orig = net.params()[p][j];
            net.params_mut()[p][j] = orig + FD_STEP;
            let up = weighted_loss(net, x, &r);
            net.params_mut()[p][j] = orig - FD_STEP;
            let down = weighted_loss(net, x, &r);
            net.params_mut()[p][j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads.params[p][j], numeric));
        }
    }
    let mut xp = x.clone();
    for j in 0..x.data().len() {
        let orig = x.data()[j];
        xp.data_mut()[j] = orig + FD_STEP;
        let up = weighted_loss(net, &xp, &r);
        xp.data_mut()[j] = orig - FD_STEP;
        let down = weighted_loss(net, &xp, &r);
        xp.data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grads.input.data()[j], numeric));
    }
    worst
}
