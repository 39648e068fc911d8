#![allow(dead_code)]

pub mod grad_cases;
pub mod oracles;

use domex_core::nn::{Graph, NnError, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces an output to a scalar with fixed random weights so every element matters.
pub fn probe(g: &mut Graph, out: Var, seed: u64) -> Result<Var, NnError> {
    let v = g.value(out);
    let w = g.input(random_tensor(v.rows(), v.cols(), seed))?;
    let m = g.mul(out, w)?;
    g.sum(m)
}

/// Largest relative error between backprop and central differences over every
/// parameter value of the store.
pub fn max_relative_error(
    store: &mut ParamStore,
    loss: impl Fn(&ParamStore) -> (f64, Option<domex_core::nn::ParamGrads>),
) -> f64 {
    let (_, grads) = loss(store);
    let grads = grads.expect("analytic gradients");
    let ids: Vec<_> = store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let n = store.get(id).value.len();
        for i in 0..n {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + STEP;
            let plus = loss(store).0;
            store.get_mut(id).value.data_mut()[i] = orig - STEP;
            let minus = loss(store).0;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}
