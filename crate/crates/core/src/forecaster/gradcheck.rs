//! Central finite-difference check of the analytic BPTT gradients.

use super::lstm::{stack, DropoutMasks, Lstm, LstmShape, Params};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub shape: LstmShape,
    pub steps: usize,
    pub batch: usize,
    pub parameters: usize,
    pub max_rel_error: f64,
    /// Index into the flat parameter buffer of the worst entry.
    pub worst_index: usize,
}

/// `|a - n| / max(|a|, |n|)`, with the denominator floored at `floor` so that
/// gradients that are numerically zero compare by absolute difference.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const REL_FLOOR: f64 = 1e-6;

fn mse(model: &Lstm<f64>, x: &ndarray::Array2<f64>, y: &Array1<f64>, steps: usize, masks: &DropoutMasks<f64>) -> f64 {
    let batch = y.len();
    let (out, _) = model.forward(x.clone(), steps, batch, Some(masks.clone()));
    (&out - y).mapv(|d| d * d).sum() / batch as f64
}

/// Builds a random toy model (hidden sizes 2-3), random inputs, targets and
/// dropout masks, and compares every parameter's analytic gradient of the
/// batch MSE against a central difference with step `eps`.
pub fn check_random_model(seed: u64, eps: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = LstmShape {
        input: rng.random_range(2..=4),
        hidden1: rng.random_range(2..=3),
        hidden2: rng.random_range(2..=3),
    };
    let steps = rng.random_range(3..=8);
    let batch = rng.random_range(1..=3);
    let mut params = Params::<f64>::zeros(shape);
    params
        .data
        .iter_mut()
        .for_each(|w| *w = rng.random_range(-0.8..0.8));
    let seqs: Vec<Vec<f32>> = (0..batch)
        .map(|_| {
            (0..steps * shape.input)
                .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                .collect()
        })
        .collect();
    let refs: Vec<&[f32]> = seqs.iter().map(Vec::as_slice).collect();
    let x = stack::<f64>(&refs, steps, shape.input);
    let y = Array1::from_shape_fn(batch, |_| rng.random_range(0.0..3.0));
    let masks = DropoutMasks::sample(shape, steps, batch, 0.2, &mut rng);

    let mut model = Lstm::new(params);
    let (out, cache) = model.forward(x.clone(), steps, batch, Some(masks.clone()));
    let dy = (&out - &y).mapv(|d| 2.0 * d / batch as f64);
    let mut grads = Params::zeros(shape);
    model.backward(cache, &dy, &mut grads);

    let mut worst = (0.0, 0);
    for k in 0..model.params.data.len() {
        let orig = model.params.data[k];
        model.params.data[k] = orig + eps;
        let up = mse(&model, &x, &y, steps, &masks);
        model.params.data[k] = orig - eps;
        let down = mse(&model, &x, &y, steps, &masks);
        model.params.data[k] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(grads.data[k], numeric, REL_FLOOR);
        if err > worst.0 {
            worst = (err, k);
        }
    }
    GradCheck {
        shape,
        steps,
        batch,
        parameters: model.params.data.len(),
        max_rel_error: worst.0,
        worst_index: worst.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9, 1e-6) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn toy_models_pass() {
        for seed in 0..5 {
            let r = check_random_model(seed, 1e-4);
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn a_broken_gradient_is_caught() {
        // perturbing the analytic result must show up as a large error
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = LstmShape {
            input: 2,
            hidden1: 2,
            hidden2: 2,
        };
        let mut params = Params::<f64>::zeros(shape);
        params.data.iter_mut().for_each(|w| *w = rng.random_range(-0.8..0.8));
        let model = Lstm::new(params);
        let seq: Vec<f32> = (0..8).map(|i| i as f32 * 0.3).collect();
        let x = stack::<f64>(&[&seq], 4, 2);
        let masks = DropoutMasks::sample(shape, 4, 1, 0.0, &mut rng);
        let (out, cache) = model.forward(x.clone(), 4, 1, Some(masks.clone()));
        let y = Array1::from(vec![1.0]);
        let dy = (&out - &y).mapv(|d| 2.0 * d);
        let mut grads = Params::zeros(shape);
        model.backward(cache, &dy, &mut grads);
        let mut m = model.clone();
        let k = 3;
        let orig = m.params.data[k];
        m.params.data[k] = orig + 1e-4;
        let up = mse(&m, &x, &y, 4, &masks);
        m.params.data[k] = orig - 1e-4;
        let down = mse(&m, &x, &y, 4, &masks);
        let numeric = (up - down) / 2e-4;
        assert!(relative_error(grads.data[k], numeric, REL_FLOOR) < 1e-4);
        assert!(relative_error(grads.data[k] * 1.01, numeric, REL_FLOOR) > 1e-4);
    }
}
