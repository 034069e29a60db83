use super::lstm::{stack, DropoutMasks, Lstm, LstmShape, Params};
use crate::model::{LabeledWindow, CHANNELS, WINDOW_LEN};
use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub shape: LstmShape,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub dropout: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            shape: LstmShape::default(),
            learning_rate: 1e-3,
            max_epochs: 50,
            patience: 5,
            batch_size: 64,
            dropout: 0.2,
            clip_norm: 5.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("need at least {min} training windows, got {got}")]
    TooFewWindows { min: usize, got: usize },
    #[error("validation set is empty")]
    NoValidation,
    #[error("window {index} has {got} features, expected {expected}")]
    WindowShape {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error(
        "training diverged at epoch {epoch}: validation MSE {val_mse:.4} > 10x initial {initial:.4} \
         for 3 epochs (train loss {train_loss:.4})"
    )]
    Diverged {
        epoch: usize,
        val_mse: f64,
        initial: f64,
        train_loss: f64,
    },
    #[error("invalid training config: {0}")]
    Config(String),
}

pub const MIN_TRAIN_WINDOWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub initial_val_mse: f64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

/// Adam with bias correction over a flat parameter buffer.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

fn check_shapes(windows: &[LabeledWindow]) -> Result<(), TrainError> {
    match windows.iter().position(|w| !w.has_shape()) {
        Some(index) => Err(TrainError::WindowShape {
            index,
            got: windows[index].features.len(),
            expected: WINDOW_LEN * CHANNELS,
        }),
        None => Ok(()),
    }
}

/// Clamped predictions for many windows, in chunks.
pub fn predict_many(model: &Lstm<f32>, windows: &[&[f32]]) -> Vec<f64> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CHUNK) {
        let x = stack::<f32>(chunk, WINDOW_LEN, CHANNELS);
        let (y, _) = model.forward(x, WINDOW_LEN, chunk.len(), None);
        out.extend(y.iter().map(|&v| f64::from(v).max(0.0)));
    }
    out
}

pub fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len().max(1) as f64
}

fn val_mse(model: &Lstm<f32>, val: &[LabeledWindow]) -> f64 {
    let inputs: Vec<&[f32]> = val.iter().map(|w| w.features.as_slice()).collect();
    let truth: Vec<f64> = val.iter().map(|w| w.time_to_leak).collect();
    mse(&predict_many(model, &inputs), &truth)
}

/// Minibatch Adam on MSE with early stopping on validation MSE; the best
/// weights are restored before returning. Deterministic for a fixed seed.
pub fn train(
    train: &[LabeledWindow],
    val: &[LabeledWindow],
    cfg: &TrainConfig,
) -> Result<(Lstm<f32>, TrainingCurve), TrainError> {
    if train.len() < MIN_TRAIN_WINDOWS {
        return Err(TrainError::TooFewWindows {
            min: MIN_TRAIN_WINDOWS,
            got: train.len(),
        });
    }
    if val.is_empty() {
        return Err(TrainError::NoValidation);
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.dropout) || cfg.learning_rate <= 0.0 {
        return Err(TrainError::Config(format!(
            "batch_size {} dropout {} learning_rate {}",
            cfg.batch_size, cfg.dropout, cfg.learning_rate
        )));
    }
    if cfg.shape.input != CHANNELS {
        return Err(TrainError::Config(format!(
            "model input {} must equal {CHANNELS} channels",
            cfg.shape.input
        )));
    }
    check_shapes(train)?;
    check_shapes(val)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = Params::<f32>::init(cfg.shape, &mut rng);
    let label_mean = train.iter().map(|w| w.time_to_leak).sum::<f64>() / train.len() as f64;
    *params.views_mut().bo = label_mean as f32;
    let mut model = Lstm::new(params);
    let mut adam = Adam::new(cfg.shape.parameter_count(), cfg.learning_rate);
    let mut grads = Params::<f32>::zeros(cfg.shape);

    let initial = val_mse(&model, val);
    let mut curve = TrainingCurve {
        initial_val_mse: initial,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_mse: initial,
        stopped_early: false,
    };
    let mut best = model.params.clone();
    let mut since_best = 0;
    let mut diverging = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[f32]> = idx.iter().map(|&i| train[i].features.as_slice()).collect();
            let y = Array1::from_iter(idx.iter().map(|&i| train[i].time_to_leak as f32));
            let batch = idx.len();
            let masks = (cfg.dropout > 0.0)
                .then(|| DropoutMasks::sample(cfg.shape, WINDOW_LEN, batch, cfg.dropout, &mut rng));
            let x = stack::<f32>(&seqs, WINDOW_LEN, CHANNELS);
            let (out, cache) = model.forward(x, WINDOW_LEN, batch, masks);
            let diff = &out - &y;
            loss_sum += f64::from(diff.mapv(|d| d * d).sum());
            let dy = diff.mapv(|d| 2.0 * d / batch as f32);
            grads.fill_zero();
            model.backward(cache, &dy, &mut grads);
            let norm = f64::from(grads.norm());
            if norm > cfg.clip_norm {
                let scale = (cfg.clip_norm / norm) as f32;
                grads.data.iter_mut().for_each(|g| *g *= scale);
            }
            adam.step(&mut model.params.data, &grads.data);
        }
        let train_loss = loss_sum / train.len() as f64;
        let val = val_mse(&model, val);
        let stats = EpochStats {
            epoch,
            train_loss,
            val_mse: val,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.4} val {val:.4} ({:.1}s)",
            stats.seconds
        );
        curve.epochs.push(stats);

        if !val.is_finite() || val > 10.0 * initial {
            diverging += 1;
            if diverging >= 3 {
                return Err(TrainError::Diverged {
                    epoch,
                    val_mse: val,
                    initial,
                    train_loss,
                });
            }
        } else {
            diverging = 0;
        }
        if val < curve.best_val_mse || curve.best_epoch == 0 {
            curve.best_val_mse = val;
            curve.best_epoch = epoch;
            best = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                curve.stopped_early = true;
                break;
            }
        }
    }
    model.params = best;
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> TrainConfig {
        TrainConfig {
            shape: LstmShape {
                input: 4,
                hidden1: 8,
                hidden2: 4,
            },
            learning_rate: 1e-2,
            max_epochs: 15,
            batch_size: 32,
            dropout: 0.0,
            ..TrainConfig::default()
        }
    }

    fn windows(n: usize, seed: u64, label: impl Fn(&[f32]) -> f64) -> Vec<LabeledWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let level: f32 = rng.random_range(-1.0..1.0);
                let features: Vec<f32> = (0..WINDOW_LEN * CHANNELS)
                    .map(|_| level + rng.random_range(-0.1..0.1))
                    .collect();
                LabeledWindow {
                    end_timestamp: i as i64,
                    time_to_leak: label(&features),
                    features,
                    is_leaking: false,
                }
            })
            .collect()
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = vec![3.0f32, -2.0];
        let mut adam = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f32> = x.iter().map(|v| 2.0 * v).collect();
            adam.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn constant_labels_are_fit() {
        let tr = windows(200, 1, |_| 3.0);
        let va = windows(50, 2, |_| 3.0);
        let (model, curve) = train(&tr, &va, &small()).unwrap();
        assert!(curve.best_val_mse < 1e-3, "{curve:?}");
        let inputs: Vec<&[f32]> = va.iter().map(|w| w.features.as_slice()).collect();
        assert!(predict_many(&model, &inputs).iter().all(|p| (p - 3.0).abs() < 0.05));
    }

    #[test]
    fn learns_a_level_dependent_label() {
        let label = |f: &[f32]| 4.0 + 2.0 * f64::from(f[0]);
        let tr = windows(400, 3, label);
        let va = windows(100, 4, label);
        let (_, curve) = train(&tr, &va, &small()).unwrap();
        assert!(
            curve.best_val_mse < 0.2 * curve.initial_val_mse,
            "{curve:?}"
        );
    }

    #[test]
    fn same_seed_same_weights() {
        let tr = windows(120, 5, |f| f64::from(f[3]).abs());
        let va = windows(30, 6, |f| f64::from(f[3]).abs());
        let cfg = TrainConfig {
            max_epochs: 2,
            dropout: 0.2,
            ..small()
        };
        let (a, _) = train(&tr, &va, &cfg).unwrap();
        let (b, _) = train(&tr, &va, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn too_few_windows() {
        let tr = windows(10, 1, |_| 1.0);
        assert_eq!(
            train(&tr, &tr, &small()).unwrap_err(),
            TrainError::TooFewWindows { min: 100, got: 10 }
        );
    }

    #[test]
    fn divergence_aborts_with_diagnostics() {
        let tr = windows(200, 7, |f| 4.0 + 2.0 * f64::from(f[0]));
        let va = windows(50, 8, |f| 4.0 + 2.0 * f64::from(f[0]));
        let cfg = TrainConfig {
            learning_rate: 50.0,
            clip_norm: f64::INFINITY,
            max_epochs: 10,
            ..small()
        };
        match train(&tr, &va, &cfg) {
            Err(TrainError::Diverged { epoch, initial, .. }) => {
                assert!(epoch >= 3);
                assert!(initial > 0.0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
