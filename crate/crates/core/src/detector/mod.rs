//! Random forest for point-in-time leak classification from one reading.

mod cv;
mod tree;

pub use cv::{ablate, cross_validate, stratified_folds, CvReport};
pub use tree::{best_split, gini, Data, Features, Node, Split, Tree, TIE_EPS};

use crate::analytics::{Confusion, Scores};
use crate::model::{
    DetectionResult, SensorReading, CHANNELS, DEFAULT_DECISION_THRESHOLD,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;
use tree::Grower;

pub const MODEL_FORMAT: &str = "coolguard-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("training data has only one class ({0})")]
    SingleClass(&'static str),
    #[error("{x} feature rows but {y} labels")]
    Length { x: usize, y: usize },
    #[error("non-finite feature in row {0}")]
    NonFinite(usize),
    #[error("feature subset is empty")]
    NoFeatures,
    #[error("feature index {0} out of range")]
    BadFeature(usize),
    #[error("need at least {folds} samples of each class for {folds}-fold CV")]
    TooFewForFolds { folds: usize },
    #[error("model io: {0}")]
    Io(#[from] io::Error),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Channel indices the forest may split on.
    pub features: Vec<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 15,
            features: (0..CHANNELS).collect(),
            seed: 42,
        }
    }
}

impl ForestConfig {
    /// Channels tried per split: `ceil(sqrt(k))` of the `k` allowed.
    pub fn mtry(&self) -> usize {
        (self.features.len() as f64).sqrt().ceil() as usize
    }

    fn validate(&self) -> Result<(), DetectError> {
        if self.features.is_empty() {
            return Err(DetectError::NoFeatures);
        }
        match self.features.iter().find(|&&f| f >= CHANNELS) {
            Some(&f) => Err(DetectError::BadFeature(f)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    /// `[normal, leak]`, `n / (2 n_c)`.
    pub class_weights: [f64; 2],
    pub trees: Vec<Tree>,
    /// Normalized mean decrease in weighted Gini per channel.
    pub importances: [f64; CHANNELS],
    pub train_scores: Scores,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: ForestModel,
}

fn check(x: &[Features], y: &[bool]) -> Result<[usize; 2], DetectError> {
    if x.len() != y.len() {
        return Err(DetectError::Length {
            x: x.len(),
            y: y.len(),
        });
    }
    if let Some(i) = x.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(DetectError::NonFinite(i));
    }
    let leaks = y.iter().filter(|&&l| l).count();
    match (leaks, y.len() - leaks) {
        (0, _) => Err(DetectError::SingleClass("no leak samples")),
        (_, 0) => Err(DetectError::SingleClass("no normal samples")),
        (l, n) => Ok([n, l]),
    }
}

/// Feature rows and labels from minute readings.
pub fn training_set(readings: &[SensorReading], is_leaking: &[bool]) -> (Vec<Features>, Vec<bool>) {
    (readings.iter().map(SensorReading::channels).collect(), is_leaking.to_vec())
}

fn bootstrap(rng: &mut ChaCha8Rng, y: &[bool], leaks: &[usize]) -> Vec<usize> {
    let n = y.len();
    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    if !idx.iter().any(|&i| y[i]) {
        let slot = rng.random_range(0..n);
        idx[slot] = *leaks.choose(rng).expect("both classes checked");
    }
    idx
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Fits the forest. Trees are grown in parallel from per-tree PRNG streams,
/// so the result does not depend on thread count.
pub fn fit(x: &[Features], y: &[bool], cfg: &ForestConfig) -> Result<ForestModel, DetectError> {
    cfg.validate()?;
    let counts = check(x, y)?;
    let n = y.len() as f64;
    let class_weights = counts.map(|c| n / (2.0 * c as f64));
    let leaks: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let data = Data {
        x,
        y,
        class_weights,
    };
    let grown: Vec<(Tree, [f64; CHANNELS])> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(cfg.seed, t);
            let idx = bootstrap(&mut rng, y, &leaks);
            let mut g = Grower {
                data,
                allowed: &cfg.features,
                mtry: cfg.mtry(),
                max_depth: cfg.max_depth,
                rng,
                nodes: Vec::new(),
                importance: [0.0; CHANNELS],
            };
            g.grow(&idx, 0);
            (Tree { nodes: g.nodes }, g.importance)
        })
        .collect();

    let mut importances = [0.0; CHANNELS];
    for (_, imp) in &grown {
        let s: f64 = imp.iter().sum();
        if s > 0.0 {
            for (acc, v) in importances.iter_mut().zip(imp) {
                *acc += v / s;
            }
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    let mut model = ForestModel {
        config: cfg.clone(),
        class_weights,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        importances,
        train_scores: Confusion::default().scores(),
    };
    model.train_scores =
        Confusion::from_pairs(x.iter().zip(y).map(|(r, &l)| (l, model.classify(r)))).scores();
    Ok(model)
}

impl ForestModel {
    /// Fraction of trees voting leak.
    pub fn vote(&self, x: &Features) -> Result<f64, DetectError> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DetectError::NonFinite(0));
        }
        Ok(self.vote_unchecked(x))
    }

    fn vote_unchecked(&self, x: &Features) -> f64 {
        let leak = self.trees.iter().filter(|t| t.predict(x)).count();
        leak as f64 / self.trees.len() as f64
    }

    fn classify(&self, x: &Features) -> bool {
        self.vote_unchecked(x) >= DEFAULT_DECISION_THRESHOLD
    }

    pub fn predict_many(&self, x: &[Features]) -> Vec<bool> {
        x.par_iter().map(|r| self.classify(r)).collect()
    }

    pub fn detect(&self, reading: &SensorReading) -> Result<DetectionResult, DetectError> {
        let score = self.vote(&reading.channels())?;
        Ok(DetectionResult {
            issued_at: reading.timestamp,
            rack_id: reading.rack_id.clone(),
            is_leak: score >= DEFAULT_DECISION_THRESHOLD,
            vote_score: score,
        })
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String, DetectError> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<ForestModel, DetectError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(DetectError::Format(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        let m = file.model;
        if m.trees.is_empty() {
            return Err(DetectError::Format("no trees".into()));
        }
        for (t, tree) in m.trees.iter().enumerate() {
            let n = tree.nodes.len();
            let bad = tree.nodes.iter().enumerate().any(|(i, node)| match *node {
                Node::Split {
                    feature,
                    left,
                    right,
                    ..
                } => feature >= CHANNELS || left <= i || right <= i || left >= n || right >= n,
                Node::Leaf { .. } => false,
            });
            if n == 0 || bad {
                return Err(DetectError::Format(format!("tree {t} is malformed")));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DetectError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ForestModel, DetectError> {
        ForestModel::from_json(&fs::read_to_string(path)?)
    }
}
