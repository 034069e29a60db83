use super::{check, fit, DetectError, Features, ForestConfig};
use crate::analytics::Confusion;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<Confusion>,
    /// Sum over folds.
    pub pooled: Confusion,
}

impl CvReport {
    pub fn f1(&self) -> f64 {
        self.pooled.f1()
    }
}

/// Fold id per sample; each class is shuffled and dealt round-robin so every
/// fold holds the same class proportions to within one sample.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = j % k;
        }
    }
    fold
}

pub fn cross_validate(
    x: &[Features],
    y: &[bool],
    cfg: &ForestConfig,
    k: usize,
) -> Result<CvReport, DetectError> {
    let counts = check(x, y)?;
    if counts.iter().any(|&c| c < k) {
        return Err(DetectError::TooFewForFolds { folds: k });
    }
    let fold = stratified_folds(y, k, cfg.seed);
    let mut report = CvReport {
        folds: Vec::with_capacity(k),
        pooled: Confusion::default(),
    };
    for f in 0..k {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| fold[i] != f);
        let tx: Vec<Features> = train.iter().map(|&i| x[i]).collect();
        let ty: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let model = fit(&tx, &ty, cfg)?;
        let qx: Vec<Features> = test.iter().map(|&i| x[i]).collect();
        let pred = model.predict_many(&qx);
        let c = Confusion::from_pairs(test.iter().map(|&i| y[i]).zip(pred));
        report.pooled += c;
        report.folds.push(c);
    }
    Ok(report)
}

/// Leak-class CV F1 of a forest restricted to `features`.
pub fn ablate(
    x: &[Features],
    y: &[bool],
    features: &[usize],
    cfg: &ForestConfig,
    k: usize,
) -> Result<f64, DetectError> {
    let cfg = ForestConfig {
        features: features.to_vec(),
        ..cfg.clone()
    };
    Ok(cross_validate(x, y, &cfg, k)?.f1())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CHANNELS;
    use rand::Rng;

    #[test]
    fn folds_are_stratified() {
        let y: Vec<bool> = (0..1000).map(|i| i % 20 == 0).collect();
        let fold = stratified_folds(&y, 5, 7);
        for f in 0..5 {
            let members: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == f).collect();
            assert_eq!(members.len(), 200);
            assert_eq!(members.iter().filter(|&&i| y[i]).count(), 10);
        }
    }

    #[test]
    fn shuffled_labels_give_low_f1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Features> = (0..1000)
            .map(|_| std::array::from_fn::<f64, CHANNELS, _>(|_| rng.random_range(0.0..1.0)))
            .collect();
        let mut y: Vec<bool> = (0..1000).map(|i| i % 20 == 0).collect();
        y.shuffle(&mut rng);
        let cfg = ForestConfig {
            n_trees: 20,
            ..ForestConfig::default()
        };
        let r = cross_validate(&x, &y, &cfg, 5).unwrap();
        assert_eq!(r.pooled.total(), 1000);
        assert!(r.f1() < 0.3, "{}", r.f1());
    }

    #[test]
    fn too_few_leaks_for_folds() {
        let x = vec![[0.0; CHANNELS]; 10];
        let y: Vec<bool> = (0..10).map(|i| i < 3).collect();
        assert!(matches!(
            cross_validate(&x, &y, &ForestConfig::default(), 5),
            Err(DetectError::TooFewForFolds { folds: 5 })
        ));
    }
}
