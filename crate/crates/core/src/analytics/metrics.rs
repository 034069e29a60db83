use serde::{Deserialize, Serialize};
use std::ops::AddAssign;

/// Binary confusion counts with leak as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion::default();
        for (truth, pred) in pairs {
            c.record(truth, pred);
        }
        c
    }

    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR/(P+R)`, zero when both are zero.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn scores(&self) -> Scores {
        Scores {
            accuracy: self.accuracy(),
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

impl AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quoted_confusion_counts() {
        let c = Confusion {
            tp: 486,
            fp: 23,
            fn_: 14,
            tn: 9557,
        };
        assert!((c.recall() - 0.972).abs() < 1e-12);
        assert!((c.precision() - 486.0 / 509.0).abs() < 1e-12);
        assert!((c.precision() - 0.955).abs() < 5e-4);
    }

    #[test]
    fn empty_is_zero() {
        let c = Confusion::default();
        assert_eq!(c.f1(), 0.0);
        assert_eq!(c.accuracy(), 0.0);
    }

    #[test]
    fn serde_uses_fn_key() {
        let c = Confusion::from_pairs([(true, false)]);
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(j, r#"{"tp":0,"fp":0,"fn":1,"tn":0}"#);
    }

    proptest! {
        #[test]
        fn identities_hold(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
            let c = Confusion::from_pairs(pairs.iter().copied());
            prop_assert_eq!(c.total() as usize, pairs.len());
            let s = c.scores();
            let (p, r) = (s.precision, s.recall);
            if p + r > 0.0 {
                prop_assert_eq!(s.f1, 2.0 * p * r / (p + r));
            }
            for v in [s.accuracy, s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
