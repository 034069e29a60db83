use crate::model::CHANNELS;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Scores closer than this are treated as tied.
pub const TIE_EPS: f64 = 1e-12;

pub type Features = [f64; CHANNELS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class-weighted sample mass reaching the leaf.
    Leaf { normal: f64, leak: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted mean Gini of the two children.
    pub impurity: f64,
}

pub fn gini(normal: f64, leak: f64) -> f64 {
    let t = normal + leak;
    if t <= 0.0 {
        return 0.0;
    }
    let (a, b) = (normal / t, leak / t);
    1.0 - a * a - b * b
}

/// Labeled samples plus per-class weights `[normal, leak]`.
#[derive(Debug, Clone, Copy)]
pub struct Data<'a> {
    pub x: &'a [Features],
    pub y: &'a [bool],
    pub class_weights: [f64; 2],
}

impl Data<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.class_weights[usize::from(self.y[i])]
    }

    fn mass(&self, idx: &[usize]) -> [f64; 2] {
        let mut m = [0.0; 2];
        for &i in idx {
            m[usize::from(self.y[i])] += self.weight(i);
        }
        m
    }
}

/// Lowest weighted-Gini midpoint split over `features`; ties go to the lower
/// feature index, then the lower threshold.
pub fn best_split(data: &Data, idx: &[usize], features: &[usize]) -> Option<Split> {
    let total = data.mass(idx);
    let w = total[0] + total[1];
    let mut feats = features.to_vec();
    feats.sort_unstable();
    let mut best: Option<Split> = None;
    let mut order = idx.to_vec();
    for &f in &feats {
        order.sort_by(|&a, &b| data.x[a][f].total_cmp(&data.x[b][f]));
        let mut left = [0.0; 2];
        for k in 0..order.len().saturating_sub(1) {
            let i = order[k];
            left[usize::from(data.y[i])] += data.weight(i);
            let (v, next) = (data.x[i][f], data.x[order[k + 1]][f]);
            if v >= next {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let wl = left[0] + left[1];
            let wr = right[0] + right[1];
            let score = (wl * gini(left[0], left[1]) + wr * gini(right[0], right[1])) / w;
            if best.is_none_or(|b| score < b.impurity - TIE_EPS) {
                best = Some(Split {
                    feature: f,
                    threshold: 0.5 * (v + next),
                    impurity: score,
                });
            }
        }
    }
    best
}

pub struct Grower<'a, R> {
    pub data: Data<'a>,
    pub allowed: &'a [usize],
    pub mtry: usize,
    pub max_depth: usize,
    pub rng: R,
    pub nodes: Vec<Node>,
    /// Weighted impurity decrease per channel.
    pub importance: [f64; CHANNELS],
}

impl<R: Rng> Grower<'_, R> {
    pub fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let at = self.nodes.len();
        let mass = self.data.mass(idx);
        self.nodes.push(Node::Leaf {
            normal: mass[0],
            leak: mass[1],
        });
        let node_gini = gini(mass[0], mass[1]);
        if depth >= self.max_depth || node_gini <= 0.0 || idx.len() < 2 {
            return at;
        }
        let feats: Vec<usize> = self
            .allowed
            .choose_multiple(&mut self.rng, self.mtry)
            .copied()
            .collect();
        let Some(split) = best_split(&self.data, idx, &feats) else {
            return at;
        };
        if split.impurity >= node_gini - TIE_EPS {
            return at;
        }
        let w = mass[0] + mass[1];
        self.importance[split.feature] += w * (node_gini - split.impurity);
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.data.x[i][split.feature] <= split.threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

impl Tree {
    pub fn leaf(&self, x: &Features) -> (f64, f64) {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
                Node::Leaf { normal, leak } => return (normal, leak),
            }
        }
    }

    /// Class-weighted majority at the reached leaf.
    pub fn predict(&self, x: &Features) -> bool {
        let (normal, leak) = self.leaf(x);
        leak > normal
    }

    /// Longest root-to-leaf path in edges.
    pub fn depth(&self) -> usize {
        let mut deepest = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((at, d)) = stack.pop() {
            match self.nodes[at] {
                Node::Split { left, right, .. } => {
                    stack.push((left, d + 1));
                    stack.push((right, d + 1));
                }
                Node::Leaf { .. } => deepest = deepest.max(d),
            }
        }
        deepest
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search: every feature, every midpoint, impurity computed
    /// from scratch by partitioning the samples.
    fn brute_force(data: &Data, idx: &[usize], features: &[usize]) -> Option<Split> {
        let mut best: Option<Split> = None;
        let w: f64 = idx.iter().map(|&i| data.class_weights[usize::from(data.y[i])]).sum();
        for f in 0..CHANNELS {
            if !features.contains(&f) {
                continue;
            }
            let mut vals: Vec<f64> = idx.iter().map(|&i| data.x[i][f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for pair in vals.windows(2) {
                let t = 0.5 * (pair[0] + pair[1]);
                let side = |go_left: bool| {
                    let mut m = [0.0; 2];
                    for &i in idx {
                        if (data.x[i][f] <= t) == go_left {
                            m[usize::from(data.y[i])] += data.class_weights[usize::from(data.y[i])];
                        }
                    }
                    m
                };
                let (l, r) = (side(true), side(false));
                let score = ((l[0] + l[1]) * gini(l[0], l[1]) + (r[0] + r[1]) * gini(r[0], r[1])) / w;
                if best.is_none_or(|b| score < b.impurity - TIE_EPS) {
                    best = Some(Split {
                        feature: f,
                        threshold: t,
                        impurity: score,
                    });
                }
            }
        }
        best
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(1.0, 0.0), 0.0);
        assert_eq!(gini(1.0, 1.0), 0.5);
        assert_eq!(gini(0.0, 0.0), 0.0);
    }

    #[test]
    fn separable_one_feature_needs_one_split() {
        let x: Vec<Features> = (0..10).map(|i| [f64::from(i), 0.0, 0.0, 0.0]).collect();
        let y: Vec<bool> = (0..10).map(|i| i >= 6).collect();
        let data = Data {
            x: &x,
            y: &y,
            class_weights: [1.0, 1.0],
        };
        let idx: Vec<usize> = (0..10).collect();
        let mut g = Grower {
            data,
            allowed: &[0],
            mtry: 1,
            max_depth: 1,
            rng: ChaCha8Rng::seed_from_u64(0),
            nodes: vec![],
            importance: [0.0; CHANNELS],
        };
        g.grow(&idx, 0);
        let tree = Tree { nodes: g.nodes };
        assert_eq!(tree.depth(), 1);
        assert!(x.iter().zip(&y).all(|(xi, &yi)| tree.predict(xi) == yi));
        match tree.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 5.5),
            _ => panic!("root must split"),
        }
    }

    #[test]
    fn ties_prefer_lower_feature_then_threshold() {
        // features 0 and 1 are identical copies
        let x: Vec<Features> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| [v, v, 0.0, 0.0]).collect();
        let y = vec![false, true, false, true];
        let data = Data {
            x: &x,
            y: &y,
            class_weights: [1.0, 1.0],
        };
        let s = best_split(&data, &[0, 1, 2, 3], &[1, 0]).unwrap();
        assert_eq!(s.feature, 0);
        // thresholds 1.5 and 3.5 tie at 1/3; the lower wins
        assert_eq!(s.threshold, 1.5);
    }

    #[test]
    fn constant_feature_has_no_split() {
        let x = vec![[1.0; CHANNELS]; 4];
        let y = vec![false, true, false, true];
        let data = Data {
            x: &x,
            y: &y,
            class_weights: [1.0, 1.0],
        };
        assert_eq!(best_split(&data, &[0, 1, 2, 3], &[0, 1, 2, 3]), None);
    }

    fn instance() -> impl Strategy<Value = (Vec<Features>, Vec<bool>, [f64; 2], Vec<usize>)> {
        (2usize..=20).prop_flat_map(|n| {
            (
                prop::collection::vec((0i32..6, 0i32..6), n),
                prop::collection::vec(any::<bool>(), n),
                (0.2f64..5.0, 0.2f64..5.0),
                prop::collection::vec(0..n, 1..=n),
            )
                .prop_map(|(xs, y, (w0, w1), idx)| {
                    let x = xs
                        .into_iter()
                        .map(|(a, b)| [f64::from(a), f64::from(b), 0.0, 0.0])
                        .collect();
                    (x, y, [w0, w1], idx)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn split_matches_exhaustive_search((x, y, cw, idx) in instance()) {
            let data = Data { x: &x, y: &y, class_weights: cw };
            let fast = best_split(&data, &idx, &[0, 1]);
            let slow = brute_force(&data, &idx, &[0, 1]);
            match (fast, slow) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    prop_assert_eq!(a.feature, b.feature);
                    prop_assert_eq!(a.threshold, b.threshold);
                    prop_assert!((a.impurity - b.impurity).abs() < 1e-9);
                }
                other => prop_assert!(false, "mismatch {:?}", other),
            }
        }

        #[test]
        fn depth_cap_respected(
            pts in prop::collection::vec(((-5.0f64..5.0), (-5.0f64..5.0), any::<bool>()), 4..120),
            max_depth in 1usize..6,
        ) {
            let x: Vec<Features> = pts.iter().map(|&(a, b, _)| [a, b, 0.0, 0.0]).collect();
            let y: Vec<bool> = pts.iter().map(|p| p.2).collect();
            let idx: Vec<usize> = (0..x.len()).collect();
            let mut g = Grower {
                data: Data { x: &x, y: &y, class_weights: [1.0, 1.0] },
                allowed: &[0, 1],
                mtry: 2,
                max_depth,
                rng: ChaCha8Rng::seed_from_u64(1),
                nodes: vec![],
                importance: [0.0; CHANNELS],
            };
            g.grow(&idx, 0);
            let depth = Tree { nodes: g.nodes }.depth();
            prop_assert!(depth <= max_depth);
        }
    }
}
