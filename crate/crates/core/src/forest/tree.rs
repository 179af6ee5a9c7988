use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Manoeuvre;

/// Binary decision tree. Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        class: Manoeuvre,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> Manoeuvre {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { class } => return *class,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Every split's feature index, pre-order.
    pub fn split_features(&self, out: &mut Vec<usize>) {
        if let TreeNode::Split { feature, left, right, .. } = self {
            out.push(*feature);
            left.split_features(out);
            right.split_features(out);
        }
    }
}

/// Class counts `[lane_keep, lane_change]`.
type Counts = [usize; 2];

/// Σ c² / n, the quantity maximised by the best Gini split (summed over
/// both children).
pub(crate) fn purity(c: &Counts) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    (c[0] * c[0]) as f64 / n + (c[1] * c[1]) as f64 / n
}

pub(crate) fn majority(c: &Counts) -> Manoeuvre {
    if c[1] > c[0] {
        Manoeuvre::LaneChange
    } else {
        Manoeuvre::LaneKeep
    }
}

/// Exact split score `S_l / n_l + S_r / n_r` with `S = Σ c²`, kept as a
/// fraction so equal scores compare equal.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn of(left: &Counts, right: &Counts) -> Score {
        let sq = |c: &Counts| (c[0] * c[0] + c[1] * c[1]) as u128;
        let (nl, nr) = ((left[0] + left[1]) as u128, (right[0] + right[1]) as u128);
        Score { num: sq(left) * nr + sq(right) * nl, den: nl * nr }
    }

    fn cmp(&self, other: &Score) -> core::cmp::Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }

    fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: Score,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    /// Higher score wins; ties go to the lower feature index, then the
    /// lower threshold.
    fn beats(&self, other: &Option<Candidate>) -> bool {
        use core::cmp::Ordering::*;
        match other {
            None => true,
            Some(o) => match self.score.cmp(&o.score) {
                Greater => true,
                Less => false,
                Equal => self.feature < o.feature || (self.feature == o.feature && self.threshold < o.threshold),
            },
        }
    }
}

pub(crate) struct TreeBuilder<'a, R: Rng> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [Manoeuvre],
    pub mtry: usize,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    pub rng: &'a mut R,
    /// Unnormalised impurity decrease per feature.
    pub importance: Vec<f64>,
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn counts(&self, idx: &[usize]) -> Counts {
        let mut c = [0usize; 2];
        for &i in idx {
            c[self.y[i].index()] += 1;
        }
        c
    }

    pub fn grow(&mut self, idx: &mut [usize], depth: usize) -> TreeNode {
        let counts = self.counts(idx);
        let pure = counts[0] == 0 || counts[1] == 0;
        let depth_capped = self.max_depth.is_some_and(|d| depth >= d);
        if pure || idx.len() < self.min_samples_split.max(2) || depth_capped {
            return TreeNode::Leaf { class: majority(&counts) };
        }
        let Some(best) = self.best_split(idx) else {
            return TreeNode::Leaf { class: majority(&counts) };
        };
        self.importance[best.feature] += best.score.value() - purity(&counts);

        let f = best.feature;
        let x = self.x;
        idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let split_at = idx.partition_point(|&i| x[i][f] <= best.threshold);
        let (l, r) = idx.split_at_mut(split_at);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        TreeNode::Split { feature: f, threshold: best.threshold, left: Box::new(left), right: Box::new(right) }
    }

    /// Best Gini split over up to `mtry` non-constant features, drawn in a
    /// random order. Constant features do not use up the budget.
    fn best_split(&mut self, idx: &[usize]) -> Option<Candidate> {
        let d = self.x[idx[0]].len();
        let mut order: Vec<usize> = (0..d).collect();
        if self.mtry < d {
            order.shuffle(self.rng);
        }
        let mut best: Option<Candidate> = None;
        let mut evaluated = 0;
        let mut pairs: Vec<(f64, Manoeuvre)> = Vec::with_capacity(idx.len());
        for f in order {
            if evaluated == self.mtry {
                break;
            }
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[pairs.len() - 1].0 {
                continue;
            }
            evaluated += 1;
            let total = self.counts(idx);
            let mut left = [0usize; 2];
            for p in 0..pairs.len() - 1 {
                left[pairs[p].1.index()] += 1;
                let (lo, hi) = (pairs[p].0, pairs[p + 1].0);
                if lo == hi {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let cand = Candidate { score: Score::of(&left, &right), feature: f, threshold: midpoint(lo, hi) };
                if cand.beats(&best) {
                    best = Some(cand);
                }
            }
        }
        best
    }
}

/// Midpoint of two consecutive distinct values, falling back to `lo` when
/// rounding would push the midpoint onto `hi`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + 0.5 * (hi - lo);
    if m < hi {
        m
    } else {
        lo
    }
}
