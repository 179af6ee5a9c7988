//! Random-forest decision model.
//!
//! Trees are grown on bootstrap resamples until every leaf is pure (or no
//! split remains), choosing splits by Gini impurity over `mtry` randomly
//! drawn features. The forest probability of a class is the fraction of
//! trees voting for it.

mod tree;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledInstance;
use crate::{Error, Manoeuvre, Result};

pub use tree::TreeNode;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub mtry: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { n_trees: 100, mtry: None, bootstrap: true, seed: 0, min_samples_split: 2, max_depth: None }
    }
}

impl TrainConfig {
    pub fn resolved_mtry(&self, d: usize) -> usize {
        self.mtry.unwrap_or_else(|| libm::ceil(libm::sqrt(d as f64)) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub config: TrainConfig,
    /// Mean decrease in Gini impurity per feature, summing to 1.
    pub importances: Vec<f64>,
    /// Out-of-bag accuracy, when bootstrap is on and some instance was
    /// left out of at least one tree.
    pub oob_accuracy: Option<f64>,
    pub trees: Vec<TreeNode>,
}

/// Per-class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub lane_keep: f64,
    pub lane_change: f64,
}

impl ClassProbabilities {
    pub fn get(&self, class: Manoeuvre) -> f64 {
        match class {
            Manoeuvre::LaneKeep => self.lane_keep,
            Manoeuvre::LaneChange => self.lane_change,
        }
    }

    /// Most probable class; ties go to lane keeping.
    pub fn argmax(&self) -> Manoeuvre {
        if self.lane_change > self.lane_keep {
            Manoeuvre::LaneChange
        } else {
            Manoeuvre::LaneKeep
        }
    }
}

pub fn train(x: &[Vec<f64>], y: &[Manoeuvre], feature_names: Vec<String>, cfg: &TrainConfig) -> Result<Forest> {
    if x.len() != y.len() {
        return Err(Error::Shape { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateForest(format!("need at least 2 instances, got {}", x.len())));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::Shape { expected: d, got: bad.len() });
    }
    if feature_names.len() != d {
        return Err(Error::Shape { expected: d, got: feature_names.len() });
    }
    if !(y.contains(&Manoeuvre::LaneKeep) && y.contains(&Manoeuvre::LaneChange)) {
        return Err(Error::DegenerateForest("both classes must be present".into()));
    }
    if cfg.n_trees == 0 {
        return Err(Error::Parameter("n_trees must be at least 1".into()));
    }
    let mtry = cfg.resolved_mtry(d);
    if mtry == 0 || mtry > d {
        return Err(Error::Parameter(format!("mtry must lie in 1..={d}, got {mtry}")));
    }

    let n = x.len();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut importance = vec![0.0; d];
    let mut oob_votes = vec![[0usize; 2]; n];
    for t in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
        let mut idx: Vec<usize> = if cfg.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
        let mut in_bag = vec![false; n];
        for &i in &idx {
            in_bag[i] = true;
        }
        let mut builder = tree::TreeBuilder {
            x,
            y,
            mtry,
            min_samples_split: cfg.min_samples_split,
            max_depth: cfg.max_depth,
            rng: &mut rng,
            importance: vec![0.0; d],
        };
        let root = builder.grow(&mut idx, 0);
        for (acc, v) in importance.iter_mut().zip(&builder.importance) {
            *acc += v / n as f64;
        }
        if cfg.bootstrap {
            for i in (0..n).filter(|&i| !in_bag[i]) {
                oob_votes[i][root.predict(&x[i]).index()] += 1;
            }
        }
        trees.push(root);
    }

    let total: f64 = importance.iter().sum();
    let importances = if total > 0.0 { importance.iter().map(|v| v / total).collect() } else { vec![1.0 / d as f64; d] };

    let oob_accuracy = cfg.bootstrap.then(|| {
        let scored: Vec<(usize, [usize; 2])> = oob_votes.iter().copied().enumerate().filter(|(_, v)| v[0] + v[1] > 0).collect();
        if scored.is_empty() {
            return None;
        }
        let correct = scored.iter().filter(|(i, v)| tree::majority(v) == y[*i]).count();
        Some(correct as f64 / scored.len() as f64)
    });

    Ok(Forest {
        format_version: FORMAT_VERSION,
        feature_names,
        config: cfg.clone(),
        importances,
        oob_accuracy: oob_accuracy.flatten(),
        trees,
    })
}

pub fn train_instances(instances: &[LabeledInstance], feature_names: Vec<String>, cfg: &TrainConfig) -> Result<Forest> {
    let x: Vec<Vec<f64>> = instances.iter().map(|i| i.features.0.clone()).collect();
    let y: Vec<Manoeuvre> = instances.iter().map(|i| i.label).collect();
    train(&x, &y, feature_names, cfg)
}

impl Forest {
    pub fn dimension(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_dimension(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::Shape { expected: self.dimension(), got: x.len() });
        }
        Ok(())
    }

    /// Number of trees voting for a lane change.
    pub fn votes(&self, x: &[f64]) -> Result<usize> {
        self.check_dimension(x)?;
        Ok(self.trees.iter().filter(|t| t.predict(x) == Manoeuvre::LaneChange).count())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ClassProbabilities> {
        let k = self.votes(x)?;
        let t = self.trees.len();
        Ok(ClassProbabilities { lane_keep: (t - k) as f64 / t as f64, lane_change: k as f64 / t as f64 })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Manoeuvre> {
        Ok(self.predict_proba(x)?.argmax())
    }

    /// Importances paired with names, largest first; ties keep feature
    /// order.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(usize, f64)> = self.importances.iter().copied().enumerate().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.into_iter().map(|(i, v)| (self.feature_names[i].clone(), v)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Parameter(format!("unsupported forest format version {}", self.format_version)));
        }
        if self.trees.is_empty() {
            return Err(Error::Parameter("forest has no trees".into()));
        }
        if self.importances.len() != self.feature_names.len() {
            return Err(Error::Shape { expected: self.feature_names.len(), got: self.importances.len() });
        }
        let mut feats = Vec::new();
        for t in &self.trees {
            t.split_features(&mut feats);
        }
        if let Some(&f) = feats.iter().find(|&&f| f >= self.dimension()) {
            return Err(Error::Shape { expected: self.dimension(), got: f + 1 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Rows are true classes, columns predicted, both ordered
    /// `[lane_keep, lane_change]`.
    pub confusion: [[usize; 2]; 2],
    /// Per class; 0 when the class was never predicted.
    pub precision: [f64; 2],
    /// Per class; 0 when the class never occurs.
    pub recall: [f64; 2],
}

pub fn evaluate<'a, I>(forest: &Forest, test: I) -> Result<Metrics>
where
    I: IntoIterator<Item = (&'a [f64], Manoeuvre)>,
{
    let mut confusion = [[0usize; 2]; 2];
    for (x, truth) in test {
        let pred = forest.predict(x)?;
        confusion[truth.index()][pred.index()] += 1;
    }
    let n: usize = confusion.iter().flatten().sum();
    if n == 0 {
        return Err(Error::Parameter("empty test set".into()));
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut precision = [0.0; 2];
    let mut recall = [0.0; 2];
    for c in 0..2 {
        precision[c] = ratio(confusion[c][c], confusion[0][c] + confusion[1][c]);
        recall[c] = ratio(confusion[c][c], confusion[c][0] + confusion[c][1]);
    }
    Ok(Metrics { n, accuracy: ratio(confusion[0][0] + confusion[1][1], n), confusion, precision, recall })
}

pub fn evaluate_instances(forest: &Forest, test: &[LabeledInstance]) -> Result<Metrics> {
    evaluate(forest, test.iter().map(|i| (i.features.values(), i.label)))
}
