//! Random forest classifier for picking trustworthy training pairs.
//!
//! Trees are binary CART trees grown on weighted Gini impurity. Each tree
//! sees a bootstrap resample drawn from its own ChaCha stream (seed, tree
//! index), so trees can be fitted in parallel and still come out the same.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::metrics::{binary_metrics, roc_auc, Confusion, MetricError, ThresholdMetrics};

pub const FOREST_FORMAT: &str = "thairom-forest";
pub const FOREST_VERSION: u64 = 1;

/// Thresholds reported by default, matching the usual selection sweep.
pub const DEFAULT_THRESHOLDS: [f64; 7] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];

#[derive(Debug, thiserror::Error)]
pub enum SelectorError {
    #[error("no training rows")]
    Empty,
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{what}: {left} rows vs {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error("invalid sample weight {0}")]
    Weight(f64),
    #[error("cannot make {k} folds from {n} rows")]
    Folds { k: usize, n: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("forest document: {0}")]
    Format(String),
}

pub type Result<T, E = SelectorError> = std::result::Result<T, E>;

/// How many features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 500,
            min_samples_split: 2,
            min_samples_leaf: 4,
            max_depth: 10,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SelectorError::Config(m.into()));
        if self.n_estimators == 0 {
            return bad("n_estimators must be at least 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be at least 2");
        }
        if matches!(self.max_features, MaxFeatures::Fixed(0)) {
            return bad("max_features must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positive_fraction: f64,
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(SelectorError::Dimension {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { positive_fraction, .. } => return Ok(*positive_fraction),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf {
                positive_fraction,
                samples,
            } => Some((*positive_fraction, *samples)),
            _ => None,
        })
    }

    fn to_json(&self) -> Value {
        let mut feature = Vec::new();
        let mut threshold = Vec::new();
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut value = Vec::new();
        let mut samples = Vec::new();
        for n in &self.nodes {
            match n {
                Node::Split {
                    feature: f,
                    threshold: t,
                    left: l,
                    right: r,
                } => {
                    feature.push(*f as i64);
                    threshold.push(*t);
                    left.push(*l as i64);
                    right.push(*r as i64);
                    value.push(0.0);
                    samples.push(0);
                }
                Node::Leaf {
                    positive_fraction,
                    samples: s,
                } => {
                    feature.push(-1);
                    threshold.push(0.0);
                    left.push(-1);
                    right.push(-1);
                    value.push(*positive_fraction);
                    samples.push(*s);
                }
            }
        }
        json!({
            "feature": feature,
            "threshold": threshold,
            "left": left,
            "right": right,
            "value": value,
            "samples": samples,
        })
    }

    fn from_json(v: &Value, n_features: usize) -> Result<Self> {
        fn column<T: serde::de::DeserializeOwned>(v: &Value, key: &str) -> Result<Vec<T>> {
            serde_json::from_value(v.get(key).cloned().unwrap_or(Value::Null))
                .map_err(|e| SelectorError::Format(format!("tree field {key:?}: {e}")))
        }
        let feature: Vec<i64> = column(v, "feature")?;
        let threshold: Vec<f64> = column(v, "threshold")?;
        let left: Vec<i64> = column(v, "left")?;
        let right: Vec<i64> = column(v, "right")?;
        let value: Vec<f64> = column(v, "value")?;
        let samples: Vec<usize> = column(v, "samples")?;
        let n = feature.len();
        if [threshold.len(), left.len(), right.len(), value.len(), samples.len()]
            .iter()
            .any(|&l| l != n)
            || n == 0
        {
            return Err(SelectorError::Format("tree arrays differ in length".into()));
        }
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            if feature[i] < 0 {
                nodes.push(Node::Leaf {
                    positive_fraction: value[i],
                    samples: samples[i],
                });
            } else {
                let child = |c: i64| {
                    if c as usize > i && (c as usize) < n {
                        Ok(c as usize)
                    } else {
                        Err(SelectorError::Format(format!("node {i} has bad child {c}")))
                    }
                };
                if feature[i] as usize >= n_features {
                    return Err(SelectorError::Format(format!("node {i} splits on missing feature")));
                }
                nodes.push(Node::Split {
                    feature: feature[i] as usize,
                    threshold: threshold[i],
                    left: child(left[i])?,
                    right: child(right[i])?,
                });
            }
        }
        Ok(DecisionTree { nodes, n_features })
    }
}

fn gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct Grower<'a, R> {
    x: &'a [R],
    y: &'a [bool],
    w: &'a [f64],
    config: &'a ForestConfig,
    n_features: usize,
    k_features: usize,
    nodes: Vec<Node>,
    importances: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
    n_left: usize,
}

impl<R: AsRef<[f64]>> Grower<'_, R> {
    fn val(&self, i: usize, f: usize) -> f64 {
        self.x[i].as_ref()[f]
    }

    fn leaf(&mut self, idx: &[usize], pos: f64, total: f64) -> usize {
        self.nodes.push(Node::Leaf {
            positive_fraction: if total > 0.0 { pos / total } else { 0.0 },
            samples: idx.len(),
        });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &mut [usize], features: &[usize], total_pos: f64, total: f64) -> Option<BestSplit> {
        let msl = self.config.min_samples_leaf;
        let n = idx.len();
        let mut best: Option<BestSplit> = None;
        for &f in features {
            idx.sort_by(|&a, &b| self.val(a, f).total_cmp(&self.val(b, f)).then(a.cmp(&b)));
            let (mut lp, mut lw) = (0.0, 0.0);
            for k in 0..n - 1 {
                let i = idx[k];
                lw += self.w[i];
                if self.y[i] {
                    lp += self.w[i];
                }
                let (a, b) = (self.val(i, f), self.val(idx[k + 1], f));
                if a == b || k + 1 < msl || n - k - 1 < msl {
                    continue;
                }
                let (rp, rw) = (total_pos - lp, total - lw);
                let impurity = (lw * gini(lp, lw) + rw * gini(rp, rw)) / total;
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                if best.as_ref().is_none_or(|s| impurity < s.impurity - 1e-12) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        impurity,
                        n_left: k + 1,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let (mut pos, mut total) = (0.0, 0.0);
        for &i in idx.iter() {
            total += self.w[i];
            if self.y[i] {
                pos += self.w[i];
            }
        }
        let n = idx.len();
        let c = self.config;
        if depth >= c.max_depth || n < c.min_samples_split || n < 2 * c.min_samples_leaf || pos <= 0.0 || pos >= total {
            return self.leaf(idx, pos, total);
        }
        let mut features = index::sample(rng, self.n_features, self.k_features).into_vec();
        features.sort_unstable();
        let Some(split) = self.best_split(idx, &features, pos, total) else {
            return self.leaf(idx, pos, total);
        };
        let decrease = total * gini(pos, total) - total * split.impurity;
        self.importances[split.feature] += decrease.max(0.0);
        let f = split.feature;
        idx.sort_by(|&a, &b| self.val(a, f).total_cmp(&self.val(b, f)).then(a.cmp(&b)));
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf {
            positive_fraction: 0.0,
            samples: 0,
        });
        let (l_idx, r_idx) = idx.split_at_mut(split.n_left);
        let left = self.grow(l_idx, depth + 1, rng);
        let right = self.grow(r_idx, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature: f,
            threshold: split.threshold,
            left,
            right,
        };
        me
    }
}

fn check_inputs<R: AsRef<[f64]>>(x: &[R], y: &[bool], weights: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(SelectorError::Empty);
    }
    if x.len() != y.len() {
        return Err(SelectorError::LengthMismatch {
            what: "features vs labels",
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() != weights.len() {
        return Err(SelectorError::LengthMismatch {
            what: "features vs weights",
            left: x.len(),
            right: weights.len(),
        });
    }
    let d = x[0].as_ref().len();
    if d == 0 {
        return Err(SelectorError::Dimension { expected: 1, got: 0 });
    }
    for row in x {
        let got = row.as_ref().len();
        if got != d {
            return Err(SelectorError::Dimension { expected: d, got });
        }
    }
    if let Some(&w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(SelectorError::Weight(w));
    }
    Ok(d)
}

fn fit_on(
    x: &[impl AsRef<[f64]>],
    y: &[bool],
    weights: &[f64],
    config: &ForestConfig,
    idx: &mut [usize],
    rng: &mut ChaCha8Rng,
    n_features: usize,
) -> (DecisionTree, Vec<f64>) {
    let mut g = Grower {
        x,
        y,
        w: weights,
        config,
        n_features,
        k_features: config.max_features.resolve(n_features),
        nodes: Vec::new(),
        importances: vec![0.0; n_features],
    };
    g.grow(idx, 0, rng);
    (
        DecisionTree {
            nodes: g.nodes,
            n_features,
        },
        g.importances,
    )
}

/// Fits one CART tree on all rows (no resampling).
pub fn fit_tree<R: AsRef<[f64]>>(
    x: &[R],
    y: &[bool],
    weights: &[f64],
    config: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree> {
    config.validate()?;
    let d = check_inputs(x, y, weights)?;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    Ok(fit_on(x, y, weights, config, &mut idx, rng, d).0)
}

/// The random stream used for tree `tree` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<DecisionTree>,
    config: ForestConfig,
    feature_importances: Vec<f64>,
    n_features: usize,
}

pub fn fit_forest<R: AsRef<[f64]> + Sync>(x: &[R], y: &[bool], weights: &[f64], config: &ForestConfig) -> Result<Forest> {
    config.validate()?;
    let d = check_inputs(x, y, weights)?;
    let n = x.len();
    let fitted: Vec<(DecisionTree, Vec<f64>)> = (0..config.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(config.seed, t);
            let mut idx: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_on(x, y, weights, config, &mut idx, &mut rng, d)
        })
        .collect();
    let mut importances = vec![0.0; d];
    let mut trees = Vec::with_capacity(fitted.len());
    for (tree, imp) in fitted {
        for (acc, v) in importances.iter_mut().zip(&imp) {
            *acc += v;
        }
        trees.push(tree);
    }
    let sum: f64 = importances.iter().sum();
    if sum > 0.0 {
        importances.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(Forest {
        trees,
        config: config.clone(),
        feature_importances: importances,
        n_features: d,
    })
}

impl Forest {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    /// Normalized impurity decrease per feature; all zeros when no tree split.
    pub fn feature_importances(&self) -> &[f64] {
        &self.feature_importances
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean of the leaf positive fractions reached in each tree.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.predict(x)?;
        }
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_many<R: AsRef<[f64]> + Sync>(&self, x: &[R]) -> Result<Vec<f64>> {
        x.par_iter().map(|r| self.predict_proba(r.as_ref())).collect()
    }

    /// Serializes at full precision so a reloaded forest predicts identically.
    pub fn to_json(&self) -> Value {
        json!({
            "format": FOREST_FORMAT,
            "version": FOREST_VERSION,
            "config": serde_json::to_value(&self.config).expect("config serializes"),
            "n_features": self.n_features,
            "feature_importances": self.feature_importances,
            "trees": self.trees.iter().map(DecisionTree::to_json).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        if v.get("format").and_then(Value::as_str) != Some(FOREST_FORMAT) {
            return Err(SelectorError::Format("not a forest document".into()));
        }
        match v.get("version").and_then(Value::as_u64) {
            Some(FOREST_VERSION) => {}
            other => return Err(SelectorError::Format(format!("unsupported version {other:?}"))),
        }
        let config: ForestConfig = serde_json::from_value(v["config"].clone())
            .map_err(|e| SelectorError::Format(format!("config: {e}")))?;
        let n_features = v["n_features"]
            .as_u64()
            .ok_or_else(|| SelectorError::Format("missing n_features".into()))? as usize;
        let feature_importances: Vec<f64> = serde_json::from_value(v["feature_importances"].clone())
            .map_err(|e| SelectorError::Format(format!("feature_importances: {e}")))?;
        let trees = v["trees"]
            .as_array()
            .ok_or_else(|| SelectorError::Format("missing trees".into()))?
            .iter()
            .map(|t| DecisionTree::from_json(t, n_features))
            .collect::<Result<Vec<_>>>()?;
        if trees.is_empty() || feature_importances.len() != n_features {
            return Err(SelectorError::Format("inconsistent forest".into()));
        }
        Ok(Forest {
            trees,
            config,
            feature_importances,
            n_features,
        })
    }
}

/// One metrics row per threshold; AUC is the same in every row.
pub fn threshold_sweep<R: AsRef<[f64]> + Sync>(
    forest: &Forest,
    x: &[R],
    y: &[bool],
    thresholds: &[f64],
) -> Result<Vec<ThresholdMetrics>> {
    if x.len() != y.len() {
        return Err(SelectorError::LengthMismatch {
            what: "features vs labels",
            left: x.len(),
            right: y.len(),
        });
    }
    let scores = forest.predict_many(x)?;
    thresholds
        .iter()
        .map(|&t| binary_metrics(&scores, y, t).map_err(Into::into))
        .collect()
}

/// Held-out metrics of one fold. AUC is absent when the fold has one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub size: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanStd { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSummary {
    pub threshold: f64,
    pub folds: Vec<FoldMetrics>,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub accuracy: MeanStd,
    pub auc: Option<MeanStd>,
}

/// Seeded fold assignment: position `p` of a shuffled index list goes to
/// fold `p % k`.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (p, &i) in order.iter().enumerate() {
        fold[i] = p % k;
    }
    fold
}

pub fn kfold_cv<R: AsRef<[f64]> + Sync + Clone>(
    x: &[R],
    y: &[bool],
    k: usize,
    config: &ForestConfig,
    threshold: f64,
) -> Result<CvSummary> {
    let n = x.len();
    if k < 2 || k > n {
        return Err(SelectorError::Folds { k, n });
    }
    check_inputs(x, y, &vec![1.0; n])?;
    let fold = fold_assignment(n, k, config.seed);
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (mut tx, mut ty, mut ex, mut ey) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            if fold[i] == f {
                ex.push(x[i].clone());
                ey.push(y[i]);
            } else {
                tx.push(x[i].clone());
                ty.push(y[i]);
            }
        }
        let forest = fit_forest(&tx, &ty, &vec![1.0; tx.len()], config)?;
        let scores = forest.predict_many(&ex)?;
        let c = Confusion::at(&scores, &ey, threshold);
        folds.push(FoldMetrics {
            size: ey.len(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            accuracy: c.accuracy(),
            auc: roc_auc(&scores, &ey).ok(),
        });
    }
    let stat = |g: fn(&FoldMetrics) -> f64| MeanStd::of(&folds.iter().map(g).collect::<Vec<_>>()).expect("k >= 2");
    let aucs: Vec<f64> = folds.iter().filter_map(|m| m.auc).collect();
    Ok(CvSummary {
        threshold,
        precision: stat(|m| m.precision),
        recall: stat(|m| m.recall),
        f1: stat(|m| m.f1),
        accuracy: stat(|m| m.accuracy),
        auc: MeanStd::of(&aucs),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(n: usize) -> ForestConfig {
        ForestConfig {
            n_estimators: n,
            min_samples_leaf: 1,
            ..ForestConfig::default()
        }
    }

    fn ones(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn single_class_gives_one_leaf() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        for label in [false, true] {
            let y = vec![label; 3];
            let t = fit_tree(&x, &y, &ones(3), &cfg(1), &mut tree_rng(0, 0)).unwrap();
            assert_eq!(t.nodes().len(), 1);
            assert_eq!(t.predict(&[2.0]).unwrap(), if label { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn separable_line_gives_depth_one() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        let t = fit_tree(&x, &y, &ones(10), &cfg(1), &mut tree_rng(0, 0)).unwrap();
        assert_eq!(t.depth(), 1);
        match &t.nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 4.5),
            n => panic!("{n:?}"),
        }
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(t.predict(xi).unwrap() >= 0.5, yi);
        }
    }

    #[test]
    fn xor_needs_two_levels() {
        // Every first split leaves Gini at 0.5 (zero gain); the second
        // level separates perfectly.
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = vec![false, true, true, false];
        let c = ForestConfig {
            max_depth: 2,
            max_features: MaxFeatures::All,
            ..cfg(1)
        };
        let t = fit_tree(&x, &y, &ones(4), &c, &mut tree_rng(0, 0)).unwrap();
        assert!(t.depth() <= 2);
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(t.predict(xi).unwrap() >= 0.5, yi);
        }
        // the tie between features goes to feature 0
        assert!(matches!(t.nodes()[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn respects_leaf_size_and_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] + r[1] * r[2] > 0.6).collect();
        let c = ForestConfig {
            min_samples_leaf: 7,
            max_depth: 4,
            ..cfg(1)
        };
        let t = fit_tree(&x, &y, &ones(300), &c, &mut tree_rng(0, 0)).unwrap();
        assert!(t.depth() <= 4);
        assert!(t.leaves().all(|(_, s)| s >= 7));
    }

    #[test]
    fn errors() {
        let x: Vec<Vec<f64>> = vec![];
        assert!(matches!(fit_tree(&x, &[], &[], &cfg(1), &mut tree_rng(0, 0)), Err(SelectorError::Empty)));
        let f = fit_forest(&[vec![1.0, 2.0]], &[true], &[1.0], &cfg(2)).unwrap();
        assert!(matches!(f.predict_proba(&[1.0]), Err(SelectorError::Dimension { .. })));
        assert!(matches!(
            fit_forest(&[vec![1.0]], &[true], &[1.0], &ForestConfig { max_depth: 0, ..cfg(1) }),
            Err(SelectorError::Config(_))
        ));
        assert!(matches!(
            kfold_cv(&[vec![1.0]], &[true], 2, &cfg(1), 0.5),
            Err(SelectorError::Folds { k: 2, n: 1 })
        ));
    }

    #[test]
    fn single_positive_sample() {
        let f = fit_forest(&[vec![0.3, 0.7]], &[true], &[1.0], &cfg(5)).unwrap();
        assert_eq!(f.predict_proba(&[0.3, 0.7]).unwrap(), 1.0);
    }

    #[test]
    fn averages_leaf_fractions() {
        let leaf = |p| DecisionTree {
            nodes: vec![Node::Leaf {
                positive_fraction: p,
                samples: 4,
            }],
            n_features: 1,
        };
        let f = Forest {
            trees: vec![leaf(0.25), leaf(0.75)],
            config: cfg(2),
            feature_importances: vec![0.0],
            n_features: 1,
        };
        assert_eq!(f.predict_proba(&[0.0]).unwrap(), 0.5);
    }

    fn signal_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..9).map(|_| rng.random::<f64>()).collect()).collect();
        let y = x.iter().map(|r| r[0] > 0.5).collect();
        (x, y)
    }

    #[test]
    fn informative_feature_dominates() {
        let (x, y) = signal_data(200, 1);
        let f = fit_forest(&x, &y, &ones(200), &cfg(50)).unwrap();
        let imp = f.feature_importances();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp[1..].iter().all(|&v| v < imp[0]));
    }

    #[test]
    fn deterministic_and_thread_count_independent() {
        let (x, y) = signal_data(120, 2);
        let a = fit_forest(&x, &y, &ones(120), &cfg(20)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| fit_forest(&x, &y, &ones(120), &cfg(20)).unwrap());
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a.to_json()).unwrap(), serde_json::to_string(&b.to_json()).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = signal_data(80, 3);
        let f = fit_forest(&x, &y, &ones(80), &cfg(7)).unwrap();
        let text = serde_json::to_string(&f.to_json()).unwrap();
        let back = Forest::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(f, back);
        let mut wrong = f.to_json();
        wrong["version"] = json!(99);
        assert!(Forest::from_json(&wrong).is_err());
    }

    #[test]
    fn one_tree_without_bootstrap_is_plain_cart() {
        let (x, y) = signal_data(100, 4);
        let c = ForestConfig {
            bootstrap: false,
            ..cfg(1)
        };
        let f = fit_forest(&x, &y, &ones(100), &c).unwrap();
        let t = fit_tree(&x, &y, &ones(100), &c, &mut tree_rng(c.seed, 0)).unwrap();
        for r in &x {
            assert_eq!(f.predict_proba(r).unwrap(), t.predict(r).unwrap());
        }
    }

    #[test]
    fn sweep_rows_and_monotone_recall() {
        let (x, y) = signal_data(150, 5);
        let f = fit_forest(&x[..100], &y[..100], &ones(100), &cfg(30)).unwrap();
        let rows = threshold_sweep(&f, &x[100..], &y[100..], &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(rows.len(), 7);
        assert!(rows.windows(2).all(|w| w[1].recall <= w[0].recall && w[0].auc == w[1].auc));
        let above = threshold_sweep(&f, &x[100..], &y[100..], &[1.0 + 1e-9]).unwrap();
        assert_eq!(above[0].recall, 0.0);
        assert!(threshold_sweep(&f, &x[..3], &[true; 3], &[0.5]).is_err());
    }

    #[test]
    fn cross_validation_shapes() {
        let (x, y) = signal_data(12, 6);
        let loo = kfold_cv(&x, &y, 12, &cfg(5), 0.5).unwrap();
        assert_eq!(loo.folds.len(), 12);
        assert!(loo.folds.iter().all(|f| f.size == 1 && f.auc.is_none()));
        let (x, y) = signal_data(60, 7);
        let cv = kfold_cv(&x, &y, 5, &cfg(10), 0.5).unwrap();
        let accs: Vec<f64> = cv.folds.iter().map(|f| f.accuracy).collect();
        let lo = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= cv.accuracy.mean && cv.accuracy.mean <= hi);
        let same = vec![vec![1.0, 1.0]; 10];
        let flat = kfold_cv(&same, &[true; 10], 5, &cfg(3), 0.5).unwrap();
        assert_eq!(flat.accuracy.std, 0.0);
    }

    #[test]
    fn fold_sizes_balance() {
        let f = fold_assignment(23, 5, 9);
        for k in 0..5 {
            let c = f.iter().filter(|&&v| v == k).count();
            assert!(c == 4 || c == 5);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn probabilities_in_unit_interval(seed in any::<u64>(), n in 2usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            let y: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let f = fit_forest(&x, &y, &vec![1.0; n], &cfg(4)).unwrap();
            for r in &x {
                let p = f.predict_proba(r).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
            }
            let imp: f64 = f.feature_importances().iter().sum();
            prop_assert!(imp == 0.0 || (imp - 1.0).abs() < 1e-9);
        }

        #[test]
        fn recall_never_rises_with_threshold(seed in any::<u64>()) {
            let (x, y) = signal_data(60, seed);
            prop_assume!(y.iter().any(|&v| v) && y.iter().any(|&v| !v));
            let f = fit_forest(&x, &y, &vec![1.0; 60], &cfg(5)).unwrap();
            let ts: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
            let rows = threshold_sweep(&f, &x, &y, &ts).unwrap();
            let scores = f.predict_many(&x).unwrap();
            let counts: Vec<usize> = ts.iter().map(|&t| Confusion::at(&scores, &y, t).predicted_positive()).collect();
            prop_assert!(rows.windows(2).all(|w| w[1].recall <= w[0].recall));
            prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
