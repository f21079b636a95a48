//! Gradient-boosted regression trees on per-tick state vectors.
//!
//! Features are bucketed once into at most `max_bins` bins whose boundaries
//! are midpoints between consecutive distinct training values; when a
//! feature has no more distinct values than bins the split search is exact.
//! Each stage fits a depth-limited tree to the loss gradients with greedy
//! gain maximization. Leaves take a Newton step `-G / (H + l2)`, which for
//! squared loss with `l2 = 0` is the mean residual.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GbdtTask {
    Regression,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub max_bins: usize,
    /// L2 penalty on leaf values; 0 gives plain mean residuals for regression.
    pub l2: f64,
    /// Models averaged in the ensemble, each with its own seed.
    pub n_models: usize,
    /// Row fraction drawn per tree (1.0 disables subsampling).
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            max_bins: 255,
            l2: 0.0,
            n_models: 1,
            subsample: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    fn uses_feature(&self, k: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature, .. } if *feature == k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub task: GbdtTask,
    pub n_features: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Training loss after each stage, starting with the base score alone.
    pub train_loss: Vec<f64>,
}

impl GbdtModel {
    /// Raw additive score before the link function.
    #[inline]
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Regression value or positive-class probability.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Model(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::Model("NaN in predictor input".into()));
        }
        let m = self.margin(x);
        Ok(match self.task {
            GbdtTask::Regression => m,
            GbdtTask::Binary => sigmoid(m),
        })
    }

    pub fn uses_feature(&self, k: usize) -> bool {
        self.trees.iter().any(|t| t.uses_feature(k))
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Averages several boosted models (probabilities for binary tasks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtEnsemble {
    pub models: Vec<GbdtModel>,
}

impl GbdtEnsemble {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for m in &self.models {
            sum += m.predict(x)?;
        }
        Ok(sum / self.models.len() as f64)
    }

    pub fn n_features(&self) -> usize {
        self.models[0].n_features
    }

    pub fn task(&self) -> GbdtTask {
        self.models[0].task
    }

    pub fn uses_feature(&self, k: usize) -> bool {
        self.models.iter().any(|m| m.uses_feature(k))
    }
}

/// Row-major sample matrix with labels and per-sample weights.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub x: &'a [f64],
    pub n_features: usize,
    pub y: &'a [f64],
    /// Per-sample weights; `None` means all ones.
    pub weights: Option<&'a [f64]>,
}

impl Samples<'_> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }
}

struct Binned {
    n: usize,
    /// Feature-major bin indices.
    bins: Vec<u8>,
    thresholds: Vec<Vec<f64>>,
}

impl Binned {
    fn new(s: &Samples, max_bins: usize) -> Self {
        let n = s.len();
        let max_bins = max_bins.clamp(2, 256);
        let mut bins = vec![0u8; n * s.n_features];
        let mut thresholds = Vec::with_capacity(s.n_features);
        let mut col = Vec::with_capacity(n);
        for k in 0..s.n_features {
            col.clear();
            col.extend((0..n).map(|i| s.row(i)[k]));
            let mut distinct = col.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let m = distinct.len();
            let cuts: Vec<f64> = if m <= max_bins {
                distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut c: Vec<f64> = (1..max_bins)
                    .map(|b| {
                        let idx = b * m / max_bins;
                        0.5 * (distinct[idx - 1] + distinct[idx])
                    })
                    .collect();
                c.dedup();
                c
            };
            for (i, &v) in col.iter().enumerate() {
                bins[k * n + i] = cuts.partition_point(|&c| c < v) as u8;
            }
            thresholds.push(cuts);
        }
        Self {
            n,
            bins,
            thresholds,
        }
    }

    #[inline]
    fn bin(&self, k: usize, i: usize) -> usize {
        self.bins[k * self.n + i] as usize
    }
}

#[derive(Clone, Copy, Default)]
struct Stat {
    g: f64,
    h: f64,
    n: usize,
}

struct BestSplit {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct TreeBuilder<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a GbdtConfig,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.l2)
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        if h + self.cfg.l2 > 0.0 {
            -g / (h + self.cfg.l2)
        } else {
            0.0
        }
    }

    fn best_split(&self, idx: &[usize], total: Stat) -> Option<BestSplit> {
        let parent = self.score(total.g, total.h);
        let mut best: Option<BestSplit> = None;
        let mut hist: Vec<Stat> = Vec::new();
        for (k, cuts) in self.binned.thresholds.iter().enumerate() {
            if cuts.is_empty() {
                continue;
            }
            hist.clear();
            hist.resize(cuts.len() + 1, Stat::default());
            for &i in idx {
                let b = &mut hist[self.binned.bin(k, i)];
                b.g += self.grad[i];
                b.h += self.hess[i];
                b.n += 1;
            }
            let mut left = Stat::default();
            for (b, st) in hist[..cuts.len()].iter().enumerate() {
                left.g += st.g;
                left.h += st.h;
                left.n += st.n;
                let right = Stat {
                    g: total.g - left.g,
                    h: total.h - left.h,
                    n: total.n - left.n,
                };
                if left.n < self.cfg.min_samples_leaf.max(1)
                    || right.n < self.cfg.min_samples_leaf.max(1)
                {
                    continue;
                }
                if left.h + self.cfg.l2 <= 0.0 || right.h + self.cfg.l2 <= 0.0 {
                    continue;
                }
                let gain = self.score(left.g, left.h) + self.score(right.g, right.h) - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|bs| gain > bs.gain) {
                    best = Some(BestSplit {
                        feature: k,
                        bin: b,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let total = idx.iter().fold(Stat::default(), |mut s, &i| {
            s.g += self.grad[i];
            s.h += self.hess[i];
            s.n += 1;
            s
        });
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(total.g, total.h),
        });
        if depth >= self.cfg.max_depth {
            return id;
        }
        let Some(split) = self.best_split(&idx, total) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.binned.bin(split.feature, i) <= split.bin);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: self.binned.thresholds[split.feature][split.bin],
            left,
            right,
        };
        id
    }
}

fn weighted_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn loss(task: GbdtTask, s: &Samples, margin: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut wsum = 0.0;
    for i in 0..s.len() {
        let w = s.weight(i);
        wsum += w;
        sum += w * match task {
            GbdtTask::Regression => (margin[i] - s.y[i]).powi(2),
            GbdtTask::Binary => {
                // log(1 + e^m) - y m, computed stably.
                let m = margin[i];
                let softplus = if m > 0.0 {
                    m + (-m).exp().ln_1p()
                } else {
                    m.exp().ln_1p()
                };
                softplus - s.y[i] * m
            }
        };
    }
    sum / wsum
}

/// Fits one boosted model. Binary labels must be 0/1.
///
/// Regression starts from the label median, binary from the weighted
/// log-odds. Boosting stops early when a stage finds no split with
/// positive gain, so featureless inputs yield a constant model.
pub fn fit_gbdt(samples: &Samples, task: GbdtTask, cfg: &GbdtConfig) -> Result<GbdtModel> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Data(
            "gradient boosting needs at least 2 samples".into(),
        ));
    }
    if samples.x.len() != n * samples.n_features {
        return Err(Error::Shape(
            "sample matrix does not match label count".into(),
        ));
    }
    if samples.x.iter().chain(samples.y).any(|v| v.is_nan()) {
        return Err(Error::Data("NaN in training samples".into()));
    }
    if task == GbdtTask::Binary && samples.y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data("binary labels must be 0 or 1".into()));
    }

    let base_score = match task {
        GbdtTask::Regression => weighted_median(samples.y),
        GbdtTask::Binary => {
            let (mut pos, mut tot) = (0.0, 0.0);
            for i in 0..n {
                pos += samples.weight(i) * samples.y[i];
                tot += samples.weight(i);
            }
            let p = (pos / tot).clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln()
        }
    };
    let mut model = GbdtModel {
        task,
        n_features: samples.n_features,
        base_score,
        learning_rate: cfg.learning_rate,
        trees: Vec::new(),
        train_loss: Vec::new(),
    };
    let mut margin = vec![base_score; n];
    model.train_loss.push(loss(task, samples, &margin));

    let first = samples.y[0];
    if samples.y.iter().all(|&v| v == first) {
        return Ok(model);
    }

    let binned = Binned::new(samples, cfg.max_bins);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..cfg.n_trees {
        for i in 0..n {
            let w = samples.weight(i);
            match task {
                GbdtTask::Regression => {
                    grad[i] = w * (margin[i] - samples.y[i]);
                    hess[i] = w;
                }
                GbdtTask::Binary => {
                    let p = sigmoid(margin[i]);
                    grad[i] = w * (p - samples.y[i]);
                    hess[i] = w * (p * (1.0 - p)).max(1e-16);
                }
            }
        }
        let idx: Vec<usize> = if cfg.subsample < 1.0 {
            let m = ((cfg.subsample * n as f64).ceil() as usize).clamp(2, n);
            let mut v = sample(&mut rng, n, m).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..n).collect()
        };
        let mut builder = TreeBuilder {
            binned: &binned,
            grad: &grad,
            hess: &hess,
            cfg,
            nodes: Vec::new(),
        };
        builder.grow(idx, 0);
        let tree = Tree {
            nodes: builder.nodes,
        };
        if matches!(tree.root(), Node::Leaf { .. }) {
            break;
        }
        for (i, m) in margin.iter_mut().enumerate() {
            *m += cfg.learning_rate * tree.predict(samples.row(i));
        }
        model.trees.push(tree);
        model.train_loss.push(loss(task, samples, &margin));
    }
    Ok(model)
}

/// Fits `cfg.n_models` models with consecutive seeds.
pub fn fit_gbdt_ensemble(
    samples: &Samples,
    task: GbdtTask,
    cfg: &GbdtConfig,
) -> Result<GbdtEnsemble> {
    let models = (0..cfg.n_models.max(1))
        .map(|m| {
            let c = GbdtConfig {
                seed: cfg.seed.wrapping_add(m as u64),
                ..cfg.clone()
            };
            fit_gbdt(samples, task, &c)
        })
        .collect::<Result<_>>()?;
    Ok(GbdtEnsemble { models })
}
