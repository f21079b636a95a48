use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EpisodeData, Task};
use crate::eval::task_loss;
use crate::predictor::{ClassWeights, Predictor};
use crate::{Error, Result};

/// Mean loss increase when feature `k` is shuffled across all ticks and
/// subjects, over `n_repeats` shuffles, clamped at zero.
pub fn permutation_importance(
    predictor: &Predictor,
    episodes: &[EpisodeData],
    task: Task,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n_f = predictor.n_features();
    let labels: Vec<f64> = episodes.iter().flat_map(|e| e.y.iter().copied()).collect();
    let loss_of = |eps: &[EpisodeData]| -> Result<f64> {
        let mut preds = Vec::with_capacity(labels.len());
        for e in eps {
            preds.extend(predictor.predict_columns(e.x.columns())?);
        }
        task_loss(task, &preds, &labels)
    };
    let base = loss_of(episodes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = vec![0.0; n_f];
    for (k, score) in scores.iter_mut().enumerate() {
        if !predictor.may_use_feature(k) {
            continue;
        }
        let pooled: Vec<f64> = episodes
            .iter()
            .flat_map(|e| e.x.row(k).collect::<Vec<_>>())
            .collect();
        let mut total = 0.0;
        for _ in 0..n_repeats.max(1) {
            let mut values = pooled.clone();
            values.shuffle(&mut rng);
            let mut it = values.into_iter();
            let permuted: Vec<EpisodeData> = episodes
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    for t in 0..e.n_ticks() {
                        e.x.set(k, t, it.next().expect("pooled length"));
                    }
                    e
                })
                .collect();
            total += loss_of(&permuted)? - base;
        }
        *score = (total / n_repeats.max(1) as f64).max(0.0);
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub n_alphas: usize,
    /// Ratio of the smallest to the largest alpha on the grid.
    pub eps: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            n_alphas: 100,
            eps: 1e-3,
            max_iter: 20_000,
            tol: 1e-4,
            folds: 5,
            seed: 0,
        }
    }
}

/// Sufficient statistics of a centered least-squares problem.
#[derive(Debug, Clone)]
pub struct Gram {
    /// `X^T X / n` on centered columns.
    pub xtx: DMatrix<f64>,
    /// `X^T y / n` on centered data.
    pub xty: DVector<f64>,
    /// `y^T y / n` on centered labels.
    pub yty: f64,
    pub x_mean: DVector<f64>,
    pub y_mean: f64,
}

impl Gram {
    pub fn from_rows(
        x: &[f64],
        n_f: usize,
        y: &[f64],
        rows: impl Iterator<Item = usize> + Clone,
    ) -> Self {
        let n = rows.clone().count().max(1) as f64;
        let mut x_mean = DVector::zeros(n_f);
        let mut y_mean = 0.0;
        for i in rows.clone() {
            for k in 0..n_f {
                x_mean[k] += x[i * n_f + k];
            }
            y_mean += y[i];
        }
        x_mean /= n;
        y_mean /= n;
        let mut xtx = DMatrix::zeros(n_f, n_f);
        let mut xty = DVector::zeros(n_f);
        let mut yty = 0.0;
        let mut row = vec![0.0; n_f];
        for i in rows {
            for k in 0..n_f {
                row[k] = x[i * n_f + k] - x_mean[k];
            }
            let yc = y[i] - y_mean;
            yty += yc * yc;
            for a in 0..n_f {
                xty[a] += row[a] * yc;
                for b in 0..=a {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..n_f {
            for b in 0..a {
                xtx[(b, a)] = xtx[(a, b)];
            }
        }
        Self {
            xtx: xtx / n,
            xty: xty / n,
            yty: yty / n,
            x_mean,
            y_mean,
        }
    }

    /// Smallest alpha at which every coefficient is zero.
    pub fn alpha_max(&self) -> f64 {
        self.xty.amax()
    }

    /// `(1/2n)||y - Xb||^2 + alpha ||b||_1`.
    pub fn objective(&self, b: &DVector<f64>, alpha: f64) -> f64 {
        0.5 * (self.yty - 2.0 * b.dot(&self.xty) + b.dot(&(&self.xtx * b))) + alpha * b.lp_norm(1)
    }

    /// Duality gap of `b` at `alpha`.
    pub fn duality_gap(&self, b: &DVector<f64>, alpha: f64) -> f64 {
        // Residual correlation X^T r / n with r = y - Xb.
        let corr = &self.xty - &self.xtx * b;
        let r_sq = self.yty - 2.0 * b.dot(&self.xty) + b.dot(&(&self.xtx * b));
        let scale = if corr.amax() > alpha {
            alpha / corr.amax()
        } else {
            1.0
        };
        // Dual point theta = scale * r / n.
        let primal = 0.5 * r_sq + alpha * b.lp_norm(1);
        let r_dot_y = self.yty - b.dot(&self.xty);
        let dual = scale * r_dot_y - 0.5 * scale * scale * r_sq;
        (primal - dual).max(0.0)
    }
}

#[inline]
fn soft_threshold(z: f64, a: f64) -> f64 {
    if z > a {
        z - a
    } else if z < -a {
        z + a
    } else {
        0.0
    }
}

/// Cyclic coordinate descent from `b` (warm start). Returns whether the
/// largest coefficient update fell below `tol` within `max_iter` cycles.
pub fn lasso_cd(g: &Gram, alpha: f64, b: &mut DVector<f64>, max_iter: usize, tol: f64) -> bool {
    let p = b.len();
    for _ in 0..max_iter {
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            let h = g.xtx[(j, j)];
            if h <= 0.0 {
                b[j] = 0.0;
                continue;
            }
            let grad = g.xty[j] - g.xtx.row(j).transpose().dot(b) + h * b[j];
            let new = soft_threshold(grad, alpha) / h;
            max_delta = max_delta.max((new - b[j]).abs());
            b[j] = new;
        }
        if max_delta < tol {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub alphas: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub alpha: f64,
    pub coef: Vec<f64>,
    pub intercept: f64,
}

pub fn alpha_grid(alpha_max: f64, eps: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![alpha_max];
    }
    (0..n)
        .map(|i| alpha_max * eps.powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// Lasso path with alpha chosen by k-fold cross-validated MSE. Rows of `x`
/// are samples (row-major, `n_f` columns).
pub fn lasso_cv(x: &[f64], n_f: usize, y: &[f64], cfg: &LassoConfig) -> Result<LassoFit> {
    let n = y.len();
    if n < cfg.folds.max(2) || x.len() != n * n_f {
        return Err(Error::Shape(
            "lasso needs at least one sample per fold".into(),
        ));
    }
    let full = Gram::from_rows(x, n_f, y, 0..n);
    let alphas = alpha_grid(full.alpha_max().max(1e-12), cfg.eps, cfg.n_alphas);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let folds = cfg.folds.max(2);
    let mut cv_mse = vec![0.0; alphas.len()];
    for f in 0..folds {
        let held: Vec<usize> = order.iter().copied().skip(f).step_by(folds).collect();
        let mut is_held = vec![false; n];
        held.iter().for_each(|&i| is_held[i] = true);
        let g = Gram::from_rows(x, n_f, y, (0..n).filter(|&i| !is_held[i]));
        let mut b = DVector::zeros(n_f);
        for (a_idx, &alpha) in alphas.iter().enumerate() {
            lasso_cd(&g, alpha, &mut b, cfg.max_iter, cfg.tol);
            let intercept = g.y_mean - g.x_mean.dot(&b);
            let mse = held
                .iter()
                .map(|&i| {
                    let pred = intercept + (0..n_f).map(|k| x[i * n_f + k] * b[k]).sum::<f64>();
                    (y[i] - pred).powi(2)
                })
                .sum::<f64>()
                / held.len() as f64;
            cv_mse[a_idx] += mse / folds as f64;
        }
    }
    let best = (0..alphas.len())
        .min_by(|&a, &b| cv_mse[a].total_cmp(&cv_mse[b]))
        .unwrap_or(0);
    let mut b = DVector::zeros(n_f);
    let mut ok = true;
    for &alpha in &alphas[..=best] {
        ok = lasso_cd(&full, alpha, &mut b, cfg.max_iter, cfg.tol);
    }
    if !ok {
        warn!(
            "lasso did not converge in {} cycles; duality gap {:.3e}",
            cfg.max_iter,
            full.duality_gap(&b, alphas[best])
        );
    }
    Ok(LassoFit {
        alpha: alphas[best],
        intercept: full.y_mean - full.x_mean.dot(&b),
        coef: b.iter().copied().collect(),
        alphas,
        cv_mse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct L1SvmConfig {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for L1SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-4,
            max_iter: 1000,
        }
    }
}

/// L1-penalized linear classifier on the class-weighted squared hinge loss,
/// `||w||_1 + C sum_i cw_i max(0, 1 - y_i (w.x_i + b))^2`, by accelerated
/// proximal gradient. Labels are -1/+1. Returns `(w, b)`.
pub fn l1_svm(
    x: &[f64],
    n_f: usize,
    y: &[f64],
    weights: Option<ClassWeights>,
    cfg: &L1SvmConfig,
) -> Result<(Vec<f64>, f64)> {
    let n = y.len();
    if n == 0 || x.len() != n * n_f {
        return Err(Error::Shape("l1 svm needs matching rows and labels".into()));
    }
    let cw: Vec<f64> = y
        .iter()
        .map(|&t| match weights {
            Some(w) if t > 0.0 => w.w_pos,
            Some(w) => w.w_neg,
            None => 1.0,
        })
        .collect();
    // Lipschitz bound: 2C * largest eigenvalue of sum_i cw_i z_i z_i^T, z = [x; 1].
    let p = n_f + 1;
    let mut m = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        for a in 0..p {
            let za = if a < n_f { x[i * n_f + a] } else { 1.0 };
            for b in 0..=a {
                let zb = if b < n_f { x[i * n_f + b] } else { 1.0 };
                m[(a, b)] += cw[i] * za * zb;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
    let lip = 2.0 * cfg.c * m.symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lip;
    let grad = |v: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(p);
        for i in 0..n {
            let mut s = v[n_f];
            for k in 0..n_f {
                s += v[k] * x[i * n_f + k];
            }
            let margin = 1.0 - y[i] * s;
            if margin > 0.0 {
                let coeff = -2.0 * cfg.c * cw[i] * margin * y[i];
                for k in 0..n_f {
                    g[k] += coeff * x[i * n_f + k];
                }
                g[n_f] += coeff;
            }
        }
        g
    };
    let prox = |v: &DVector<f64>| -> DVector<f64> {
        let mut out = v.clone();
        for k in 0..n_f {
            out[k] = soft_threshold(v[k], step);
        }
        out
    };
    let mut w = DVector::zeros(p);
    let mut z = w.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let next = prox(&(&z - step * grad(&z)));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &next + ((t - 1.0) / t_next) * (&next - &w);
        let delta = (&next - &w).amax();
        w = next;
        t = t_next;
        if delta < cfg.tol * w.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("l1 svm did not converge in {} iterations", cfg.max_iter);
    }
    Ok((w.as_slice()[..n_f].to_vec(), w[n_f]))
}
