//! Linear and logistic regression baselines on per-tick state vectors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ClassWeights;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub link: Link,
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coef.len() {
            return Err(Error::Model(format!(
                "expected {} features, got {}",
                self.coef.len(),
                x.len()
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::Model("NaN in predictor input".into()));
        }
        let z = self.intercept + self.coef.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        Ok(match self.link {
            Link::Identity => z,
            Link::Logistic => 1.0 / (1.0 + (-z).exp()),
        })
    }
}

fn design(x: &[f64], n_f: usize) -> DMatrix<f64> {
    let n = x.len() / n_f.max(1);
    DMatrix::from_fn(
        n,
        n_f + 1,
        |i, j| if j == n_f { 1.0 } else { x[i * n_f + j] },
    )
}

/// Ordinary least squares with intercept. Rank-deficient designs (e.g.
/// features pinned to the fill value) get the minimum-norm solution.
pub fn fit_ols(x: &[f64], n_f: usize, y: &[f64]) -> Result<LinearModel> {
    if y.len() < 2 || x.len() != y.len() * n_f {
        return Err(Error::Shape(
            "least squares needs matching rows and labels".into(),
        ));
    }
    let a = design(x, n_f);
    let gram = a.transpose() * &a;
    let rhs = a.transpose() * DVector::from_column_slice(y);
    let beta = gram
        .svd(true, true)
        .solve(&rhs, 1e-10)
        .map_err(|e| Error::Model(e.to_string()))?;
    Ok(LinearModel {
        link: Link::Identity,
        coef: beta.as_slice()[..n_f].to_vec(),
        intercept: beta[n_f],
    })
}

/// Class-weighted logistic regression (labels 0/1) by Newton's method. A
/// tiny ridge keeps separable problems finite.
pub fn fit_logistic(
    x: &[f64],
    n_f: usize,
    y: &[f64],
    weights: ClassWeights,
    max_iter: usize,
    tol: f64,
) -> Result<LinearModel> {
    if y.len() < 2 || x.len() != y.len() * n_f {
        return Err(Error::Shape(
            "logistic regression needs matching rows and labels".into(),
        ));
    }
    let a = design(x, n_f);
    let n = y.len();
    let p = n_f + 1;
    let ridge = 1e-6;
    let sw: Vec<f64> = y
        .iter()
        .map(|&t| {
            if t > 0.5 {
                weights.w_pos
            } else {
                weights.w_neg
            }
        })
        .collect();
    let mut beta = DVector::zeros(p);
    for _ in 0..max_iter {
        let z = &a * &beta;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..n {
            let mu = 1.0 / (1.0 + (-z[i]).exp());
            let row = a.row(i);
            let r = sw[i] * (mu - y[i]);
            let w = sw[i] * (mu * (1.0 - mu)).max(1e-12);
            for j in 0..p {
                grad[j] += r * row[j];
                for l in 0..=j {
                    hess[(j, l)] += w * row[j] * row[l];
                }
            }
        }
        for j in 0..p {
            for l in 0..j {
                hess[(l, j)] = hess[(j, l)];
            }
            hess[(j, j)] += ridge;
            if j < n_f {
                grad[j] += ridge * beta[j];
            }
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::Model("logistic Hessian is not positive definite".into()))?
            .solve(&grad);
        beta -= &step;
        if step.amax() < tol {
            break;
        }
    }
    Ok(LinearModel {
        link: Link::Logistic,
        coef: beta.as_slice()[..n_f].to_vec(),
        intercept: beta[n_f],
    })
}
