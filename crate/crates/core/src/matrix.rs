//! Column-major feature and action matrices.
//!
//! Both are indexed `(feature, tick)`. Columns (one tick across all features)
//! are contiguous because the environment and predictors consume state one
//! tick at a time.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    n_features: usize,
    n_ticks: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn filled(n_features: usize, n_ticks: usize, value: f64) -> Self {
        Self {
            n_features,
            n_ticks,
            data: vec![value; n_features * n_ticks],
        }
    }

    pub fn zeros(n_features: usize, n_ticks: usize) -> Self {
        Self::filled(n_features, n_ticks, 0.0)
    }

    /// Builds from per-feature rows, `rows[k][t]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_features = rows.len();
        let n_ticks = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_ticks), "ragged rows");
        let mut m = Self::zeros(n_features, n_ticks);
        for (k, row) in rows.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                m.set(k, t, v);
            }
        }
        m
    }

    pub fn from_columns(n_features: usize, columns: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(n_features * columns.len());
        for c in columns {
            assert_eq!(c.len(), n_features, "column length");
            data.extend_from_slice(c);
        }
        Self {
            n_features,
            n_ticks: columns.len(),
            data,
        }
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn n_ticks(&self) -> usize {
        self.n_ticks
    }

    #[inline]
    pub fn get(&self, k: usize, t: usize) -> f64 {
        self.data[t * self.n_features + k]
    }

    #[inline]
    pub fn set(&mut self, k: usize, t: usize, v: f64) {
        self.data[t * self.n_features + k] = v;
    }

    #[inline]
    pub fn col(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_features..(t + 1) * self.n_features]
    }

    #[inline]
    pub fn col_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.n_features..(t + 1) * self.n_features]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data
            .chunks_exact(self.n_features.max(1))
            .take(self.n_ticks)
    }

    pub fn row(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_ticks).map(move |t| self.get(k, t))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Keeps only the listed feature rows, in the given order.
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        let mut m = Self::zeros(keep.len(), self.n_ticks);
        for t in 0..self.n_ticks {
            for (i, &k) in keep.iter().enumerate() {
                m.set(i, t, self.get(k, t));
            }
        }
        m
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }
}

/// Boolean acquisition decisions, `(feature, tick)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMatrix {
    n_features: usize,
    n_ticks: usize,
    data: Vec<bool>,
}

impl ActionMatrix {
    pub fn new(n_features: usize, n_ticks: usize) -> Self {
        Self {
            n_features,
            n_ticks,
            data: vec![false; n_features * n_ticks],
        }
    }

    pub fn filled(n_features: usize, n_ticks: usize, value: bool) -> Self {
        Self {
            n_features,
            n_ticks,
            data: vec![value; n_features * n_ticks],
        }
    }

    pub fn from_columns(n_features: usize, columns: &[Vec<bool>]) -> Self {
        let mut data = Vec::with_capacity(n_features * columns.len());
        for c in columns {
            assert_eq!(c.len(), n_features, "column length");
            data.extend_from_slice(c);
        }
        Self {
            n_features,
            n_ticks: columns.len(),
            data,
        }
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn n_ticks(&self) -> usize {
        self.n_ticks
    }

    #[inline]
    pub fn get(&self, k: usize, t: usize) -> bool {
        self.data[t * self.n_features + k]
    }

    #[inline]
    pub fn set(&mut self, k: usize, t: usize, v: bool) {
        self.data[t * self.n_features + k] = v;
    }

    #[inline]
    pub fn col(&self, t: usize) -> &[bool] {
        &self.data[t * self.n_features..(t + 1) * self.n_features]
    }

    #[inline]
    pub fn col_mut(&mut self, t: usize) -> &mut [bool] {
        &mut self.data[t * self.n_features..(t + 1) * self.n_features]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&a| a).count()
    }
}
