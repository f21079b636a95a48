//! Resampling, standardization and subject-level splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSplits, EpisodeData, RawSubject, Task};
use crate::matrix::FeatureMatrix;
use crate::{Error, Result};

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.68, 0.12, 0.20);

/// Piecewise-linear interpolant with constant extension past either end.
fn interp(stream: &[(f64, f64)], t: f64) -> f64 {
    let first = stream[0];
    let last = stream[stream.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let hi = stream.partition_point(|&(ts, _)| ts <= t);
    let (t0, v0) = stream[hi - 1];
    let (t1, v1) = stream[hi];
    if t1 == t0 {
        return v1;
    }
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// Last observation at or before `t`, or the first observation before the
/// stream starts.
fn hold(stream: &[(f64, f64)], t: f64) -> f64 {
    let i = stream.partition_point(|&(ts, _)| ts <= t);
    stream[i.saturating_sub(1)].1
}

/// Number of grid points `0, tick, 2 tick, ...` inside a span.
pub fn grid_len(span: f64, tick_hours: f64) -> usize {
    (span / tick_hours + 1e-9).floor() as usize + 1
}

/// Resamples one subject onto a uniform grid starting at its first event.
///
/// Features are linearly interpolated with the first/last value held outside
/// the observed range. Classification labels are held (zero-order) so they
/// stay in `{-1, +1}`.
pub fn interpolate_to_ticks(raw: &RawSubject, tick_hours: f64, task: Task) -> Result<EpisodeData> {
    if !(tick_hours > 0.0 && tick_hours.is_finite()) {
        return Err(Error::Config("tick_hours must be positive".into()));
    }
    let (start, end) = raw
        .time_span()
        .ok_or_else(|| Error::Data(format!("subject {} has no events", raw.subject_id)))?;
    let n_t = grid_len(end - start, tick_hours);
    if n_t < 2 {
        return Err(Error::Data(format!(
            "subject {} spans fewer than 2 ticks",
            raw.subject_id
        )));
    }
    let imputation = |feature: String| Error::Imputation {
        subject: raw.subject_id.clone(),
        feature,
    };
    let times: Vec<f64> = (0..n_t).map(|i| start + i as f64 * tick_hours).collect();

    let mut rows = Vec::with_capacity(raw.streams.len());
    for (k, stream) in raw.streams.iter().enumerate() {
        if stream.is_empty() {
            return Err(imputation(format!("#{k}")));
        }
        rows.push(times.iter().map(|&t| interp(stream, t)).collect::<Vec<_>>());
    }
    if raw.label.is_empty() {
        return Err(imputation("label".into()));
    }
    let y = match task {
        Task::Regression => times.iter().map(|&t| interp(&raw.label, t)).collect(),
        Task::Classification => times
            .iter()
            .map(|&t| if hold(&raw.label, t) > 0.0 { 1.0 } else { -1.0 })
            .collect(),
    };
    let x = if rows.is_empty() {
        FeatureMatrix::zeros(0, n_t)
    } else {
        FeatureMatrix::from_rows(&rows)
    };
    Ok(EpisodeData {
        subject_id: raw.subject_id.clone(),
        x,
        y,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Retained features, in output order.
    pub features: Vec<FeatureNorm>,
    /// Zero-variance features removed from every split.
    pub dropped: Vec<String>,
}

impl NormStats {
    pub fn normalize_value(&self, k: usize, v: f64) -> f64 {
        let f = &self.features[k];
        (v - f.mean) / f.std
    }

    pub fn denormalize_value(&self, k: usize, v: f64) -> f64 {
        let f = &self.features[k];
        v * f.std + f.mean
    }
}

/// Standardizes every split with training-split statistics.
///
/// Statistics pool every tick of every training subject (population std).
/// Features with zero training variance are dropped from all splits.
pub fn normalize(splits: &DatasetSplits) -> Result<DatasetSplits> {
    if splits.train.is_empty() {
        return Err(Error::Data(
            "cannot normalize with an empty training split".into(),
        ));
    }
    let n_f = splits.n_features();
    let mut sum = vec![0.0; n_f];
    let mut count = 0usize;
    for e in &splits.train {
        for col in e.x.columns() {
            for (s, v) in sum.iter_mut().zip(col) {
                *s += v;
            }
        }
        count += e.n_ticks();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; n_f];
    for e in &splits.train {
        for col in e.x.columns() {
            for k in 0..n_f {
                sq[k] += (col[k] - mean[k]).powi(2);
            }
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();

    let mut keep = Vec::new();
    let mut features = Vec::new();
    let mut dropped = Vec::new();
    for k in 0..n_f {
        let scale = mean[k].abs().max(1.0);
        if std[k] > 1e-12 * scale {
            keep.push(k);
            features.push(FeatureNorm {
                name: splits.specs[k].name.clone(),
                mean: mean[k],
                std: std[k],
            });
        } else {
            log::warn!("dropping zero-variance feature `{}`", splits.specs[k].name);
            dropped.push(splits.specs[k].name.clone());
        }
    }

    let mut out = splits.select_features(&keep);
    for e in out
        .train
        .iter_mut()
        .chain(&mut out.val)
        .chain(&mut out.test)
    {
        for t in 0..e.n_ticks() {
            for (i, f) in features.iter().enumerate() {
                let v = e.x.get(i, t);
                e.x.set(i, t, (v - f.mean) / f.std);
            }
        }
    }
    out.norm_stats = Some(NormStats { features, dropped });
    Ok(out)
}

/// Random subject-level partition, deterministic given `seed`.
pub fn split(data: Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplits> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let n = data.episodes.len();
    if n < 3 {
        return Err(Error::Data(format!(
            "need at least 3 subjects to split, got {n}"
        )));
    }
    for e in &data.episodes {
        e.validate(data.task)?;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = ((a * n as f64).round() as usize).clamp(1, n - 2);
    let n_val = ((b * n as f64).round() as usize).clamp(1, n - n_train - 1);

    let mut slots: Vec<Option<EpisodeData>> = data.episodes.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<EpisodeData> {
        idx.iter()
            .map(|&i| slots[i].take().expect("each index once"))
            .collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok(DatasetSplits {
        task: data.task,
        specs: data.specs,
        train,
        val,
        test,
        norm_stats: None,
    })
}
