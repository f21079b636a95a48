//! Metrics, activation maps, cost-loss curves and a small SVG renderer.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{EpisodeData, Task};
use crate::env::{episode_rng, roll_episode, AcquisitionPolicy, SynthMode};
use crate::{Error, Result};

pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "mae over {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).abs())
        .sum::<f64>()
        / preds.len() as f64)
}

/// Mann-Whitney AUROC with ties counted one half. Labels are -1/+1.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(
            "auroc scores and labels differ in length".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Data("auroc needs both classes".into()));
    }
    // Sum of positive ranks with midranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k] > 0.0).count() as f64;
        i = j + 1;
    }
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// MAE for regression, `1 - AUROC` for classification.
pub fn task_loss(task: Task, preds: &[f64], labels: &[f64]) -> Result<f64> {
    match task {
        Task::Regression => mae(preds, labels),
        Task::Classification => Ok(1.0 - auroc(preds, labels)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub feature_names: Vec<String>,
    /// `values[k][t]`: fetch frequency of feature `k` at tick `t`.
    pub values: Vec<Vec<f64>>,
    /// Feature indices by decreasing mean activation.
    pub order: Vec<usize>,
}

impl ActivationMap {
    pub fn mean_activation(&self, k: usize) -> f64 {
        let row = &self.values[k];
        if row.is_empty() {
            0.0
        } else {
            row.iter().sum::<f64>() / row.len() as f64
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let t_max = self.values.first().map_or(0, Vec::len);
        let mut header = vec!["feature".to_string()];
        header.extend((0..t_max).map(|t| format!("t{t}")));
        w.write_record(&header)?;
        for &k in &self.order {
            let mut rec = vec![self.feature_names[k].clone()];
            rec.extend(self.values[k].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut feature_names = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut it = rec.iter();
            feature_names.push(it.next().unwrap_or_default().to_string());
            let row = it
                .map(|v| {
                    v.parse::<f64>().map_err(|e| Error::Parse {
                        path: path.to_path_buf(),
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            values.push(row);
        }
        let order = (0..feature_names.len()).collect();
        Ok(Self {
            feature_names,
            values,
            order,
        })
    }
}

/// Empirical fetch frequencies over `episodes` (and `n_rollouts` samplings
/// each in sample mode), truncated to `t_max` ticks. Ticks beyond an
/// episode's end do not count toward the denominator.
pub fn activation_map<P>(
    policy: &P,
    episodes: &[EpisodeData],
    feature_names: &[String],
    t_max: usize,
    mode: SynthMode,
    seed: u64,
    n_rollouts: usize,
) -> Result<ActivationMap>
where
    P: AcquisitionPolicy,
{
    if t_max == 0 {
        return Err(Error::Config("t_max must be at least 1".into()));
    }
    let n_f = policy.n_features();
    let mut hits = vec![vec![0.0; t_max]; n_f];
    let mut counts = vec![0.0; t_max];
    let reps = if mode == SynthMode::Sample {
        n_rollouts.max(1)
    } else {
        1
    };
    for (i, e) in episodes.iter().enumerate() {
        for r in 0..reps {
            let mut rng = episode_rng(seed, i * reps + r);
            let roll = roll_episode(e, policy, mode, false, &mut rng);
            for t in 0..roll.actions.n_ticks().min(t_max) {
                counts[t] += 1.0;
                for (k, &a) in roll.actions.col(t).iter().enumerate() {
                    hits[k][t] += f64::from(u8::from(a));
                }
            }
        }
    }
    let values: Vec<Vec<f64>> = hits
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(&counts)
                .map(|(h, c)| if *c > 0.0 { h / c } else { 0.0 })
                .collect()
        })
        .collect();
    let mut map = ActivationMap {
        feature_names: feature_names.to_vec(),
        values,
        order: Vec::new(),
    };
    let mut order: Vec<usize> = (0..n_f).collect();
    order.sort_by(|&a, &b| {
        map.mean_activation(b)
            .total_cmp(&map.mean_activation(a))
            .then(a.cmp(&b))
    });
    map.order = order;
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub target_c_max: f64,
    pub achieved_cost: f64,
    pub loss: f64,
    pub seed: u64,
}

/// Groups points by method (first-seen order) and sorts each group by
/// achieved cost.
pub fn assemble_curve(points: &[CurvePoint]) -> Vec<(String, Vec<CurvePoint>)> {
    let mut groups: Vec<(String, Vec<CurvePoint>)> = Vec::new();
    for p in points {
        match groups.iter_mut().find(|(m, _)| *m == p.method) {
            Some((_, g)) => g.push(p.clone()),
            None => groups.push((p.method.clone(), vec![p.clone()])),
        }
    }
    for (_, g) in &mut groups {
        g.sort_by(|a, b| a.achieved_cost.total_cmp(&b.achieved_cost));
    }
    groups
}

/// Curve CSV; the leading comment records the intended log-10 cost axis.
pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut out = String::from(
        "# x_axis=log10(achieved_cost)\nmethod,target_c_max,achieved_cost,loss,seed\n",
    );
    for (_, group) in assemble_curve(points) {
        for p in group {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.method, p.target_c_max, p.achieved_cost, p.loss, p.seed
            )
            .unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

const PALETTE: [&str; 6] = [
    "#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6b4c9a", "#444444",
];

/// Heatmap of an activation map, rows in display order.
pub fn activation_svg(map: &ActivationMap) -> String {
    let cell = 12.0;
    let label_w = 150.0;
    let t_max = map.values.first().map_or(0, Vec::len);
    let w = label_w + cell * t_max as f64 + 10.0;
    let h = cell * map.order.len() as f64 + 30.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    for (row, &k) in map.order.iter().enumerate() {
        let y = row as f64 * cell;
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            label_w - 4.0,
            y + cell - 2.0,
            escape(&map.feature_names[k])
        )
        .unwrap();
        for (t, v) in map.values[k].iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            writeln!(
                s,
                "<rect x=\"{}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\"/>",
                label_w + t as f64 * cell
            )
            .unwrap();
        }
    }
    writeln!(s, "<text x=\"{label_w}\" y=\"{}\">tick</text>", h - 8.0).unwrap();
    s.push_str("</svg>\n");
    s
}

/// Cost-loss curves with a log-10 cost axis.
pub fn curve_svg(points: &[CurvePoint]) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let groups = assemble_curve(points);
    let xs: Vec<f64> = points
        .iter()
        .map(|p| p.achieved_cost.max(1e-6).log10())
        .collect();
    let ys: Vec<f64> = points.iter().map(|p| p.loss).collect();
    let bounds = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = bounds(&xs);
    let (y0, y1) = bounds(&ys);
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    writeln!(
        s,
        "<line x1=\"{m}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/><line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{0}\" stroke=\"black\"/>",
        h - m,
        w - m
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">log10 cost per tick</text>",
        w / 2.0,
        h - 12.0
    )
    .unwrap();
    writeln!(s, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {0})\" text-anchor=\"middle\">loss</text>", h / 2.0).unwrap();
    for (i, (method, g)) in groups.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = g
            .iter()
            .map(|p| {
                format!(
                    "{:.2},{:.2}",
                    px(p.achieved_cost.max(1e-6).log10()),
                    py(p.loss)
                )
            })
            .collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>",
            path.join(" ")
        )
        .unwrap();
        for p in g {
            writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                px(p.achieved_cost.max(1e-6).log10()),
                py(p.loss)
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            w - m - 90.0,
            m + 14.0 * i as f64,
            escape(method)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
