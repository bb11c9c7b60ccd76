//! Reconstruction and classification scores.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("label {label} outside 1..={r}")]
    Label { label: usize, r: usize },
    #[error("invalid threshold grid: {0}")]
    Grid(String),
    #[error("score vector is not a probability vector (instance {instance}, draw {draw})")]
    NotSimplex { instance: usize, draw: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeL2 {
    pub mean: f64,
    pub evaluated: usize,
    /// Instances whose truth is identically zero (undefined ratio).
    pub excluded: Vec<usize>,
}

/// Mean over instances of `||pred - truth|| / ||truth||`.
pub fn relative_l2<P, Q, A, B>(predictions: &[A], truths: &[B]) -> Result<RelativeL2, MetricsError>
where
    P: Copy + Into<f64>,
    Q: Copy + Into<f64>,
    A: AsRef<[P]>,
    B: AsRef<[Q]>,
{
    if predictions.len() != truths.len() {
        return Err(MetricsError::Length(format!(
            "{} predictions, {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut excluded = Vec::new();
    for (i, (p, t)) in predictions.iter().zip(truths).enumerate() {
        let (p, t) = (p.as_ref(), t.as_ref());
        if p.len() != t.len() {
            return Err(MetricsError::Length(format!(
                "instance {i}: prediction has {} cells, truth {}",
                p.len(),
                t.len()
            )));
        }
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (&a, &b) in p.iter().zip(t) {
            let (a, b): (f64, f64) = (a.into(), b.into());
            num += (a - b) * (a - b);
            den += b * b;
        }
        if den == 0.0 {
            excluded.push(i);
            continue;
        }
        sum += (num / den).sqrt();
        evaluated += 1;
    }
    let mean = if evaluated == 0 { f64::NAN } else { sum / evaluated as f64 };
    Ok(RelativeL2 {
        mean,
        evaluated,
        excluded,
    })
}

/// Rows are true classes, columns predicted classes (both 1-based labels).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], r: usize) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::Length(format!(
            "{} true labels, {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut counts = vec![vec![0u64; r]; r];
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label == 0 || label > r {
                return Err(MetricsError::Label { label, r });
            }
        }
        counts[t - 1][p - 1] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// `(fpr, tpr)` when everything with `score >= threshold` is called positive.
pub fn roc_point(scores: &[f64], positive: &[bool], threshold: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut p, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &pos) in scores.iter().zip(positive) {
        let hit = s >= threshold;
        if pos {
            p += 1;
            tp += usize::from(hit);
        } else {
            n += 1;
            fp += usize::from(hit);
        }
    }
    (fp as f64 / n as f64, tp as f64 / p as f64)
}

/// Exact ROC vertices over a full threshold sweep, from `(0, 0)` to `(1, 1)`.
pub fn roc_vertices(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64)> {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    let n = positive.len() as f64 - p;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if positive[order[k]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k += 1;
        }
        pts.push((fp / n, tp / p));
    }
    pts
}

/// TPR at each grid FPR: linear between vertices, the highest TPR where
/// several vertices share an FPR.
fn interpolate(vertices: &[(f64, f64)], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&f| {
            let mut best = 0.0f64;
            for w in vertices.windows(2) {
                let ((f0, t0), (f1, t1)) = (w[0], w[1]);
                if f0 <= f && f <= f1 {
                    let t = if f1 > f0 { t0 + (t1 - t0) * (f - f0) / (f1 - f0) } else { t0.max(t1) };
                    best = best.max(t);
                }
            }
            best
        })
        .collect()
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// 1-based class, or 0 for the macro average.
    pub class: usize,
    pub fpr: Vec<f64>,
    pub tpr_mean: Vec<f64>,
    pub tpr_std: Vec<f64>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ClassRoc {
    Defined(RocCurve),
    /// The class has no positive or no negative instances.
    Undefined { class: usize, reason: String },
}

impl ClassRoc {
    pub fn curve(&self) -> Option<&RocCurve> {
        match self {
            ClassRoc::Defined(c) => Some(c),
            ClassRoc::Undefined { .. } => None,
        }
    }
}

pub fn default_fpr_grid(points: usize) -> Vec<f64> {
    let k = points.max(2) - 1;
    (0..=k).map(|i| i as f64 / k as f64).collect()
}

/// One-vs-rest ROC per class with Monte-Carlo bands.
///
/// `scores[i][d]` is the probability vector of instance `i` under draw `d`.
/// Each draw gives its own ROC per class; the curves are averaged at the
/// grid FPRs and the AUC is the trapezoid area under the mean curve.
pub fn roc_ovr(
    scores: &[Vec<Vec<f64>>],
    truth: &[usize],
    fpr_grid: &[f64],
) -> Result<Vec<ClassRoc>, MetricsError> {
    if scores.len() != truth.len() {
        return Err(MetricsError::Length(format!(
            "{} score lists, {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if fpr_grid.len() < 2
        || fpr_grid[0] != 0.0
        || *fpr_grid.last().unwrap() != 1.0
        || fpr_grid.windows(2).any(|w| !(w[0] < w[1]))
    {
        return Err(MetricsError::Grid("must increase strictly from 0 to 1".into()));
    }
    let draws = scores.first().map_or(0, Vec::len);
    let r = scores.first().and_then(|s| s.first()).map_or(0, Vec::len);
    for (i, inst) in scores.iter().enumerate() {
        if inst.len() != draws || draws == 0 {
            return Err(MetricsError::Length(format!("instance {i} has {} draws", inst.len())));
        }
        for (d, v) in inst.iter().enumerate() {
            let sum: f64 = v.iter().sum();
            if v.len() != r || !((sum - 1.0).abs() <= 1e-4) {
                return Err(MetricsError::NotSimplex { instance: i, draw: d });
            }
        }
    }
    for &t in truth {
        if t == 0 || t > r {
            return Err(MetricsError::Label { label: t, r });
        }
    }
    let mut out = Vec::with_capacity(r);
    for class in 1..=r {
        let positive: Vec<bool> = truth.iter().map(|&t| t == class).collect();
        let n_pos = positive.iter().filter(|&&b| b).count();
        if n_pos == 0 || n_pos == truth.len() {
            out.push(ClassRoc::Undefined {
                class,
                reason: if n_pos == 0 { "no positive instances" } else { "no negative instances" }.into(),
            });
            continue;
        }
        let curves: Vec<Vec<f64>> = (0..draws)
            .map(|d| {
                let s: Vec<f64> = scores.iter().map(|inst| inst[d][class - 1]).collect();
                interpolate(&roc_vertices(&s, &positive), fpr_grid)
            })
            .collect();
        let (tpr_mean, tpr_std) = mean_std(&curves, fpr_grid.len());
        out.push(ClassRoc::Defined(RocCurve {
            class,
            auc: trapezoid(fpr_grid, &tpr_mean),
            fpr: fpr_grid.to_vec(),
            tpr_mean,
            tpr_std,
        }));
    }
    Ok(out)
}

fn mean_std(curves: &[Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    let n = curves.len() as f64;
    let mean: Vec<f64> = (0..len).map(|g| curves.iter().map(|c| c[g]).sum::<f64>() / n).collect();
    let std = (0..len)
        .map(|g| {
            if curves.len() < 2 {
                return 0.0;
            }
            let ss: f64 = curves.iter().map(|c| (c[g] - mean[g]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    (mean, std)
}

/// Average of the defined per-class curves (band: average of the class bands).
pub fn macro_average(curves: &[ClassRoc]) -> Option<RocCurve> {
    let defined: Vec<&RocCurve> = curves.iter().filter_map(ClassRoc::curve).collect();
    let first = defined.first()?;
    let k = defined.len() as f64;
    let g = first.fpr.len();
    let tpr_mean: Vec<f64> = (0..g).map(|i| defined.iter().map(|c| c.tpr_mean[i]).sum::<f64>() / k).collect();
    let tpr_std: Vec<f64> = (0..g).map(|i| defined.iter().map(|c| c.tpr_std[i]).sum::<f64>() / k).collect();
    Some(RocCurve {
        class: 0,
        auc: trapezoid(&first.fpr, &tpr_mean),
        fpr: first.fpr.clone(),
        tpr_mean,
        tpr_std,
    })
}
