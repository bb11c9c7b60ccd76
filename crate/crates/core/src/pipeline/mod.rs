//! Raw pressure series to training instances `(x, y, m)`: down-sampling,
//! time differencing, extreme-value filtering, one-hot labels, well sampling
//! and the test-first random split.

mod io;

pub use io::{
    read_dataset, read_series_dir, write_dataset, write_series_dir, DatasetManifest,
    ScenarioMeta, SeriesManifest, DATASET_FORMAT_VERSION,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::leaksim::PressureSeries;
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("need at least two frames, got {0}")]
    TooFewFrames(usize),
    #[error("class index {index} out of range 1..={r}")]
    ClassOutOfRange { index: usize, r: usize },
    #[error("well ({0}, {1}) is outside the grid")]
    WellOutOfBounds(usize, usize),
    #[error("invalid well set: {0}")]
    Wells(String),
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error("dataset format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major 2D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, PipelineError> {
        if data.len() != rows * cols {
            return Err(PipelineError::Shape(format!(
                "{rows}x{cols} grid needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }
}

/// Output shape of the 486x478 -> 160x160 reduction.
pub const PAPER_GRID: (usize, usize) = (160, 160);
pub const DOWNSAMPLE_STRIDE: usize = 3;

/// Keep every third point in both directions, then crop trailing rows and
/// columns down to `target`: `out[a][b] = input[3a][3b]`.
///
/// For the 486x478 simulation grid the strided grid has one axis of 162 points,
/// whose last two entries are dropped to reach 160x160.
pub fn downsample<T: Copy>(field: &Grid<T>, target: (usize, usize)) -> Result<Grid<T>, PipelineError> {
    let s = DOWNSAMPLE_STRIDE;
    let strided = (field.rows.div_ceil(s), field.cols.div_ceil(s));
    if target.0 == 0 || target.1 == 0 || strided.0 < target.0 || strided.1 < target.1 {
        return Err(PipelineError::Shape(format!(
            "{}x{} input gives a {}x{} strided grid, too small for {}x{}",
            field.rows, field.cols, strided.0, strided.1, target.0, target.1
        )));
    }
    let mut data = Vec::with_capacity(target.0 * target.1);
    for a in 0..target.0 {
        let row = &field.data[s * a * field.cols..(s * a + 1) * field.cols];
        data.extend((0..target.1).map(|b| row[s * b]));
    }
    Grid::new(target.0, target.1, data)
}

/// Successive differences `p[t+1] - p[t]` of the stored frames.
pub fn incremental(series: &PressureSeries) -> Result<Vec<Vec<f64>>, PipelineError> {
    if series.frames.len() < 2 {
        return Err(PipelineError::TooFewFrames(series.frames.len()));
    }
    Ok(series
        .frames
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
        .collect())
}

/// Ordered monitoring-well coordinates; the order defines the components of `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WellSet {
    coords: Vec<(usize, usize)>,
}

impl WellSet {
    pub fn new(coords: Vec<(usize, usize)>) -> Result<Self, PipelineError> {
        if coords.is_empty() {
            return Err(PipelineError::Wells("no wells".into()));
        }
        for (i, a) in coords.iter().enumerate() {
            if coords[..i].contains(a) {
                return Err(PipelineError::Wells(format!(
                    "duplicate well ({}, {})",
                    a.0, a.1
                )));
            }
        }
        Ok(WellSet { coords })
    }

    /// Monitoring wells on the 160x160 grid.
    pub fn paper() -> Self {
        WellSet {
            coords: vec![(117, 58), (97, 97), (107, 87), (87, 50), (58, 83)],
        }
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn check_bounds(&self, rows: usize, cols: usize) -> Result<(), PipelineError> {
        match self.coords.iter().find(|(r, c)| *r >= rows || *c >= cols) {
            Some(&(r, c)) => Err(PipelineError::WellOutOfBounds(r, c)),
            None => Ok(()),
        }
    }
}

/// Read the field at each well, `m = C x` for the selection matrix `C`.
pub fn sample_wells<T: Copy>(
    x: &[T],
    cols: usize,
    wells: &WellSet,
) -> Result<Vec<T>, PipelineError> {
    let rows = if cols == 0 { 0 } else { x.len() / cols };
    wells.check_bounds(rows, cols)?;
    Ok(wells.coords.iter().map(|&(r, c)| x[r * cols + c]).collect())
}

/// Length-`r` indicator vector of the 1-based `class_index`.
pub fn one_hot(class_index: usize, r: usize) -> Result<Vec<f32>, PipelineError> {
    if class_index == 0 || class_index > r {
        return Err(PipelineError::ClassOutOfRange {
            index: class_index,
            r,
        });
    }
    let mut y = vec![0.0; r];
    y[class_index - 1] = 1.0;
    Ok(y)
}

/// One training triple on a `grid_h x grid_w` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Incremental pressure, row-major.
    pub x: Vec<f32>,
    /// Class probability vector.
    pub y: Vec<f32>,
    /// Incremental pressure at the wells.
    pub m: Vec<f32>,
    pub scenario_id: u32,
    /// Index `t` of the difference `p[t+1] - p[t]`.
    pub step: u32,
}

impl Instance {
    pub fn max_abs(&self) -> f32 {
        self.x.iter().fold(0.0f32, |a, v| a.max(v.abs()))
    }

    /// 1-based index of the largest entry of `y` (lowest index on ties).
    pub fn class_index(&self) -> usize {
        let mut best = 0;
        for (j, v) in self.y.iter().enumerate() {
            if *v > self.y[best] {
                best = j;
            }
        }
        best + 1
    }
}

/// Keep the instances whose largest absolute value is at most `threshold`.
pub fn filter_extremes(instances: Vec<Instance>, threshold: f64) -> Vec<Instance> {
    instances
        .into_iter()
        .filter(|i| f64::from(i.max_abs()) <= threshold)
        .collect()
}

/// Instances of one scenario from its frames (already on the model grid).
pub fn scenario_instances<I>(
    frames: I,
    cols: usize,
    scenario_id: u32,
    class_index: usize,
    n_classes: usize,
    wells: &WellSet,
) -> Result<Vec<Instance>, PipelineError>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let y = one_hot(class_index, n_classes)?;
    let mut out = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    for (t, frame) in frames.into_iter().enumerate() {
        if let Some(p) = &prev {
            if p.len() != frame.len() {
                return Err(PipelineError::Shape("frames differ in size".into()));
            }
            let x: Vec<f32> = frame.iter().zip(p).map(|(b, a)| (b - a) as f32).collect();
            let m = sample_wells(&x, cols, wells)?;
            out.push(Instance {
                x,
                y: y.clone(),
                m,
                scenario_id,
                step: (t - 1) as u32,
            });
        }
        prev = Some(frame);
    }
    if prev.is_none() || out.is_empty() {
        return Err(PipelineError::TooFewFrames(out.len().min(1)));
    }
    Ok(out)
}

/// Train/validation/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

pub type DatasetSplit = Split<Instance>;

impl<T> Split<T> {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        match name {
            "train" => Some(&self.train),
            "val" | "validation" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Split sizes: the test share is taken first (rounded up), then the
/// validation share of the remainder (rounded up); training gets the rest.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize), PipelineError> {
    let (tr, va, te) = fractions;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) {
        return Err(PipelineError::Fractions(format!(
            "{fractions:?} must all be positive"
        )));
    }
    if ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(PipelineError::Fractions(format!(
            "{fractions:?} sum to {}",
            tr + va + te
        )));
    }
    let up = |v: f64| (v - 1e-9).ceil().max(0.0) as usize;
    let n_test = up(te * n as f64).min(n);
    let rest = n - n_test;
    let n_val = up(va / (tr + va) * rest as f64).min(rest);
    Ok((rest - n_val, n_val, n_test))
}

/// Seeded uniform partition. Each part keeps the input order.
pub fn split<T>(items: Vec<T>, fractions: (f64, f64, f64), seed: u64) -> Result<Split<T>, PipelineError> {
    let n = items.len();
    let (_, n_val, n_test) = split_sizes(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    // 0 = train, 1 = val, 2 = test
    let mut part = vec![0u8; n];
    for &i in &order[..n_test] {
        part[i] = 2;
    }
    for &i in &order[n_test..n_test + n_val] {
        part[i] = 1;
    }
    let mut out = Split {
        train: Vec::with_capacity(n - n_val - n_test),
        val: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n_test),
        fractions,
        seed,
    };
    for (item, p) in items.into_iter().zip(part) {
        match p {
            2 => out.test.push(item),
            1 => out.val.push(item),
            _ => out.train.push(item),
        }
    }
    Ok(out)
}
