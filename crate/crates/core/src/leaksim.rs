//! Synthetic leak scenarios: explicit finite-volume pressure diffusion on a
//! heterogeneous single-layer grid with a point source at the leaky well.
//!
//! Cell `i` has diffusivity `D_i = scale * k_i / phi_i`. Faces between two
//! active cells carry the harmonic mean of their diffusivities; faces touching
//! an inactive cell or the domain boundary carry no flux. One integration step
//! is
//!
//! ```text
//! p_i += dt / h^2 * sum_faces D_f (p_j - p_i) + dt * q / h^2 * [i == leak]
//! ```
//!
//! so `sum_i (p_i - p0) * h^2` grows by exactly `q * dt` per step.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seed;

/// Pressure held by inactive (shale) cells for the whole run.
pub const INACTIVE_PRESSURE: f64 = 0.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid heterogeneity parameters: {0}")]
    Params(String),
    #[error("cell ({0}, {1}) is outside the grid")]
    OutOfBounds(usize, usize),
    #[error("{what} at ({row}, {col}) lies on an inactive cell")]
    Inactive {
        what: &'static str,
        row: usize,
        col: usize,
    },
    #[error("time step {dt} exceeds the stability bound {bound}")]
    Unstable { dt: f64, bound: f64 },
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermeabilityModel {
    pub grid_h: usize,
    pub grid_w: usize,
    /// mD, row-major.
    pub permeability: Vec<f64>,
    pub porosity: Vec<f64>,
    /// `false` marks a nullified shale cell.
    pub active: Vec<bool>,
}

impl PermeabilityModel {
    /// Fully active model with constant properties.
    pub fn homogeneous(grid_h: usize, grid_w: usize, permeability: f64, porosity: f64) -> Self {
        let n = grid_h * grid_w;
        PermeabilityModel {
            grid_h,
            grid_w,
            permeability: vec![permeability; n],
            porosity: vec![porosity; n],
            active: vec![true; n],
        }
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.grid_w + col
    }

    pub fn in_bounds(&self, (row, col): (usize, usize)) -> bool {
        row < self.grid_h && col < self.grid_w
    }

    pub fn is_active(&self, (row, col): (usize, usize)) -> bool {
        self.in_bounds((row, col)) && self.active[self.index(row, col)]
    }

    pub fn inactive_count(&self) -> usize {
        self.active.iter().filter(|a| !**a).count()
    }

    /// Per-cell diffusivity `scale * k / phi`; zero on inactive cells.
    pub fn diffusivity(&self, scale: f64) -> Vec<f64> {
        self.permeability
            .iter()
            .zip(&self.porosity)
            .zip(&self.active)
            .map(|((&k, &phi), &a)| if a { scale * k / phi } else { 0.0 })
            .collect()
    }

    /// Reactivate every cell within `radius` (Chebyshev) of `center`. Used to
    /// keep wells and leak points out of shale.
    pub fn clear_around(&mut self, center: (usize, usize), radius: usize) {
        let (r0, c0) = center;
        let (k_ref, phi_ref) = self.reference_properties();
        for r in r0.saturating_sub(radius)..=(r0 + radius).min(self.grid_h.saturating_sub(1)) {
            for c in c0.saturating_sub(radius)..=(c0 + radius).min(self.grid_w.saturating_sub(1)) {
                let i = self.index(r, c);
                if !self.active[i] {
                    self.active[i] = true;
                    self.permeability[i] = k_ref;
                    self.porosity[i] = phi_ref;
                }
            }
        }
    }

    fn reference_properties(&self) -> (f64, f64) {
        let mut n = 0usize;
        let (mut lk, mut phi) = (0.0, 0.0);
        for i in 0..self.active.len() {
            if self.active[i] {
                n += 1;
                lk += self.permeability[i].ln();
                phi += self.porosity[i];
            }
        }
        if n == 0 {
            (1.0, 0.2)
        } else {
            ((lk / n as f64).exp(), phi / n as f64)
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let n = self.grid_h * self.grid_w;
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(SimError::Grid("empty grid".into()));
        }
        if self.permeability.len() != n || self.porosity.len() != n || self.active.len() != n {
            return Err(SimError::Grid("property arrays do not match the grid".into()));
        }
        for i in 0..n {
            if self.active[i]
                && !(self.permeability[i] > 0.0
                    && self.permeability[i].is_finite()
                    && self.porosity[i] > 0.0
                    && self.porosity[i] < 1.0)
            {
                return Err(SimError::Grid(format!(
                    "cell {i} has permeability {} and porosity {}",
                    self.permeability[i], self.porosity[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityParams {
    /// Gaussian smoothing length, in cells.
    pub corr_len: f64,
    /// Mean of ln(permeability / mD).
    pub log_mean: f64,
    pub log_std: f64,
    pub shale_fraction: f64,
}

impl Default for HeterogeneityParams {
    fn default() -> Self {
        HeterogeneityParams {
            corr_len: 3.0,
            log_mean: 100f64.ln(),
            log_std: 0.5,
            shale_fraction: 0.1,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped (edge-replicating) boundaries.
fn smooth(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; field.len()];
    for row in 0..h {
        for col in 0..w {
            tmp[row * w + col] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * field[row * w + clamp(col as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; field.len()];
    for row in 0..h {
        for col in 0..w {
            out[row * w + col] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clamp(row as isize + j as isize - r, h) * w + col])
                .sum();
        }
    }
    out
}

fn standardize(field: &mut [f64]) {
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for v in field.iter_mut() {
        *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
}

/// Smoothed log-normal permeability with porosity tied to it, and shale blobs
/// covering `round(shale_fraction * cells)` cells.
pub fn generate_heterogeneity(
    seed: u64,
    grid_h: usize,
    grid_w: usize,
    params: &HeterogeneityParams,
) -> Result<PermeabilityModel, SimError> {
    if grid_h < 4 || grid_w < 4 {
        return Err(SimError::Grid(format!(
            "grid {grid_h}x{grid_w} is smaller than 4x4"
        )));
    }
    if !(0.0..1.0).contains(&params.shale_fraction) {
        return Err(SimError::Params(format!(
            "shale_fraction {} not in [0, 1)",
            params.shale_fraction
        )));
    }
    if !(params.corr_len > 0.0) || !(params.log_std >= 0.0) || !params.log_mean.is_finite() {
        return Err(SimError::Params(format!("{params:?}")));
    }
    let n = grid_h * grid_w;
    let mut rng = seed::rng(seed);
    let noise = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let perm_noise = noise(&mut rng);
    let shale_noise = noise(&mut rng);

    let mut g = smooth(&perm_noise, grid_h, grid_w, params.corr_len);
    standardize(&mut g);
    let permeability: Vec<f64> = g
        .iter()
        .map(|&z| (params.log_mean + params.log_std * z).exp())
        .collect();
    let porosity: Vec<f64> = g
        .iter()
        .map(|&z| (0.2 * (0.25 * params.log_std * z).exp()).clamp(0.05, 0.4))
        .collect();

    let s = smooth(&shale_noise, grid_h, grid_w, params.corr_len);
    let n_shale = (params.shale_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
    let mut active = vec![true; n];
    for &i in &order[..n_shale] {
        active[i] = false;
    }
    Ok(PermeabilityModel {
        grid_h,
        grid_w,
        permeability,
        porosity,
        active,
    })
}

/// Largest stable explicit step, `h^2 / (4 * D_max)`.
pub fn stability_dt(model: &PermeabilityModel, diffusivity_scale: f64, cell_size: f64) -> f64 {
    let d_max = model
        .diffusivity(diffusivity_scale)
        .into_iter()
        .fold(0.0, f64::max);
    if d_max <= 0.0 {
        return f64::INFINITY;
    }
    cell_size * cell_size / (4.0 * d_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub leak_cell: (usize, usize),
    /// 1-based leakage-rate class.
    pub rate_class: usize,
    /// Volumetric source per unit time.
    pub rate_value: f64,
    /// Number of stored frames, including the initial state.
    pub n_steps: usize,
    /// Integration step.
    pub dt: f64,
    /// Integration steps between stored frames.
    pub substeps: usize,
    pub diffusivity_scale: f64,
    pub cell_size: f64,
    pub initial_pressure: f64,
    pub wells: Vec<(usize, usize)>,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Time between stored frames.
    pub fn frame_interval(&self) -> f64 {
        self.dt * self.substeps as f64
    }

    /// Volume injected up to frame `k`.
    pub fn injected_volume(&self, frame: usize) -> f64 {
        self.rate_value * self.dt * (frame * self.substeps) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureSeries {
    pub spec: ScenarioSpec,
    pub grid_h: usize,
    pub grid_w: usize,
    /// `spec.n_steps` row-major pressure grids; frame 0 is the initial state.
    pub frames: Vec<Vec<f64>>,
}

impl PressureSeries {
    pub fn value(&self, frame: usize, (row, col): (usize, usize)) -> f64 {
        self.frames[frame][row * self.grid_w + col]
    }
}

pub fn validate_scenario(model: &PermeabilityModel, spec: &ScenarioSpec) -> Result<(), SimError> {
    model.validate()?;
    if spec.n_steps < 2 {
        return Err(SimError::Scenario(format!(
            "n_steps = {} but at least 2 frames are needed",
            spec.n_steps
        )));
    }
    if spec.substeps == 0 {
        return Err(SimError::Scenario("substeps must be positive".into()));
    }
    if spec.rate_class == 0 {
        return Err(SimError::Scenario("rate_class is 1-based".into()));
    }
    if !spec.rate_value.is_finite() || !spec.initial_pressure.is_finite() {
        return Err(SimError::Scenario("non-finite rate or initial pressure".into()));
    }
    if !(spec.cell_size > 0.0) || !(spec.diffusivity_scale > 0.0) || !(spec.dt > 0.0) {
        return Err(SimError::Scenario(
            "dt, cell_size and diffusivity_scale must be positive".into(),
        ));
    }
    let check = |what: &'static str, cell: (usize, usize)| {
        if !model.in_bounds(cell) {
            Err(SimError::OutOfBounds(cell.0, cell.1))
        } else if !model.is_active(cell) {
            Err(SimError::Inactive {
                what,
                row: cell.0,
                col: cell.1,
            })
        } else {
            Ok(())
        }
    };
    check("leak", spec.leak_cell)?;
    for &w in &spec.wells {
        check("well", w)?;
    }
    let bound = stability_dt(model, spec.diffusivity_scale, spec.cell_size);
    // allow rounding in a bound computed by the caller
    if spec.dt > bound * (1.0 + 1e-12) {
        return Err(SimError::Unstable {
            dt: spec.dt,
            bound,
        });
    }
    Ok(())
}

/// Run one scenario; frames are stored every `spec.substeps` integration steps.
pub fn simulate_scenario(
    model: &PermeabilityModel,
    spec: &ScenarioSpec,
) -> Result<PressureSeries, SimError> {
    validate_scenario(model, spec)?;
    let (h, w) = (model.grid_h, model.grid_w);
    let d = model.diffusivity(spec.diffusivity_scale);
    let harmonic = |a: f64, b: f64| if a > 0.0 && b > 0.0 { 2.0 * a * b / (a + b) } else { 0.0 };
    // east[i]: face between i and i+1; south[i]: face between i and i+w
    let mut east = vec![0.0; h * w];
    let mut south = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                east[i] = harmonic(d[i], d[i + 1]);
            }
            if r + 1 < h {
                south[i] = harmonic(d[i], d[i + w]);
            }
        }
    }
    let coef = spec.dt / (spec.cell_size * spec.cell_size);
    let leak = model.index(spec.leak_cell.0, spec.leak_cell.1);
    let source = coef * spec.rate_value;

    let mut p: Vec<f64> = model
        .active
        .iter()
        .map(|&a| if a { spec.initial_pressure } else { INACTIVE_PRESSURE })
        .collect();
    let mut next = p.clone();
    let mut frames = Vec::with_capacity(spec.n_steps);
    frames.push(p.clone());
    for _ in 1..spec.n_steps {
        for _ in 0..spec.substeps {
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    if !model.active[i] {
                        continue;
                    }
                    let pi = p[i];
                    let mut flux = 0.0;
                    if c + 1 < w {
                        flux += east[i] * (p[i + 1] - pi);
                    }
                    if c > 0 {
                        flux += east[i - 1] * (p[i - 1] - pi);
                    }
                    if r + 1 < h {
                        flux += south[i] * (p[i + w] - pi);
                    }
                    if r > 0 {
                        flux += south[i - w] * (p[i - w] - pi);
                    }
                    next[i] = pi + coef * flux;
                }
            }
            next[leak] += source;
            std::mem::swap(&mut p, &mut next);
        }
        frames.push(p.clone());
    }
    Ok(PressureSeries {
        spec: spec.clone(),
        grid_h: h,
        grid_w: w,
        frames,
    })
}

/// Run independent scenarios on up to `threads` worker threads. Output order
/// follows `specs`.
pub fn simulate_many(
    model: &PermeabilityModel,
    specs: &[ScenarioSpec],
    threads: usize,
) -> Result<Vec<PressureSeries>, SimError> {
    let threads = threads.clamp(1, specs.len().max(1));
    if threads == 1 {
        return specs.iter().map(|s| simulate_scenario(model, s)).collect();
    }
    let chunk = specs.len().div_ceil(threads);
    let results: Vec<Result<Vec<PressureSeries>, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| simulate_scenario(model, s))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(specs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_for(model: &PermeabilityModel, rate: f64, n_steps: usize) -> ScenarioSpec {
        let dt = stability_dt(model, 1.0, 1.0);
        ScenarioSpec {
            leak_cell: (model.grid_h / 2, model.grid_w / 3),
            rate_class: 1,
            rate_value: rate,
            n_steps,
            dt,
            substeps: 2,
            diffusivity_scale: 1.0,
            cell_size: 1.0,
            initial_pressure: 1500.0,
            wells: vec![(1, 1)],
            seed: 0,
        }
    }

    #[test]
    fn same_seed_same_field() {
        let p = HeterogeneityParams::default();
        let a = generate_heterogeneity(42, 20, 24, &p).unwrap();
        let b = generate_heterogeneity(42, 20, 24, &p).unwrap();
        assert_eq!(a, b);
        let c = generate_heterogeneity(43, 20, 24, &p).unwrap();
        assert_ne!(a.permeability, c.permeability);
    }

    #[test]
    fn zero_log_std_is_uniform() {
        let p = HeterogeneityParams {
            log_std: 0.0,
            log_mean: 3.0,
            ..Default::default()
        };
        let m = generate_heterogeneity(1, 16, 16, &p).unwrap();
        for i in 0..m.active.len() {
            if m.active[i] {
                assert_eq!(m.permeability[i], 3f64.exp());
            }
        }
    }

    #[test]
    fn shale_fraction_is_met() {
        let p = HeterogeneityParams {
            shale_fraction: 0.3,
            ..Default::default()
        };
        let m = generate_heterogeneity(5, 160, 160, &p).unwrap();
        let target = 0.3 * 25600.0;
        let got = m.inactive_count() as f64;
        assert!((got - target).abs() <= 0.1 * target, "{got}");
    }

    #[test]
    fn invalid_heterogeneity_inputs() {
        let bad = HeterogeneityParams {
            shale_fraction: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            generate_heterogeneity(0, 10, 10, &bad),
            Err(SimError::Params(_))
        ));
        assert!(matches!(
            generate_heterogeneity(0, 3, 10, &HeterogeneityParams::default()),
            Err(SimError::Grid(_))
        ));
    }

    #[test]
    fn stability_bound_scaling() {
        let m = PermeabilityModel::homogeneous(8, 8, 1.0, 0.5);
        // D = k / phi = 2 at scale 0.5 -> D = 1
        assert!((stability_dt(&m, 0.5, 1.0) - 0.25).abs() < 1e-15);
        assert!((stability_dt(&m, 0.5, 2.0) - 1.0).abs() < 1e-15);
        assert!((stability_dt(&m, 1.0, 1.0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_keeps_initial_field() {
        let m = generate_heterogeneity(3, 12, 12, &HeterogeneityParams {
            shale_fraction: 0.0,
            ..Default::default()
        })
        .unwrap();
        let s = simulate_scenario(&m, &spec_for(&m, 0.0, 5)).unwrap();
        for f in &s.frames {
            assert_eq!(f, &s.frames[0]);
        }
    }

    #[test]
    fn unstable_dt_and_inactive_leak_rejected() {
        let mut m = PermeabilityModel::homogeneous(8, 8, 1.0, 0.5);
        let mut spec = spec_for(&m, 1.0, 3);
        spec.dt *= 1.01;
        assert!(matches!(
            simulate_scenario(&m, &spec),
            Err(SimError::Unstable { .. })
        ));
        let spec = spec_for(&m, 1.0, 3);
        let leak = m.index(spec.leak_cell.0, spec.leak_cell.1);
        m.active[leak] = false;
        assert!(matches!(
            simulate_scenario(&m, &spec),
            Err(SimError::Inactive { what: "leak", .. })
        ));
    }

    #[test]
    fn mass_balance_every_step() {
        let m = PermeabilityModel::homogeneous(10, 10, 1.0, 0.5);
        let spec = spec_for(&m, 2.5, 40);
        let s = simulate_scenario(&m, &spec).unwrap();
        for (k, f) in s.frames.iter().enumerate() {
            let stored: f64 = f.iter().map(|p| p - 1500.0).sum::<f64>();
            let injected = spec.injected_volume(k);
            if k == 0 {
                assert_eq!(stored, 0.0);
            } else {
                assert!(((stored - injected) / injected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn inactive_cells_hold_sentinel() {
        let m = generate_heterogeneity(9, 16, 16, &HeterogeneityParams {
            shale_fraction: 0.2,
            ..Default::default()
        })
        .unwrap();
        let mut m = m;
        let spec = spec_for(&m, 1.0, 10);
        m.clear_around(spec.leak_cell, 1);
        m.clear_around((1, 1), 0);
        let s = simulate_scenario(&m, &spec).unwrap();
        for f in &s.frames {
            for (i, v) in f.iter().enumerate() {
                if !m.active[i] {
                    assert_eq!(*v, INACTIVE_PRESSURE);
                }
            }
        }
    }

    #[test]
    fn leak_pressure_rises_early() {
        let m = PermeabilityModel::homogeneous(12, 12, 1.0, 0.5);
        let spec = spec_for(&m, 1.0, 11);
        let s = simulate_scenario(&m, &spec).unwrap();
        for k in 1..11 {
            assert!(s.value(k, spec.leak_cell) >= s.value(k - 1, spec.leak_cell));
        }
        for f in &s.frames {
            assert!(f.iter().all(|&p| p >= 1500.0));
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let m = PermeabilityModel::homogeneous(8, 8, 1.0, 0.5);
        let specs: Vec<_> = (1..=3)
            .map(|q| spec_for(&m, q as f64, 6))
            .collect();
        let a = simulate_many(&m, &specs, 1).unwrap();
        let b = simulate_many(&m, &specs, 3).unwrap();
        assert_eq!(a, b);
    }
}
