//! Flat run configuration: defaults, presets, TOML file, then flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,
    pub preset: Option<String>,
    pub seed: u64,
    /// Overrides the seed of the inference stream only.
    pub mc_seed: Option<u64>,

    /// Simulation grid (rows, cols). Downsampled to `target_grid` by stride 3
    /// when larger.
    pub sim_grid: [usize; 2],
    /// Leak locations in model-grid coordinates.
    pub leak_cells: Vec<[usize; 2]>,
    /// Source strength of each class, in class order.
    pub class_rates: Vec<f64>,
    /// Stored frames per scenario, including the initial state.
    pub n_steps: usize,
    pub frame_interval: f64,
    pub diffusivity_scale: f64,
    pub cell_size: f64,
    pub initial_pressure: f64,
    pub corr_len: f64,
    pub log_mean: f64,
    pub log_std: f64,
    pub shale_fraction: f64,
    /// Cells within this distance of leaks and wells are kept active.
    pub clear_radius: usize,
    pub threads: usize,

    pub target_grid: [usize; 2],
    /// Monitoring wells in model-grid coordinates.
    pub wells: Vec<[usize; 2]>,
    pub threshold: f64,
    pub split: [f64; 3],

    pub latent: usize,
    pub alpha: f64,
    pub beta: f64,
    pub mc_samples: usize,
    pub batch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub microbatch: usize,

    pub n_mc: usize,
    pub roc_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: RUN_FORMAT_VERSION,
            preset: None,
            seed: 0,
            mc_seed: None,
            sim_grid: [160, 160],
            leak_cells: vec![[103, 70], [96, 90], [125, 102], [109, 82]],
            class_rates: vec![1.0, 2.0, 3.0, 4.0],
            n_steps: 201,
            frame_interval: 1.0,
            diffusivity_scale: 1.2e-5,
            cell_size: 0.0125,
            initial_pressure: 1500.0,
            corr_len: 3.0,
            log_mean: 100f64.ln(),
            log_std: 0.5,
            shale_fraction: 0.1,
            clear_radius: 1,
            threads: 1,
            target_grid: [160, 160],
            wells: vec![[117, 58], [97, 97], [107, 87], [87, 50], [58, 83]],
            threshold: 5.0,
            split: [0.64, 0.16, 0.20],
            latent: 2,
            alpha: 1.0,
            beta: 1.0,
            mc_samples: 1,
            batch: 128,
            patience: 200,
            max_epochs: 2000,
            lr: 1e-3,
            microbatch: 32,
            n_mc: 100,
            roc_points: 101,
        }
    }
}

pub const PRESETS: [&str; 2] = ["desk", "paper-shape"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let base = RunConfig {
            preset: Some(name.to_string()),
            ..RunConfig::default()
        };
        match name {
            "paper-shape" => Ok(base),
            "desk" => Ok(RunConfig {
                sim_grid: [32, 32],
                target_grid: [32, 32],
                leak_cells: vec![[9, 11], [22, 21]],
                wells: vec![[6, 22], [16, 7], [25, 26]],
                cell_size: 0.0625,
                diffusivity_scale: 4.0e-4,
                patience: 50,
                max_epochs: 500,
                ..base
            }),
            other => Err(CliError::Usage(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Start from `preset` (or the defaults) and apply a TOML file on top.
    /// A `preset` key inside the file is honoured when no preset was given.
    pub fn resolve(preset: Option<&str>, file: Option<&Path>) -> Result<Self, CliError> {
        let text = match file {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
            None => None,
        };
        let table: toml::Table = match &text {
            Some(t) => t
                .parse()
                .map_err(|e| CliError::Data(format!("{}: {e}", file.unwrap().display())))?,
            None => toml::Table::new(),
        };
        let preset = preset
            .map(str::to_string)
            .or_else(|| table.get("preset").and_then(|v| v.as_str()).map(str::to_string));
        let base = match &preset {
            Some(p) => RunConfig::preset(p)?,
            None => RunConfig::default(),
        };
        let mut merged = toml::Table::try_from(&base).expect("config serializes");
        for (k, v) in table {
            merged.insert(k, v);
        }
        let cfg: RunConfig = toml::Value::Table(merged).try_into().map_err(|e| {
            CliError::Usage(format!(
                "{}: {e}",
                file.map(|p| p.display().to_string()).unwrap_or_default()
            ))
        })?;
        if cfg.preset != preset && preset.is_some() {
            return Err(CliError::Usage("conflicting `preset` values".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mc_seed_value(&self) -> u64 {
        self.mc_seed
            .unwrap_or_else(|| azmi_scvae::seed::substream(self.seed, azmi_scvae::seed::MC))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: &str| Err(CliError::Usage(format!("config key `{key}`: {why}")));
        if self.format_version != RUN_FORMAT_VERSION {
            return bad("format_version", "unsupported version");
        }
        if self.class_rates.len() < 2 {
            return bad("class_rates", "need at least two classes");
        }
        if self.leak_cells.is_empty() {
            return bad("leak_cells", "need at least one leak location");
        }
        if self.wells.is_empty() {
            return bad("wells", "need at least one well");
        }
        for (key, g) in [("sim_grid", self.sim_grid), ("target_grid", self.target_grid)] {
            if g[0] == 0 || g[1] == 0 {
                return bad(key, "dimensions must be positive");
            }
        }
        if self.sim_grid != self.target_grid
            && (self.sim_grid[0].div_ceil(3) < self.target_grid[0]
                || self.sim_grid[1].div_ceil(3) < self.target_grid[1])
        {
            return bad("sim_grid", "must equal target_grid or be at least 3x larger");
        }
        for c in self.leak_cells.iter().chain(&self.wells) {
            if c[0] >= self.target_grid[0] || c[1] >= self.target_grid[1] {
                return bad("wells/leak_cells", &format!("{c:?} lies outside target_grid"));
            }
        }
        if self.n_steps < 2 {
            return bad("n_steps", "need at least 2 frames");
        }
        for (key, v) in [
            ("frame_interval", self.frame_interval),
            ("diffusivity_scale", self.diffusivity_scale),
            ("cell_size", self.cell_size),
            ("corr_len", self.corr_len),
            ("threshold", self.threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, "must be positive");
            }
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split", "fractions must be non-negative and sum to 1");
        }
        if self.n_mc < 2 {
            return bad("n_mc", "need at least 2 draws");
        }
        if self.roc_points < 2 {
            return bad("roc_points", "need at least 2 points");
        }
        if self.threads == 0 {
            return bad("threads", "must be positive");
        }
        Ok(())
    }

    /// Stride between model-grid and simulation-grid coordinates.
    pub fn stride(&self) -> usize {
        if self.sim_grid == self.target_grid {
            1
        } else {
            azmi_scvae::pipeline::DOWNSAMPLE_STRIDE
        }
    }

    pub fn hyper(&self) -> azmi_scvae::scvae::HyperParams {
        azmi_scvae::scvae::HyperParams {
            latent_dim: self.latent,
            alpha: self.alpha,
            beta: self.beta,
            mc_samples: self.mc_samples,
            batch_size: self.batch,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed: self.seed,
            adam: azmi_scvae::nn::AdamConfig {
                lr: self.lr,
                ..azmi_scvae::nn::AdamConfig::default()
            },
            microbatch: self.microbatch,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_carry_reference_values() {
        let c = RunConfig::default();
        assert_eq!(c.wells.len(), 5);
        assert_eq!(c.leak_cells.len(), 4);
        assert_eq!(c.class_rates.len(), 4);
        assert_eq!((c.threshold, c.split), (5.0, [0.64, 0.16, 0.20]));
        assert_eq!((c.latent, c.batch, c.patience, c.n_mc), (2, 128, 200, 100));
        c.validate().unwrap();
    }

    #[test]
    fn desk_preset() {
        let c = RunConfig::preset("desk").unwrap();
        assert_eq!(c.target_grid, [32, 32]);
        assert_eq!((c.leak_cells.len(), c.wells.len(), c.n_steps - 1), (2, 3, 200));
        assert_eq!((c.patience, c.max_epochs), (50, 500));
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn file_overrides_preset_and_unknown_keys_fail() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "preset = \"desk\"\nseed = 9\nwells = [[1, 2], [3, 4]]").unwrap();
        let c = RunConfig::resolve(None, Some(f.path())).unwrap();
        assert_eq!((c.seed, c.wells.clone(), c.target_grid), (9, vec![[1, 2], [3, 4]], [32, 32]));

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "sede = 9").unwrap();
        let err = RunConfig::resolve(None, Some(g.path())).unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::preset("desk").unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
