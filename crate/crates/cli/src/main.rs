use std::path::PathBuf;
use std::process::ExitCode;

use azmi_scvae_cli::stages::{self, EvalOptions, InferenceOptions, MeasurementSource};
use azmi_scvae_cli::{artifact_path, CliError, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "scvae", version, about = "Sparse-well pressure reconstruction and leak-rate classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML file with any run-configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset applied before the config file: desk, paper-shape.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = self.config.as_deref().map(artifact_path);
        let mut cfg = RunConfig::resolve(self.preset.as_deref(), file.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Reparameterized draws per instance during training.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    microbatch: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident => $k:ident),*) => {$( if let Some(v) = self.$f { cfg.$k = v; } )*};
        }
        set!(latent => latent, alpha => alpha, beta => beta, batch => batch, patience => patience,
             max_epochs => max_epochs, lr => lr, mc_samples => mc_samples, microbatch => microbatch);
    }
}

#[derive(Args, Clone)]
struct SourceArgs {
    #[arg(long)]
    model: PathBuf,
    /// File with the well measurements (whitespace or comma separated).
    #[arg(long, conflicts_with = "instance")]
    m: Option<PathBuf>,
    /// Use instance IDX of a dataset split as input (and as truth).
    #[arg(long, required_unless_present = "m")]
    instance: Option<usize>,
    /// Dataset directory; defaults to the one the model was trained on.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    n_mc: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write every draw.
    #[arg(long)]
    save_samples: bool,
}

impl SourceArgs {
    fn source(&self) -> MeasurementSource {
        match (&self.m, self.instance) {
            (Some(p), _) => MeasurementSource::File(artifact_path(p)),
            (None, Some(index)) => MeasurementSource::Instance {
                data: self.data.as_deref().map(artifact_path),
                split: self.split.clone(),
                index,
            },
            (None, None) => unreachable!("clap enforces --m or --instance"),
        }
    }

    fn options(&self) -> InferenceOptions {
        InferenceOptions {
            n_mc: self.n_mc,
            seed: self.seed,
            save_samples: self.save_samples,
        }
    }
}

fn parse_cell(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected ROW,COL")?;
    Ok([
        a.trim().parse().map_err(|_| format!("bad row `{a}`"))?,
        b.trim().parse().map_err(|_| format!("bad column `{b}`"))?,
    ])
}

#[derive(Subcommand)]
enum Command {
    /// Run the leak scenarios and write pressure series.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Simulation grid, rows then columns.
        #[arg(long, num_args = 2, value_names = ["H", "W"])]
        grid: Option<Vec<usize>>,
        /// Model grid the series will be reduced to.
        #[arg(long, num_args = 2, value_names = ["H", "W"])]
        target_grid: Option<Vec<usize>>,
        /// TOML file with `[[scenario]]` tables (leak_cell, class, n_steps).
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn pressure series into a split dataset of incremental fields.
    Preprocess {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// Monitoring well ROW,COL (repeat for each well).
        #[arg(long = "well", value_parser = parse_cell)]
        wells: Vec<[usize; 2]>,
        #[arg(long, num_args = 2, value_names = ["H", "W"])]
        target_grid: Option<Vec<usize>>,
        #[arg(long, num_args = 3, value_names = ["TRAIN", "VAL", "TEST"])]
        split: Option<Vec<f64>>,
    },
    /// Fit the model with early stopping.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        hyper: TrainArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model on a dataset split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        n_mc: Option<usize>,
        #[arg(long)]
        mc_seed: Option<u64>,
        #[arg(long)]
        roc_points: Option<usize>,
        /// Defaults to `<model>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior mean and standard deviation of the field given the wells.
    Reconstruct(SourceArgs),
    /// Posterior class probabilities given the wells.
    Classify(SourceArgs),
    /// All stages in one run directory.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        hyper: TrainArgs,
        #[arg(long)]
        mc_seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Defaults to `run-<preset>-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn pair(v: &Option<Vec<usize>>) -> Option<[usize; 2]> {
    v.as_ref().map(|v| [v[0], v[1]])
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { cfg, grid, target_grid, scenarios, threads, out } => {
            let mut c = cfg.resolve()?;
            if let Some(g) = pair(&grid) {
                c.sim_grid = g;
                if target_grid.is_none() && c.stride() != 1 && g[0] < c.target_grid[0] * 3 {
                    c.target_grid = g;
                }
            }
            if let Some(g) = pair(&target_grid) {
                c.target_grid = g;
            }
            if let Some(t) = threads {
                c.threads = t;
            }
            c.validate()?;
            let list = scenarios.map(|p| stages::read_scenarios(&artifact_path(&p))).transpose()?;
            let m = stages::simulate(&c, list, &artifact_path(&out))?;
            println!("{} scenarios on a {}x{} grid", m.scenarios.len(), m.grid_h, m.grid_w);
        }
        Command::Preprocess { cfg, series, out, threshold, wells, target_grid, split } => {
            let mut c = cfg.resolve()?;
            if let Some(t) = threshold {
                c.threshold = t;
            }
            if !wells.is_empty() {
                c.wells = wells;
            }
            if let Some(g) = pair(&target_grid) {
                c.target_grid = g;
            }
            if let Some(s) = split {
                c.split = [s[0], s[1], s[2]];
            }
            let series = artifact_path(&series);
            // the model grid follows the series unless given
            if target_grid.is_none() {
                if let Ok(sd) = azmi_scvae::pipeline::read_series_dir(&series) {
                    let g = [sd.manifest.grid_h, sd.manifest.grid_w];
                    if g[0] < c.target_grid[0] * 3 {
                        c.target_grid = g;
                    }
                    c.sim_grid = g;
                }
            }
            c.validate()?;
            let m = stages::preprocess(&c, &series, &artifact_path(&out))?;
            println!("splits: {:?}", m.splits);
        }
        Command::Train { cfg, hyper, data, out } => {
            let mut c = cfg.resolve()?;
            hyper.apply(&mut c);
            c.validate()?;
            let s = stages::train(&c, &artifact_path(&data), &artifact_path(&out), !hyper.quiet)?;
            println!(
                "best epoch {} of {} (validation {:.5} -> {:.5})",
                s.best_epoch, s.epochs_run, s.first_val_total, s.best_val_total
            );
        }
        Command::Evaluate { model, data, split, n_mc, mc_seed, roc_points, out } => {
            let model = artifact_path(&model);
            let out = out.map(|o| artifact_path(&o)).unwrap_or_else(|| model.join("eval"));
            let opts = EvalOptions { split, n_mc, mc_seed, roc_points };
            let r = stages::evaluate(&model, data.map(|d| artifact_path(&d)).as_deref(), &opts, &out)?;
            println!(
                "relative L2 {:.4}  accuracy {:.4}  macro AUC {}",
                r.relative_l2.mean,
                r.accuracy,
                r.macro_auc.map_or("undefined".into(), |a| format!("{a:.4}"))
            );
        }
        Command::Reconstruct(a) => {
            let s = stages::reconstruct(&artifact_path(&a.model), &a.source(), &a.options(), &artifact_path(&a.out))?;
            match s.relative_l2 {
                Some(r) => println!("relative L2 of the mean {r:.4}"),
                None => println!("wrote reconstruction"),
            }
        }
        Command::Classify(a) => {
            let s = stages::classify(&artifact_path(&a.model), &a.source(), &a.options(), &artifact_path(&a.out))?;
            println!("class {} (probabilities {:?})", s.label, s.mean);
        }
        Command::Pipeline { cfg, hyper, mc_seed, threads, out } => {
            let mut c = cfg.resolve()?;
            hyper.apply(&mut c);
            if mc_seed.is_some() {
                c.mc_seed = mc_seed;
            }
            if let Some(t) = threads {
                c.threads = t;
            }
            c.validate()?;
            let out = out.unwrap_or_else(|| {
                PathBuf::from(format!("run-{}-{}", c.preset.as_deref().unwrap_or("default"), c.seed))
            });
            let s = stages::pipeline(&c, &artifact_path(&out), !hyper.quiet)?;
            let r = &s.report;
            println!(
                "epochs {} (best {})  relative L2 {:.4}  accuracy {:.4}  macro AUC {}",
                s.train.epochs_run,
                s.train.best_epoch,
                r.relative_l2.mean,
                r.accuracy,
                r.macro_auc.map_or("undefined".into(), |a| format!("{a:.4}"))
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
