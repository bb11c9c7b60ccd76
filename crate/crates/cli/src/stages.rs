//! One function per subcommand. Each writes `run.json` into its output
//! directory next to its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use azmi_scvae::leaksim::{self, HeterogeneityParams, ScenarioSpec};
use azmi_scvae::metrics::{self, ClassRoc, ConfusionMatrix, RelativeL2, RocCurve};
use azmi_scvae::nn::checkpoint::{load_checkpoint, save_checkpoint};
use azmi_scvae::nn::ParamStore;
use azmi_scvae::pipeline::{
    self, DatasetManifest, DatasetSplit, Grid, Instance, ScenarioMeta, SeriesManifest, WellSet,
};
use azmi_scvae::posterior::{self, PosteriorConfig};
use azmi_scvae::scvae::{self, HyperParams, Model, ModelConfig, ScvaeError, StopReason, TrainOutcome};
use azmi_scvae::seed;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::output::{value_range, write_csv, write_f32, write_grid_csv, write_json, write_pgm};
use crate::{CliError, RunConfig};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Resolved configuration and derived seeds for one invocation.
pub fn write_run_json(dir: &Path, command: &str, cfg: &RunConfig, extra: serde_json::Value) -> Result<(), CliError> {
    let streams: serde_json::Map<String, serde_json::Value> = [seed::SIM, seed::SPLIT, seed::INIT, seed::TRAIN]
        .iter()
        .map(|n| (n.to_string(), json!(seed::substream(cfg.seed, n))))
        .chain([("mc".to_string(), json!(cfg.mc_seed_value()))])
        .collect();
    write_json(
        &dir.join("run.json"),
        &json!({
            "format_version": crate::config::RUN_FORMAT_VERSION,
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "streams": streams,
            "details": extra,
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    /// Model-grid coordinates.
    pub leak_cell: [usize; 2],
    /// 1-based rate class.
    pub class: usize,
    pub n_steps: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: Vec<ScenarioEntry>,
}

pub fn read_scenarios(path: &Path) -> Result<Vec<ScenarioEntry>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: ScenarioFile =
        toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if file.scenario.is_empty() {
        return Err(CliError::Data(format!("{}: no scenarios listed", path.display())));
    }
    Ok(file.scenario)
}

/// Every leak location with every rate class.
pub fn default_scenarios(cfg: &RunConfig) -> Vec<ScenarioEntry> {
    cfg.leak_cells
        .iter()
        .flat_map(|&leak_cell| {
            (1..=cfg.class_rates.len()).map(move |class| ScenarioEntry {
                leak_cell,
                class,
                n_steps: None,
            })
        })
        .collect()
}

pub fn simulate(cfg: &RunConfig, scenarios: Option<Vec<ScenarioEntry>>, out: &Path) -> Result<SeriesManifest, CliError> {
    let entries = scenarios.unwrap_or_else(|| default_scenarios(cfg));
    let stride = cfg.stride();
    let to_sim = |c: [usize; 2]| (c[0] * stride, c[1] * stride);
    let params = HeterogeneityParams {
        corr_len: cfg.corr_len,
        log_mean: cfg.log_mean,
        log_std: cfg.log_std,
        shale_fraction: cfg.shale_fraction,
    };
    let sim_seed = seed::substream(cfg.seed, seed::SIM);
    let mut model = leaksim::generate_heterogeneity(sim_seed, cfg.sim_grid[0], cfg.sim_grid[1], &params)?;
    for c in entries.iter().map(|e| e.leak_cell).chain(cfg.wells.iter().copied()) {
        if c[0] >= cfg.target_grid[0] || c[1] >= cfg.target_grid[1] {
            return Err(CliError::Data(format!("cell {c:?} lies outside the {:?} model grid", cfg.target_grid)));
        }
        model.clear_around(to_sim(c), cfg.clear_radius);
    }
    let bound = leaksim::stability_dt(&model, cfg.diffusivity_scale, cfg.cell_size);
    let substeps = ((cfg.frame_interval / (0.9 * bound)).ceil() as usize).max(1);
    let dt = cfg.frame_interval / substeps as f64;
    let wells: Vec<(usize, usize)> = cfg.wells.iter().map(|&w| to_sim(w)).collect();
    let mut specs = Vec::with_capacity(entries.len());
    for e in &entries {
        if e.class == 0 || e.class > cfg.class_rates.len() {
            return Err(CliError::Data(format!(
                "scenario class {} outside 1..={}",
                e.class,
                cfg.class_rates.len()
            )));
        }
        specs.push(ScenarioSpec {
            leak_cell: to_sim(e.leak_cell),
            rate_class: e.class,
            rate_value: cfg.class_rates[e.class - 1],
            n_steps: e.n_steps.unwrap_or(cfg.n_steps),
            dt,
            substeps,
            diffusivity_scale: cfg.diffusivity_scale,
            cell_size: cfg.cell_size,
            initial_pressure: cfg.initial_pressure,
            wells: wells.clone(),
            seed: sim_seed,
        });
    }
    let series = leaksim::simulate_many(&model, &specs, cfg.threads)?;
    create_dir(out)?;
    let meta = json!({
        "seed": cfg.seed,
        "sim_seed": sim_seed,
        "heterogeneity": params,
        "stride": stride,
        "target_grid": cfg.target_grid,
        "wells": cfg.wells,
    });
    let manifest = pipeline::write_series_dir(out, &series, &cfg.class_rates, model.inactive_count(), meta)?;
    write_run_json(out, "simulate", cfg, json!({ "scenarios": entries, "substeps": substeps, "dt": dt }))?;
    Ok(manifest)
}

pub fn well_set(cfg: &RunConfig) -> Result<WellSet, CliError> {
    Ok(WellSet::new(cfg.wells.iter().map(|w| (w[0], w[1])).collect())?)
}

/// Instances of every scenario before filtering, in scenario order.
pub fn series_instances(cfg: &RunConfig, series_dir: &Path) -> Result<(SeriesManifest, Vec<Instance>), CliError> {
    let sd = pipeline::read_series_dir(series_dir)?;
    let target = (cfg.target_grid[0], cfg.target_grid[1]);
    let grid = (sd.manifest.grid_h, sd.manifest.grid_w);
    let wells = well_set(cfg)?;
    wells.check_bounds(target.0, target.1)?;
    let n_classes = sd.manifest.class_rates.len();
    let mut all = Vec::new();
    for entry in &sd.manifest.scenarios {
        let mut frames = Vec::with_capacity(entry.spec.n_steps);
        for f in sd.frames(entry)? {
            let f = f?;
            frames.push(if grid == target {
                f
            } else {
                pipeline::downsample(&Grid::new(grid.0, grid.1, f)?, target)?.data
            });
        }
        all.extend(pipeline::scenario_instances(
            frames,
            target.1,
            entry.id,
            entry.spec.rate_class,
            n_classes,
            &wells,
        )?);
    }
    Ok((sd.manifest, all))
}

pub fn preprocess(cfg: &RunConfig, series_dir: &Path, out: &Path) -> Result<DatasetManifest, CliError> {
    let (series, all) = series_instances(cfg, series_dir)?;
    let before = all.len();
    let kept = pipeline::filter_extremes(all, cfg.threshold);
    let removed = before - kept.len();
    let fractions = (cfg.split[0], cfg.split[1], cfg.split[2]);
    let split = pipeline::split(kept, fractions, seed::substream(cfg.seed, seed::SPLIT))?;
    let manifest = DatasetManifest {
        format_version: pipeline::DATASET_FORMAT_VERSION,
        grid_h: cfg.target_grid[0],
        grid_w: cfg.target_grid[1],
        n_classes: series.class_rates.len(),
        wells: cfg.wells.iter().map(|w| (w[0], w[1])).collect(),
        splits: Default::default(),
        dtype: "f32".into(),
        class_rates: series.class_rates.clone(),
        scenarios: series
            .scenarios
            .iter()
            .map(|s| ScenarioMeta::from_spec(s.id, &s.spec))
            .collect(),
        threshold: cfg.threshold,
        fractions,
        seed: 0,
        index: Default::default(),
    };
    create_dir(out)?;
    let written = pipeline::write_dataset(out, &manifest, &split)?;
    write_run_json(
        out,
        "preprocess",
        cfg,
        json!({ "series": series_dir, "instances": before, "removed_by_threshold": removed, "splits": written.splits }),
    )?;
    Ok(written)
}

/// Stored in the checkpoint manifest; everything `evaluate` needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub model: ModelConfig,
    pub hyper: HyperParams,
    pub run: RunConfig,
    pub data_dir: PathBuf,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop: Option<StopReason>,
    pub best_val_total: f64,
    pub first_val_total: f64,
    pub seconds: f64,
}

fn write_history(path: &Path, outcome: &TrainOutcome) -> Result<(), CliError> {
    let header = [
        "epoch", "train_total", "train_recon", "train_class", "train_kl", "val_total", "val_recon",
        "val_class", "val_kl",
    ];
    write_csv(
        path,
        &header,
        outcome.history.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.train.total.to_string(),
                r.train.recon_term.to_string(),
                r.train.class_term.to_string(),
                r.train.kl_term.to_string(),
                r.val.total.to_string(),
                r.val.recon_term.to_string(),
                r.val.class_term.to_string(),
                r.val.kl_term.to_string(),
            ]
        }),
    )
}

fn save_model(out: &Path, cfg: &RunConfig, data_dir: &Path, outcome: &TrainOutcome, hyper: &HyperParams) -> Result<(), CliError> {
    let meta = ModelMeta {
        model: outcome.model.config.clone(),
        hyper: hyper.clone(),
        run: cfg.clone(),
        data_dir: data_dir.to_path_buf(),
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        stop: outcome.stop,
    };
    let meta = serde_json::to_value(&meta).map_err(|e| CliError::Data(e.to_string()))?;
    save_checkpoint(out, &outcome.params, meta)?;
    write_history(&out.join("history.csv"), outcome)
}

pub fn train(cfg: &RunConfig, data_dir: &Path, out: &Path, verbose: bool) -> Result<TrainSummary, CliError> {
    let (dm, split) = pipeline::read_dataset(data_dir)?;
    let data_dir = fs::canonicalize(data_dir).map_err(|e| CliError::io(data_dir, e))?;
    let model_cfg = ModelConfig::new((dm.grid_h, dm.grid_w), dm.n_classes, dm.wells.len(), cfg.latent);
    let hyper = cfg.hyper();
    let start = Instant::now();
    let result = scvae::train(&split, &model_cfg, &hyper, |r| {
        if verbose && (r.epoch == 1 || r.epoch % 10 == 0) {
            eprintln!(
                "epoch {:>4}  train {:.5}  val {:.5} (recon {:.5}, class {:.5}, kl {:.5})  {:.0}s",
                r.epoch,
                r.train.total,
                r.val.total,
                r.val.recon_term,
                r.val.class_term,
                r.val.kl_term,
                start.elapsed().as_secs_f64()
            );
        }
    });
    create_dir(out)?;
    let outcome = match result {
        Ok(o) => o,
        Err(ScvaeError::Diverged { partial, epoch, batch, term, best_epoch }) => {
            save_model(out, cfg, &data_dir, &partial, &hyper)?;
            return Err(CliError::Numerical(format!(
                "training diverged at epoch {epoch}, batch {batch} ({term}); parameters of epoch {best_epoch} saved to {}",
                out.display()
            )));
        }
        Err(ScvaeError::Config(m)) => return Err(CliError::Usage(m)),
        Err(e @ ScvaeError::NonFinite { .. }) => return Err(CliError::Numerical(e.to_string())),
        Err(e) => return Err(CliError::Data(e.to_string())),
    };
    save_model(out, cfg, &data_dir, &outcome, &hyper)?;
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        stop: outcome.stop,
        best_val_total: outcome.history[outcome.best_epoch - 1].val.total,
        first_val_total: outcome.history[0].val.total,
        seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("train.json"), &summary)?;
    write_run_json(out, "train", cfg, json!({ "data": data_dir }))?;
    Ok(summary)
}

pub struct LoadedModel {
    pub model: Model,
    pub params: ParamStore<f32>,
    pub meta: ModelMeta,
}

pub fn load_model(dir: &Path) -> Result<LoadedModel, CliError> {
    let (params, manifest) = load_checkpoint(dir)?;
    let meta: ModelMeta = serde_json::from_value(manifest.meta)
        .map_err(|e| CliError::Data(format!("{}: model metadata: {e}", dir.display())))?;
    let mut layout = ParamStore::<f32>::new();
    let model = Model::build(&meta.model, &mut layout).map_err(|e| CliError::Data(e.to_string()))?;
    layout.check_same_layout(&params)?;
    Ok(LoadedModel { model, params, meta })
}

fn load_split(lm: &LoadedModel, data: Option<&Path>, split_name: &str) -> Result<(DatasetManifest, Vec<Instance>), CliError> {
    let dir = data.map(Path::to_path_buf).unwrap_or_else(|| lm.meta.data_dir.clone());
    let (dm, split): (DatasetManifest, DatasetSplit) = pipeline::read_dataset(&dir)?;
    let mc = &lm.model.config;
    if (dm.grid_h, dm.grid_w, dm.n_classes, dm.wells.len()) != (mc.grid_h, mc.grid_w, mc.n_classes, mc.n_wells) {
        return Err(CliError::Data(format!(
            "{} does not match the model geometry",
            dir.display()
        )));
    }
    let items = match split_name {
        "train" => split.train,
        "val" => split.val,
        "test" => split.test,
        other => return Err(CliError::Usage(format!("unknown split `{other}` (train, val, test)"))),
    };
    Ok((dm, items))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub n_instances: usize,
    pub n_mc: usize,
    pub mc_seed: u64,
    pub relative_l2: RelativeL2,
    /// Score of predicting the zero field everywhere.
    pub zero_baseline_relative_l2: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// Per class; `None` where the class is absent from the split.
    pub auc: Vec<Option<f64>>,
    pub macro_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub split: String,
    pub n_mc: Option<usize>,
    pub mc_seed: Option<u64>,
    pub roc_points: Option<usize>,
}

fn instance_seed(mc_seed: u64, split: &str, index: usize) -> u64 {
    seed::substream(mc_seed, &format!("{split}/{index}"))
}

fn roc_rows(c: &RocCurve) -> Vec<Vec<f64>> {
    (0..c.fpr.len())
        .map(|i| vec![c.fpr[i], c.tpr_mean[i], c.tpr_std[i]])
        .collect()
}

pub fn evaluate(model_dir: &Path, data: Option<&Path>, opts: &EvalOptions, out: &Path) -> Result<EvalReport, CliError> {
    let lm = load_model(model_dir)?;
    let (_, items) = load_split(&lm, data, &opts.split)?;
    if items.is_empty() {
        return Err(CliError::Data(format!("split `{}` is empty", opts.split)));
    }
    let mut run = lm.meta.run.clone();
    if let Some(s) = opts.mc_seed {
        run.mc_seed = Some(s);
    }
    let n_mc = opts.n_mc.unwrap_or(run.n_mc);
    run.n_mc = n_mc;
    let mc_seed = run.mc_seed_value();
    let roc_points = opts.roc_points.unwrap_or(run.roc_points);
    let r = lm.model.config.n_classes;

    let mut means = Vec::with_capacity(items.len());
    let mut scores = Vec::with_capacity(items.len());
    let mut truth = Vec::with_capacity(items.len());
    let mut predicted = Vec::with_capacity(items.len());
    let mut y_means = Vec::with_capacity(items.len());
    for (i, inst) in items.iter().enumerate() {
        let pc = PosteriorConfig {
            n_mc,
            seed: instance_seed(mc_seed, &opts.split, i),
            store_full_cov: false,
        };
        let xs = posterior::sample_posterior_x(&lm.model, &lm.params, &inst.m, &pc)?;
        means.push(posterior::summarize(&xs, false)?.mean);
        let ys = posterior::sample_posterior_y(&lm.model, &lm.params, &inst.m, &pc)?;
        let y_mean = posterior::summarize(&ys, false)?.mean;
        predicted.push(posterior::classify(&y_mean)?);
        truth.push(inst.class_index());
        y_means.push(y_mean);
        scores.push(
            ys.iter()
                .map(|y| y.iter().map(|&p| f64::from(p)).collect::<Vec<f64>>())
                .collect::<Vec<_>>(),
        );
    }
    let truths: Vec<&[f32]> = items.iter().map(|i| i.x.as_slice()).collect();
    let relative_l2 = metrics::relative_l2(&means, &truths)?;
    let zeros = vec![vec![0.0f64; lm.model.config.cells()]; items.len()];
    let zero_baseline = metrics::relative_l2(&zeros, &truths)?.mean;
    let confusion = metrics::confusion(&truth, &predicted, r)?;
    let grid = metrics::default_fpr_grid(roc_points);
    let rocs = metrics::roc_ovr(&scores, &truth, &grid)?;
    let macro_curve = metrics::macro_average(&rocs);

    let report = EvalReport {
        split: opts.split.clone(),
        n_instances: items.len(),
        n_mc,
        mc_seed,
        relative_l2,
        zero_baseline_relative_l2: zero_baseline,
        accuracy: confusion.accuracy(),
        auc: rocs.iter().map(|c| c.curve().map(|c| c.auc)).collect(),
        macro_auc: macro_curve.as_ref().map(|c| c.auc),
        confusion,
    };

    create_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    for roc in &rocs {
        match roc {
            ClassRoc::Defined(c) => write_csv(
                &out.join(format!("roc_class_{}.csv", c.class)),
                &["fpr", "tpr_mean", "tpr_std"],
                roc_rows(c),
            )?,
            ClassRoc::Undefined { class, reason } => {
                write_json(&out.join(format!("roc_class_{class}.undefined.json")), &json!({ "class": class, "reason": reason }))?
            }
        }
    }
    if let Some(c) = &macro_curve {
        write_csv(&out.join("roc_macro.csv"), &["fpr", "tpr_mean", "tpr_std"], roc_rows(c))?;
    }
    let mut header = vec!["true".to_string()];
    header.extend((1..=r).map(|j| format!("pred_{j}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &out.join("confusion.csv"),
        &header_ref,
        report.confusion.counts.iter().enumerate().map(|(i, row)| {
            let mut v = vec![(i + 1) as u64];
            v.extend(row);
            v
        }),
    )?;
    let mut header = vec!["index", "scenario", "step", "true", "predicted"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend((1..=r).map(|j| format!("p_{j}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &out.join("predictions.csv"),
        &header_ref,
        items.iter().enumerate().map(|(i, inst)| {
            let mut v = vec![
                i.to_string(),
                inst.scenario_id.to_string(),
                inst.step.to_string(),
                truth[i].to_string(),
                predicted[i].to_string(),
            ];
            v.extend(y_means[i].iter().map(|p| p.to_string()));
            v
        }),
    )?;
    write_run_json(
        out,
        "evaluate",
        &run,
        json!({ "model": model_dir, "split": opts.split, "roc_points": roc_points }),
    )?;
    Ok(report)
}

/// Where the conditioning measurements come from.
#[derive(Debug, Clone)]
pub enum MeasurementSource {
    File(PathBuf),
    Instance {
        data: Option<PathBuf>,
        split: String,
        index: usize,
    },
}

#[derive(Debug, Clone)]
pub struct InferenceOptions {
    pub n_mc: Option<usize>,
    pub seed: Option<u64>,
    pub save_samples: bool,
}

/// Whitespace- or comma-separated numbers.
pub fn read_measurements(path: &Path) -> Result<Vec<f32>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f32>()
                .map_err(|_| CliError::Data(format!("{}: `{t}` is not a number", path.display())))
        })
        .collect()
}

struct Resolved {
    m: Vec<f32>,
    truth: Option<Instance>,
    seed: u64,
    n_mc: usize,
    run: RunConfig,
}

fn resolve_source(lm: &LoadedModel, src: &MeasurementSource, opts: &InferenceOptions, tag: &str) -> Result<Resolved, CliError> {
    let mut run = lm.meta.run.clone();
    let n_mc = opts.n_mc.unwrap_or(run.n_mc);
    run.n_mc = n_mc;
    let (m, truth, default_seed) = match src {
        MeasurementSource::File(p) => (read_measurements(p)?, None, seed::substream(run.mc_seed_value(), tag)),
        MeasurementSource::Instance { data, split, index } => {
            let (_, items) = load_split(lm, data.as_deref(), split)?;
            let inst = items.get(*index).cloned().ok_or_else(|| {
                CliError::Usage(format!("instance {index} out of range ({} in `{split}`)", items.len()))
            })?;
            (inst.m.clone(), Some(inst), instance_seed(run.mc_seed_value(), split, *index))
        }
    };
    if m.len() != lm.model.config.n_wells {
        return Err(CliError::Data(format!(
            "{} measurements given, model expects {}",
            m.len(),
            lm.model.config.n_wells
        )));
    }
    let seed = opts.seed.unwrap_or(default_seed);
    Ok(Resolved { m, truth, seed, n_mc, run })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructSummary {
    pub n_mc: usize,
    pub seed: u64,
    pub relative_l2: Option<f64>,
    pub max_std: f64,
}

pub fn reconstruct(model_dir: &Path, src: &MeasurementSource, opts: &InferenceOptions, out: &Path) -> Result<ReconstructSummary, CliError> {
    let lm = load_model(model_dir)?;
    let res = resolve_source(&lm, src, opts, "reconstruct")?;
    let pc = PosteriorConfig {
        n_mc: res.n_mc,
        seed: res.seed,
        store_full_cov: false,
    };
    let xs = posterior::sample_posterior_x(&lm.model, &lm.params, &res.m, &pc)?;
    let s = posterior::summarize(&xs, false)?;
    let (rows, cols) = (lm.model.config.grid_h, lm.model.config.grid_w);
    create_dir(out)?;
    let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    write_f32(&out.join("mean.f32"), &to_f32(&s.mean))?;
    write_f32(&out.join("std.f32"), &to_f32(&s.std))?;
    write_grid_csv(&out.join("mean.csv"), &s.mean, cols)?;
    write_grid_csv(&out.join("std.csv"), &s.std, cols)?;
    write_pgm(&out.join("std.pgm"), &s.std, rows, cols, None)?;
    let mut rel = None;
    match &res.truth {
        Some(inst) => {
            let truth: Vec<f64> = inst.x.iter().map(|&v| f64::from(v)).collect();
            // true and mean share one colour scale
            let (a, b) = value_range(&truth);
            let (c, d) = value_range(&s.mean);
            let range = Some((a.min(c), b.max(d)));
            write_pgm(&out.join("true.pgm"), &truth, rows, cols, range)?;
            write_pgm(&out.join("mean.pgm"), &s.mean, rows, cols, range)?;
            write_grid_csv(&out.join("true.csv"), &truth, cols)?;
            let err = posterior::abs_error_map(&inst.x, &s.mean)?;
            write_f32(&out.join("abs_err.f32"), &to_f32(&err))?;
            write_grid_csv(&out.join("abs_err.csv"), &err, cols)?;
            write_pgm(&out.join("abs_err.pgm"), &err, rows, cols, None)?;
            rel = Some(metrics::relative_l2(std::slice::from_ref(&s.mean), &[truth])?.mean);
        }
        None => write_pgm(&out.join("mean.pgm"), &s.mean, rows, cols, None)?,
    }
    if opts.save_samples {
        let flat: Vec<f32> = xs.iter().flatten().copied().collect();
        write_f32(&out.join("samples.f32"), &flat)?;
    }
    let summary = ReconstructSummary {
        n_mc: res.n_mc,
        seed: res.seed,
        relative_l2: rel,
        max_std: s.std.iter().copied().fold(0.0, f64::max),
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_run_json(out, "reconstruct", &res.run, json!({ "model": model_dir, "grid": [rows, cols] }))?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifySummary {
    pub label: usize,
    pub true_label: Option<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_mc: usize,
    pub seed: u64,
}

pub fn classify(model_dir: &Path, src: &MeasurementSource, opts: &InferenceOptions, out: &Path) -> Result<ClassifySummary, CliError> {
    let lm = load_model(model_dir)?;
    let res = resolve_source(&lm, src, opts, "classify")?;
    let pc = PosteriorConfig {
        n_mc: res.n_mc,
        seed: res.seed,
        store_full_cov: true,
    };
    let ys = posterior::sample_posterior_y(&lm.model, &lm.params, &res.m, &pc)?;
    let s = posterior::summarize(&ys, true)?;
    let label = posterior::classify(&s.mean)?;
    let r = s.mean.len();
    create_dir(out)?;
    write_csv(
        &out.join("class_probs.csv"),
        &["class", "mean", "std"],
        (0..r).map(|j| vec![(j + 1) as f64, s.mean[j], s.std[j]]),
    )?;
    let mut header = vec!["draw".to_string()];
    header.extend((1..=r).map(|j| format!("p_{j}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &out.join("samples.csv"),
        &header_ref,
        ys.iter().enumerate().map(|(d, y)| {
            let mut v = vec![d.to_string()];
            v.extend(y.iter().map(|p| p.to_string()));
            v
        }),
    )?;
    let summary = ClassifySummary {
        label,
        true_label: res.truth.as_ref().map(Instance::class_index),
        mean: s.mean,
        std: s.std,
        n_mc: res.n_mc,
        seed: res.seed,
    };
    write_json(&out.join("label.json"), &summary)?;
    write_run_json(out, "classify", &res.run, json!({ "model": model_dir, "covariance": s.cov }))?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub train: TrainSummary,
    pub report: EvalReport,
}

/// simulate -> preprocess -> train -> evaluate, plus one reconstruction and
/// one classification of the first test instance.
pub fn pipeline(cfg: &RunConfig, out: &Path, verbose: bool) -> Result<PipelineSummary, CliError> {
    create_dir(out)?;
    write_run_json(out, "pipeline", cfg, json!({}))?;
    let series = out.join("series");
    let data = out.join("dataset");
    let model = out.join("model");
    simulate(cfg, None, &series)?;
    let dm = preprocess(cfg, &series, &data)?;
    if verbose {
        eprintln!("dataset: {:?}", dm.splits);
    }
    let train_summary = train(cfg, &data, &model, verbose)?;
    let opts = EvalOptions {
        split: "test".into(),
        n_mc: None,
        mc_seed: None,
        roc_points: None,
    };
    let report = evaluate(&model, None, &opts, &out.join("eval"))?;
    let src = MeasurementSource::Instance {
        data: None,
        split: "test".into(),
        index: 0,
    };
    let inf = InferenceOptions {
        n_mc: None,
        seed: None,
        save_samples: false,
    };
    reconstruct(&model, &src, &inf, &out.join("figures").join("reconstruct"))?;
    classify(&model, &src, &inf, &out.join("figures").join("classify"))?;
    let summary = PipelineSummary {
        train: train_summary,
        report,
    };
    Ok(summary)
}
