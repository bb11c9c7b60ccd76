use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{DecoderXCache, DecoderYCache, EncoderCache, LatentPosterior, Model, ModelConfig};
use super::{kl_closed_form, ScvaeError};
use crate::nn::{log_softmax, softmax, AdamConfig, AdamState, NnError, ParamStore, Real, Tensor};
use crate::pipeline::{DatasetSplit, Instance};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub latent_dim: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Reparameterized draws per instance and step.
    pub mc_samples: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Instances per forward/backward chunk; bounds memory, not the update.
    pub microbatch: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            latent_dim: 2,
            alpha: 1.0,
            beta: 1.0,
            mc_samples: 1,
            batch_size: 128,
            patience: 200,
            max_epochs: 2000,
            seed: 0,
            adam: AdamConfig::default(),
            microbatch: 32,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), ScvaeError> {
        let bad = |msg: &str| Err(ScvaeError::Config(msg.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and > 0");
        }
        if self.mc_samples == 0 || self.batch_size == 0 || self.microbatch == 0 {
            return bad("mc_samples, batch_size and microbatch must be positive");
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return bad("patience and max_epochs must be positive");
        }
        if !(self.adam.lr >= 0.0) || !(self.adam.eps > 0.0) {
            return bad("learning rate must be >= 0 and ADAM eps > 0");
        }
        Ok(())
    }
}

/// Batch-mean loss terms, minimization convention.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon_term: f64,
    pub class_term: f64,
    pub kl_term: f64,
}

impl LossBreakdown {
    fn from_terms(recon: f64, class: f64, kl: f64, alpha: f64, beta: f64) -> Self {
        LossBreakdown {
            total: recon + alpha * class + beta * kl,
            recon_term: recon,
            class_term: class,
            kl_term: kl,
        }
    }
}

/// Dense tensors for a group of instances.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
    pub m: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_instances(cfg: &ModelConfig, items: &[&Instance]) -> Result<Self, ScvaeError> {
        let n = items.len();
        let mut x = Vec::with_capacity(n * cfg.cells());
        let mut y = Vec::with_capacity(n * cfg.n_classes);
        let mut m = Vec::with_capacity(n * cfg.n_wells);
        for inst in items {
            if inst.x.len() != cfg.cells() || inst.y.len() != cfg.n_classes || inst.m.len() != cfg.n_wells {
                return Err(ScvaeError::Config(format!(
                    "instance ({}, {}) has sizes x={} y={} m={}, model expects {} / {} / {}",
                    inst.scenario_id,
                    inst.step,
                    inst.x.len(),
                    inst.y.len(),
                    inst.m.len(),
                    cfg.cells(),
                    cfg.n_classes,
                    cfg.n_wells
                )));
            }
            x.extend(inst.x.iter().map(|&v| T::from_f32(v).unwrap()));
            y.extend(inst.y.iter().map(|&v| T::from_f32(v).unwrap()));
            m.extend(inst.m.iter().map(|&v| T::from_f32(v).unwrap()));
        }
        Ok(Batch {
            x: Tensor::from_vec(&[n, cfg.grid_h, cfg.grid_w, 1], x)?,
            y: Tensor::from_vec(&[n, cfg.n_classes], y)?,
            m: Tensor::from_vec(&[n, cfg.n_wells], m)?,
        })
    }

    pub fn len(&self) -> usize {
        self.y.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `draws` standard-normal tensors of shape `[n, latent]`.
pub fn draw_eps<T: Real, R: Rng>(rng: &mut R, draws: usize, n: usize, latent: usize) -> Vec<Tensor<T>> {
    (0..draws)
        .map(|_| {
            let data = (0..n * latent)
                .map(|_| T::from_f64_lossy(StandardNormal.sample(rng)))
                .collect();
            Tensor::from_vec(&[n, latent], data).expect("sized")
        })
        .collect()
}

fn rows<T: Real>(t: &Tensor<T>, range: Range<usize>) -> Tensor<T> {
    let w = t.len() / t.dim(0).max(1);
    let mut shape = t.shape().to_vec();
    shape[0] = range.len();
    Tensor::from_vec(&shape, t.data()[range.start * w..range.end * w].to_vec()).expect("sized")
}

/// The three unscaled terms for a single instance and a single draw, from
/// decoder outputs given as probabilities. Reference implementation used to
/// cross-check the batched estimator.
pub fn instance_terms(
    x: &[f64],
    x_hat: &[f64],
    y: &[f64],
    y_hat: &[f64],
    post: &LatentPosterior,
) -> (f64, f64, f64) {
    let recon = 0.5 * x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let class = -y
        .iter()
        .zip(y_hat)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, p)| t * p.ln())
        .sum::<f64>();
    (recon, class, kl_closed_form(post))
}

struct Draw<T> {
    eps: Tensor<T>,
    dx: DecoderXCache<T>,
    dy: DecoderYCache<T>,
}

struct ChunkForward<T> {
    enc: EncoderCache<T>,
    draws: Vec<Draw<T>>,
    recon: f64,
    class: f64,
    kl: f64,
}

fn chunk_forward<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    batch: &Batch<T>,
    eps: &[Tensor<T>],
) -> Result<ChunkForward<T>, NnError> {
    let enc = model.encode(store, &batch.x, &batch.y)?;
    let draws_n = eps.len() as f64;
    let mut recon = 0.0;
    let mut class = 0.0;
    let mut draws = Vec::with_capacity(eps.len());
    for e in eps {
        let mut z = enc.mu.clone();
        for ((zv, &lv), &ev) in z.data_mut().iter_mut().zip(enc.log_var.data()).zip(e.data()) {
            *zv = *zv + (lv * T::from_f64_lossy(0.5)).exp() * ev;
        }
        let dx = model.decode_x(store, &z, &batch.m)?;
        let dy = model.decode_y(store, &z, &batch.m)?;
        recon += 0.5
            * dx.out
                .data()
                .iter()
                .zip(batch.x.data())
                .map(|(&a, &b)| (a - b).as_f64().powi(2))
                .sum::<f64>();
        let lp = log_softmax(&dy.logits);
        class -= lp
            .data()
            .iter()
            .zip(batch.y.data())
            .map(|(&l, &t)| (l * t).as_f64())
            .sum::<f64>();
        draws.push(Draw {
            eps: e.clone(),
            dx,
            dy,
        });
    }
    let kl = enc
        .mu
        .data()
        .iter()
        .zip(enc.log_var.data())
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            0.5 * (lv.exp() + m * m - 1.0 - lv)
        })
        .sum::<f64>();
    Ok(ChunkForward {
        enc,
        draws,
        recon: recon / draws_n,
        class: class / draws_n,
        kl,
    })
}

/// Backward through one chunk. Each instance carries weight `1 / n_total`.
fn chunk_backward<T: Real>(
    model: &Model,
    store: &mut ParamStore<T>,
    batch: &Batch<T>,
    fwd: &ChunkForward<T>,
    hyper: &HyperParams,
    n_total: usize,
) -> Result<(), NnError> {
    let inst_w = 1.0 / n_total as f64;
    let draw_w = T::from_f64_lossy(inst_w / fwd.draws.len() as f64);
    let class_w = T::from_f64_lossy(hyper.alpha * inst_w / fwd.draws.len() as f64);
    let beta_w = T::from_f64_lossy(hyper.beta * inst_w);
    let half = T::from_f64_lossy(0.5);
    let r = model.config.n_classes;

    let mu = fwd.enc.mu.data();
    let lv = fwd.enc.log_var.data();
    let mut g_mu: Vec<T> = mu.iter().map(|&m| beta_w * m).collect();
    let mut g_lv: Vec<T> = lv.iter().map(|&l| beta_w * half * (l.exp() - T::one())).collect();

    for d in &fwd.draws {
        let mut g_out = d.dx.out.clone();
        for (g, &x) in g_out.data_mut().iter_mut().zip(batch.x.data()) {
            *g = (*g - x) * draw_w;
        }
        let gz_x = model.decode_x_backward(store, &d.dx, &g_out)?;

        let p = softmax(&d.dy.logits);
        let mut g_logits = p.clone();
        for ((g, pr), yr) in g_logits
            .data_mut()
            .chunks_exact_mut(r)
            .zip(p.data().chunks_exact(r))
            .zip(batch.y.data().chunks_exact(r))
        {
            let mass: T = yr.iter().copied().sum();
            for k in 0..r {
                g[k] = (pr[k] * mass - yr[k]) * class_w;
            }
        }
        let gz_y = model.decode_y_backward(store, &d.dy, &g_logits)?;

        for k in 0..g_mu.len() {
            let gz = gz_x.data()[k] + gz_y.data()[k];
            g_mu[k] = g_mu[k] + gz;
            g_lv[k] = g_lv[k] + gz * d.eps.data()[k] * half * (lv[k] * half).exp();
        }
    }
    let shape = fwd.enc.mu.shape().to_vec();
    model.encode_backward(
        store,
        &fwd.enc,
        &Tensor::from_vec(&shape, g_mu)?,
        &Tensor::from_vec(&shape, g_lv)?,
    )
}

fn check_finite(batch: usize, recon: f64, class: f64, kl: f64) -> Result<(), ScvaeError> {
    for (term, v) in [("reconstruction", recon), ("classification", class), ("kl", kl)] {
        if !v.is_finite() {
            return Err(ScvaeError::NonFinite { batch, term });
        }
    }
    Ok(())
}

fn run_elbo<T: Real>(
    model: &Model,
    mut store: StoreRef<'_, T>,
    items: &[&Instance],
    hyper: &HyperParams,
    eps: &[Tensor<T>],
) -> Result<LossBreakdown, ScvaeError> {
    let n = items.len();
    if n == 0 {
        return Err(ScvaeError::Config("empty batch".into()));
    }
    if eps.len() != hyper.mc_samples || eps.iter().any(|e| e.shape() != [n, model.config.latent_dim]) {
        return Err(ScvaeError::Config(format!(
            "expected {} noise draws of shape [{n}, {}]",
            hyper.mc_samples, model.config.latent_dim
        )));
    }
    let (mut recon, mut class, mut kl) = (0.0, 0.0, 0.0);
    let mut start = 0;
    for (chunk_idx, chunk) in items.chunks(hyper.microbatch).enumerate() {
        let range = start..start + chunk.len();
        start = range.end;
        let batch = Batch::from_instances(&model.config, chunk)?;
        let chunk_eps: Vec<Tensor<T>> = eps.iter().map(|e| rows(e, range.clone())).collect();
        let fwd = chunk_forward(model, store.get(), &batch, &chunk_eps)?;
        check_finite(chunk_idx, fwd.recon, fwd.class, fwd.kl)?;
        recon += fwd.recon;
        class += fwd.class;
        kl += fwd.kl;
        if let StoreRef::Mut(s) = &mut store {
            chunk_backward(model, s, &batch, &fwd, hyper, n)?;
        }
    }
    let nf = n as f64;
    Ok(LossBreakdown::from_terms(recon / nf, class / nf, kl / nf, hyper.alpha, hyper.beta))
}

enum StoreRef<'a, T> {
    Shared(&'a ParamStore<T>),
    Mut(&'a mut ParamStore<T>),
}

impl<T> StoreRef<'_, T> {
    fn get(&self) -> &ParamStore<T> {
        match self {
            StoreRef::Shared(s) => s,
            StoreRef::Mut(s) => s,
        }
    }
}

/// Minibatch objective; parameter gradients are added into `store`.
///
/// `eps` holds `mc_samples` tensors of shape `[items.len(), latent_dim]`.
pub fn elbo_loss<T: Real>(
    model: &Model,
    store: &mut ParamStore<T>,
    items: &[&Instance],
    hyper: &HyperParams,
    eps: &[Tensor<T>],
) -> Result<LossBreakdown, ScvaeError> {
    run_elbo(model, StoreRef::Mut(store), items, hyper, eps)
}

/// Same objective as [`elbo_loss`] without gradients.
pub fn elbo_eval<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    items: &[&Instance],
    hyper: &HyperParams,
    eps: &[Tensor<T>],
) -> Result<LossBreakdown, ScvaeError> {
    run_elbo(model, StoreRef::Shared(store), items, hyper, eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Parameters of the best validation epoch.
    pub params: ParamStore<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop: Option<StopReason>,
}

/// Seeded initialization of a fresh model.
pub fn init_model(cfg: &ModelConfig, seed_value: u64) -> Result<(Model, ParamStore<f32>), ScvaeError> {
    let mut store = ParamStore::new();
    let model = Model::build(cfg, &mut store)?;
    model.init(&mut store, &mut seed::substream_rng(seed_value, seed::INIT));
    Ok((model, store))
}

/// Minibatch ADAM with early stopping on the validation total.
///
/// Validation uses one fixed set of noise draws for every epoch, so its loss
/// only moves when the parameters do. `on_epoch` sees each finished epoch.
pub fn train(
    split: &DatasetSplit,
    model_cfg: &ModelConfig,
    hyper: &HyperParams,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, ScvaeError> {
    hyper.validate()?;
    if model_cfg.latent_dim != hyper.latent_dim {
        return Err(ScvaeError::Config(format!(
            "model latent_dim {} differs from hyper-parameter {}",
            model_cfg.latent_dim, hyper.latent_dim
        )));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(ScvaeError::Config("training and validation sets must be non-empty".into()));
    }
    if hyper.batch_size > split.train.len() {
        return Err(ScvaeError::Config(format!(
            "batch_size {} exceeds the {} training instances",
            hyper.batch_size,
            split.train.len()
        )));
    }
    let (model, mut store) = init_model(model_cfg, hyper.seed)?;
    let mut adam = AdamState::new(hyper.adam, &store);
    let mut rng = seed::substream_rng(hyper.seed, seed::TRAIN);
    let val_items: Vec<&Instance> = split.val.iter().collect();
    let val_eps: Vec<Tensor<f32>> = draw_eps(
        &mut seed::substream_rng(hyper.seed, "train/validation"),
        hyper.mc_samples,
        val_items.len(),
        hyper.latent_dim,
    );
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut outcome = TrainOutcome {
        model: model.clone(),
        params: store.clone(),
        history: Vec::new(),
        best_epoch: 0,
        stop: None,
    };
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;

    let diverged = |outcome: &TrainOutcome, epoch, batch, term: String| ScvaeError::Diverged {
        epoch,
        batch,
        term,
        best_epoch: outcome.best_epoch,
        partial: Box::new(outcome.clone()),
    };

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let (mut recon, mut class, mut kl) = (0.0, 0.0, 0.0);
        for (b, idx) in order.chunks(hyper.batch_size).enumerate() {
            let items: Vec<&Instance> = idx.iter().map(|&i| &split.train[i]).collect();
            let eps = draw_eps(&mut rng, hyper.mc_samples, items.len(), hyper.latent_dim);
            store.zero_grads();
            let loss = match elbo_loss(&model, &mut store, &items, hyper, &eps) {
                Ok(l) => l,
                Err(ScvaeError::NonFinite { term, .. }) => {
                    return Err(diverged(&outcome, epoch, b, term.to_string()))
                }
                Err(e) => return Err(e),
            };
            match adam.step(&mut store) {
                Ok(()) => {}
                Err(NnError::NonFiniteGradient(name)) => {
                    return Err(diverged(&outcome, epoch, b, format!("gradient of {name}")))
                }
                Err(e) => return Err(e.into()),
            }
            let w = items.len() as f64;
            recon += loss.recon_term * w;
            class += loss.class_term * w;
            kl += loss.kl_term * w;
        }
        let nt = split.train.len() as f64;
        let train_loss = LossBreakdown::from_terms(recon / nt, class / nt, kl / nt, hyper.alpha, hyper.beta);
        let val = match elbo_eval(&model, &store, &val_items, hyper, &val_eps) {
            Ok(v) if v.total.is_finite() => v,
            Ok(_) => return Err(diverged(&outcome, epoch, 0, "validation total".into())),
            Err(ScvaeError::NonFinite { term, .. }) => {
                return Err(diverged(&outcome, epoch, 0, format!("validation {term}")))
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train: train_loss,
            val,
        };
        on_epoch(&record);
        outcome.history.push(record);
        if val.total < best_val {
            best_val = val.total;
            since_best = 0;
            outcome.best_epoch = epoch;
            outcome.params.copy_values_from(&store)?;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                outcome.stop = Some(StopReason::Patience);
                break;
            }
        }
    }
    if outcome.stop.is_none() {
        outcome.stop = Some(StopReason::MaxEpochs);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};
    use crate::pipeline::one_hot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_instances(n: usize, grid: usize, seed_value: u64) -> Vec<Instance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
        (0..n)
            .map(|k| {
                let class = k % 2 + 1;
                let amp = class as f32;
                let x: Vec<f32> = (0..grid * grid)
                    .map(|c| amp * ((c as f32) * 0.3).sin() + 0.1 * rng.gen::<f32>())
                    .collect();
                Instance {
                    m: vec![x[3], x[grid * grid - 5]],
                    x,
                    y: one_hot(class, 2).unwrap(),
                    scenario_id: 0,
                    step: k as u32,
                }
            })
            .collect()
    }

    fn toy_hyper() -> HyperParams {
        HyperParams {
            alpha: 0.7,
            beta: 1.3,
            mc_samples: 2,
            batch_size: 4,
            microbatch: 3,
            seed: 11,
            ..HyperParams::default()
        }
    }

    fn toy_model() -> (Model, ParamStore<f64>) {
        let (model, store) = init_model(&ModelConfig::new((8, 8), 2, 2, 2), 3).unwrap();
        let mut store = store.cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in store.iter_mut() {
            if p.name.ends_with(".bias") {
                for v in p.value.data_mut() {
                    *v = 0.1 * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        (model, store)
    }

    #[test]
    fn perfect_fit_at_the_prior_is_zero() {
        let x = [0.5, -1.0, 2.0];
        let y = [0.0, 1.0, 0.0, 0.0];
        let prior = LatentPosterior {
            mu: vec![0.0; 2],
            log_var: vec![0.0; 2],
        };
        assert_eq!(instance_terms(&x, &x, &y, &y, &prior), (0.0, 0.0, 0.0));
    }

    #[test]
    fn total_is_the_weighted_sum() {
        let (model, store) = toy_model();
        let data = toy_instances(5, 8, 1);
        let items: Vec<&Instance> = data.iter().collect();
        let hyper = toy_hyper();
        let eps = draw_eps(&mut ChaCha8Rng::seed_from_u64(2), 2, 5, 2);
        let l = elbo_eval(&model, &store, &items, &hyper, &eps).unwrap();
        let expect = l.recon_term + hyper.alpha * l.class_term + hyper.beta * l.kl_term;
        assert!((l.total - expect).abs() <= 1e-9 * l.total.abs().max(1.0));
        assert!(l.recon_term > 0.0 && l.class_term > 0.0 && l.kl_term >= 0.0);
    }

    #[test]
    fn batched_estimator_matches_per_instance_average() {
        let (model, store) = toy_model();
        let data = toy_instances(7, 8, 2);
        let items: Vec<&Instance> = data.iter().collect();
        let hyper = toy_hyper();
        let eps: Vec<Tensor<f64>> = draw_eps(&mut ChaCha8Rng::seed_from_u64(5), 2, 7, 2);
        let batched = elbo_eval(&model, &store, &items, &hyper, &eps).unwrap();

        let (mut recon, mut class, mut kl) = (0.0, 0.0, 0.0);
        for (i, inst) in data.iter().enumerate() {
            let b = Batch::<f64>::from_instances(&model.config, &[inst]).unwrap();
            let enc = model.encode(&store, &b.x, &b.y).unwrap();
            let post = Model::posteriors(&enc).remove(0);
            for e in &eps {
                let z = reparameterize_row(&post, &e.data()[2 * i..2 * i + 2]);
                let z = Tensor::from_vec(&[1, 2], z).unwrap();
                let x_hat = model.decode_x(&store, &z, &b.m).unwrap().out;
                let y_hat = model.decode_y(&store, &z, &b.m).unwrap().probs();
                let (r, c, k) = instance_terms(b.x.data(), x_hat.data(), b.y.data(), y_hat.data(), &post);
                recon += r / 2.0;
                class += c / 2.0;
                kl += k / 2.0;
            }
        }
        let n = data.len() as f64;
        assert!((batched.recon_term - recon / n).abs() < 1e-6 * (recon / n).max(1.0));
        assert!((batched.class_term - class / n).abs() < 1e-6);
        assert!((batched.kl_term - kl / n).abs() < 1e-6);
    }

    fn reparameterize_row(post: &LatentPosterior, eps: &[f64]) -> Vec<f64> {
        super::super::reparameterize(post, eps)
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        let (model, mut store) = toy_model();
        let data = toy_instances(5, 8, 3);
        let items: Vec<&Instance> = data.iter().collect();
        let hyper = toy_hyper();
        let eps: Vec<Tensor<f64>> = draw_eps(&mut ChaCha8Rng::seed_from_u64(6), 2, 5, 2);
        // small step: ReLU kinks within 1e-5 of a pre-activation occur here
        let cfg = GradCheckConfig {
            step: 1e-6,
            tolerance: 1e-3,
            max_elements: Some(60),
            ..GradCheckConfig::default()
        };
        let report = grad_check(
            &mut store,
            |s| elbo_loss(&model, s, &items, &hyper, &eps).map(|l| l.total),
            cfg,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.params.len(), 28);
    }

    #[test]
    fn no_class_gradient_without_alpha() {
        let (model, mut store) = toy_model();
        let data = toy_instances(4, 8, 4);
        let items: Vec<&Instance> = data.iter().collect();
        let hyper = HyperParams {
            alpha: 0.0,
            ..toy_hyper()
        };
        let eps: Vec<Tensor<f64>> = draw_eps(&mut ChaCha8Rng::seed_from_u64(7), 2, 4, 2);
        store.zero_grads();
        elbo_loss(&model, &mut store, &items, &hyper, &eps).unwrap();
        let mut seen = 0;
        for p in store.iter() {
            if p.name.starts_with("decoder_y") {
                seen += 1;
                assert!(p.grad.data().iter().all(|&g| g == 0.0), "{}", p.name);
            } else if p.name.starts_with("decoder_x.dense") {
                assert!(p.grad.data().iter().any(|&g| g != 0.0));
            }
        }
        assert_eq!(seen, 8);
    }

    #[test]
    fn noise_shape_is_checked() {
        let (model, store) = toy_model();
        let data = toy_instances(3, 8, 5);
        let items: Vec<&Instance> = data.iter().collect();
        let eps: Vec<Tensor<f64>> = draw_eps(&mut ChaCha8Rng::seed_from_u64(1), 1, 3, 2);
        assert!(matches!(
            elbo_eval(&model, &store, &items, &toy_hyper(), &eps),
            Err(ScvaeError::Config(_))
        ));
        assert!(elbo_eval(&model, &store, &[], &toy_hyper(), &[]).is_err());
    }

    fn toy_split(n: usize) -> DatasetSplit {
        crate::pipeline::split(toy_instances(n, 8, 9), (0.6, 0.2, 0.2), 1).unwrap()
    }

    #[test]
    fn stalled_optimizer_stops_after_two_epochs() {
        let hyper = HyperParams {
            patience: 1,
            max_epochs: 10,
            adam: AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            ..toy_hyper()
        };
        let out = train(&toy_split(20), &ModelConfig::new((8, 8), 2, 2, 2), &hyper, |_| {}).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.stop, Some(StopReason::Patience));
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.history[0].val, out.history[1].val);
    }

    #[test]
    fn training_is_reproducible_and_keeps_the_best_epoch() {
        let split = toy_split(30);
        let cfg = ModelConfig::new((8, 8), 2, 2, 2);
        let hyper = HyperParams {
            max_epochs: 25,
            patience: 5,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            ..toy_hyper()
        };
        let a = train(&split, &cfg, &hyper, |_| {}).unwrap();
        let b = train(&split, &cfg, &hyper, |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_epoch, b.best_epoch);

        let best = a
            .history
            .iter()
            .map(|r| r.val.total)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.history[a.best_epoch - 1].val.total, best);
        let items: Vec<&Instance> = split.val.iter().collect();
        let eps: Vec<Tensor<f32>> = draw_eps(
            &mut seed::substream_rng(hyper.seed, "train/validation"),
            hyper.mc_samples,
            items.len(),
            2,
        );
        let again = elbo_eval(&a.model, &a.params, &items, &hyper, &eps).unwrap();
        assert_eq!(again.total, best);
        assert!(a.history.last().unwrap().val.total >= best);
    }

    #[test]
    fn divergence_reports_and_keeps_parameters() {
        let mut split = toy_split(20);
        split.train[0].x[0] = f32::NAN;
        let cfg = ModelConfig::new((8, 8), 2, 2, 2);
        match train(&split, &cfg, &toy_hyper(), |_| {}) {
            Err(ScvaeError::Diverged {
                epoch,
                best_epoch,
                partial,
                ..
            }) => {
                assert_eq!(epoch, 1);
                assert_eq!(best_epoch, 0);
                assert!(partial.params.all_finite());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_hyper_parameters_rejected() {
        let split = toy_split(20);
        let cfg = ModelConfig::new((8, 8), 2, 2, 2);
        for hyper in [
            HyperParams { beta: 0.0, ..toy_hyper() },
            HyperParams { alpha: -1.0, ..toy_hyper() },
            HyperParams { batch_size: 1000, ..toy_hyper() },
            HyperParams { mc_samples: 0, ..toy_hyper() },
            HyperParams { latent_dim: 3, ..toy_hyper() },
        ] {
            assert!(matches!(train(&split, &cfg, &hyper, |_| {}), Err(ScvaeError::Config(_))));
        }
    }
}
