use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ScvaeError;
use crate::nn::{
    concat_channels, relu, relu_backward, softmax, split_channels, Conv2d, ConvTranspose2d, Dense,
    Layer, NnError, ParamStore, Real, Tensor,
};

/// Network geometry. Layer widths default to the reference architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub n_classes: usize,
    pub n_wells: usize,
    pub latent_dim: usize,
    pub enc_filters: (usize, usize),
    pub enc_hidden: usize,
    pub dec_filters: (usize, usize),
    pub dec_y_hidden: (usize, usize, usize),
}

impl ModelConfig {
    pub fn new(grid: (usize, usize), n_classes: usize, n_wells: usize, latent_dim: usize) -> Self {
        ModelConfig {
            grid_h: grid.0,
            grid_w: grid.1,
            n_classes,
            n_wells,
            latent_dim,
            enc_filters: (32, 64),
            enc_hidden: 16,
            dec_filters: (64, 32),
            dec_y_hidden: (128, 64, 32),
        }
    }

    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn validate(&self) -> Result<(), ScvaeError> {
        if self.grid_h == 0 || self.grid_w == 0 || !self.grid_h.is_multiple_of(4) || !self.grid_w.is_multiple_of(4) {
            return Err(ScvaeError::Config(format!(
                "grid {}x{} must be non-empty and divisible by 4",
                self.grid_h, self.grid_w
            )));
        }
        if self.n_classes < 2 {
            return Err(ScvaeError::Config("need at least two classes".into()));
        }
        if self.n_wells == 0 || self.latent_dim == 0 {
            return Err(ScvaeError::Config(
                "latent_dim and the number of wells must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Diagonal Gaussian `q(z | x, y)` for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentPosterior {
    pub fn std(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// `z = mu + exp(log_var / 2) * eps`.
pub fn reparameterize(post: &LatentPosterior, eps: &[f64]) -> Vec<f64> {
    assert_eq!(post.mu.len(), eps.len(), "eps length must match the latent size");
    post.mu
        .iter()
        .zip(&post.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// `KL(N(mu, diag(exp(log_var))) || N(0, I))`.
pub fn kl_closed_form(post: &LatentPosterior) -> f64 {
    0.5 * post
        .mu
        .iter()
        .zip(&post.log_var)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Intermediate activations of [`Model::encode`], needed for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    y: Tensor<T>,
    embed: Tensor<T>,
    stacked: Tensor<T>,
    c1: Tensor<T>,
    c2: Tensor<T>,
    hidden: Tensor<T>,
    pub mu: Tensor<T>,
    pub log_var: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DecoderXCache<T> {
    zm: Tensor<T>,
    h0: Tensor<T>,
    t1: Tensor<T>,
    t2: Tensor<T>,
    pub out: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DecoderYCache<T> {
    zm: Tensor<T>,
    h1: Tensor<T>,
    h2: Tensor<T>,
    h3: Tensor<T>,
    pub logits: Tensor<T>,
}

impl<T: Real> DecoderYCache<T> {
    pub fn probs(&self) -> Tensor<T> {
        softmax(&self.logits)
    }
}

/// Layer handles; parameter values live in a separate [`ParamStore`], so the
/// same model drives `f32` training and `f64` gradient checks.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    enc_embed: Dense,
    enc_conv1: Conv2d,
    enc_conv2: Conv2d,
    enc_dense: Dense,
    enc_mu: Dense,
    enc_log_var: Dense,
    dx_dense: Dense,
    dx_up1: ConvTranspose2d,
    dx_up2: ConvTranspose2d,
    dx_out: ConvTranspose2d,
    dy1: Dense,
    dy2: Dense,
    dy3: Dense,
    dy_out: Dense,
}

fn with_batch(n: usize, s: &[usize]) -> Vec<usize> {
    let mut v = vec![n];
    v.extend_from_slice(s);
    v
}

impl Model {
    /// Register all parameters (zero-filled) in `store`.
    pub fn build<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>) -> Result<Self, ScvaeError> {
        config.validate()?;
        let c = config;
        let (h, w) = (c.grid_h, c.grid_w);
        let (f1, f2) = c.enc_filters;
        let (g1, g2) = c.dec_filters;
        let (k1, k2, k3) = c.dec_y_hidden;
        let cond = c.latent_dim + c.n_wells;
        let enc_flat = (h / 4) * (w / 4) * f2;
        Ok(Model {
            enc_embed: Dense::new(store, "encoder.embed", c.n_classes, h * w)?,
            enc_conv1: Conv2d::new(store, "encoder.conv1", (h, w, 2), f1, 2)?,
            enc_conv2: Conv2d::new(store, "encoder.conv2", (h / 2, w / 2, f1), f2, 2)?,
            enc_dense: Dense::new(store, "encoder.dense", enc_flat, c.enc_hidden)?,
            enc_mu: Dense::new(store, "encoder.mu", c.enc_hidden, c.latent_dim)?,
            enc_log_var: Dense::new(store, "encoder.log_var", c.enc_hidden, c.latent_dim)?,
            dx_dense: Dense::new(store, "decoder_x.dense", cond, (h / 4) * (w / 4) * g1)?,
            dx_up1: ConvTranspose2d::new(store, "decoder_x.up1", (h / 4, w / 4, g1), g1, 2)?,
            dx_up2: ConvTranspose2d::new(store, "decoder_x.up2", (h / 2, w / 2, g1), g2, 2)?,
            dx_out: ConvTranspose2d::new(store, "decoder_x.out", (h, w, g2), 1, 1)?,
            dy1: Dense::new(store, "decoder_y.dense1", cond, k1)?,
            dy2: Dense::new(store, "decoder_y.dense2", k1, k2)?,
            dy3: Dense::new(store, "decoder_y.dense3", k2, k3)?,
            dy_out: Dense::new(store, "decoder_y.out", k3, c.n_classes)?,
            config: c.clone(),
        })
    }

    pub fn init<T: Real, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.enc_embed.init(store, rng);
        self.enc_conv1.init(store, rng);
        self.enc_conv2.init(store, rng);
        self.enc_dense.init(store, rng);
        self.enc_mu.init(store, rng);
        self.enc_log_var.init(store, rng);
        self.dx_dense.init(store, rng);
        self.dx_up1.init(store, rng);
        self.dx_up2.init(store, rng);
        self.dx_out.init(store, rng);
        self.dy1.init(store, rng);
        self.dy2.init(store, rng);
        self.dy3.init(store, rng);
        self.dy_out.init(store, rng);
    }

    /// `x`: `[n, h, w, 1]`, `y`: `[n, r]`.
    pub fn encode<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        y: &Tensor<T>,
    ) -> Result<EncoderCache<T>, NnError> {
        let c = &self.config;
        let n = x.shape().first().copied().unwrap_or(0);
        x.expect_shape("encoder x", &[n, c.grid_h, c.grid_w, 1])?;
        y.expect_shape("encoder y", &[n, c.n_classes])?;
        let embed = relu(&self.enc_embed.forward(store, y)?);
        let img = embed.clone().reshape(&[n, c.grid_h, c.grid_w, 1])?;
        let stacked = concat_channels(x, &img)?;
        let c1 = relu(&self.enc_conv1.forward(store, &stacked)?);
        let c2 = relu(&self.enc_conv2.forward(store, &c1)?);
        let flat = c2.clone().reshape(&[n, self.enc_dense.d_in])?;
        let hidden = relu(&self.enc_dense.forward(store, &flat)?);
        let mu = self.enc_mu.forward(store, &hidden)?;
        let log_var = self.enc_log_var.forward(store, &hidden)?;
        Ok(EncoderCache {
            y: y.clone(),
            embed,
            stacked,
            c1,
            c2,
            hidden,
            mu,
            log_var,
        })
    }

    /// Accumulate encoder parameter gradients given `dL/dmu` and `dL/dlog_var`.
    pub fn encode_backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &EncoderCache<T>,
        g_mu: &Tensor<T>,
        g_log_var: &Tensor<T>,
    ) -> Result<(), NnError> {
        let c = &self.config;
        let n = cache.mu.dim(0);
        let mut g_hidden = self.enc_mu.backward(store, &cache.hidden, g_mu)?;
        let g2 = self.enc_log_var.backward(store, &cache.hidden, g_log_var)?;
        for (a, &b) in g_hidden.data_mut().iter_mut().zip(g2.data()) {
            *a = *a + b;
        }
        let g_hidden = relu_backward(&cache.hidden, &g_hidden);
        let flat = cache.c2.clone().reshape(&[n, self.enc_dense.d_in])?;
        let g_flat = self.enc_dense.backward(store, &flat, &g_hidden)?;
        let g_c2 = relu_backward(&cache.c2, &g_flat.reshape(cache.c2.shape())?);
        let g_c1 = self.enc_conv2.backward(store, &cache.c1, &g_c2)?;
        let g_c1 = relu_backward(&cache.c1, &g_c1);
        let g_stacked = self.enc_conv1.backward(store, &cache.stacked, &g_c1)?;
        let (_, g_img) = split_channels(&g_stacked, 1)?;
        let g_embed = relu_backward(&cache.embed, &g_img.reshape(&[n, c.cells()])?);
        self.enc_embed.backward(store, &cache.y, &g_embed)?;
        Ok(())
    }

    fn condition<T: Real>(&self, z: &Tensor<T>, m: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = z.shape().first().copied().unwrap_or(0);
        z.expect_shape("latent", &[n, self.config.latent_dim])?;
        m.expect_shape("measurements", &[n, self.config.n_wells])?;
        concat_channels(z, m)
    }

    /// Reconstructed field `[n, h, w, 1]` for latent `z: [n, J]` and wells `m: [n, M]`.
    pub fn decode_x<T: Real>(
        &self,
        store: &ParamStore<T>,
        z: &Tensor<T>,
        m: &Tensor<T>,
    ) -> Result<DecoderXCache<T>, NnError> {
        let zm = self.condition(z, m)?;
        let n = zm.dim(0);
        let h0 = self
            .dx_dense
            .forward(store, &zm)?
            .reshape(&with_batch(n, &Layer::<T>::in_shape(&self.dx_up1)))?;
        let t1 = relu(&self.dx_up1.forward(store, &h0)?);
        let t2 = relu(&self.dx_up2.forward(store, &t1)?);
        let out = self.dx_out.forward(store, &t2)?;
        Ok(DecoderXCache { zm, h0, t1, t2, out })
    }

    /// Returns `dL/dz` and accumulates decoder gradients.
    pub fn decode_x_backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &DecoderXCache<T>,
        g_out: &Tensor<T>,
    ) -> Result<Tensor<T>, NnError> {
        let n = cache.zm.dim(0);
        let g_t2 = self.dx_out.backward(store, &cache.t2, g_out)?;
        let g_t2 = relu_backward(&cache.t2, &g_t2);
        let g_t1 = self.dx_up2.backward(store, &cache.t1, &g_t2)?;
        let g_t1 = relu_backward(&cache.t1, &g_t1);
        let g_h0 = self.dx_up1.backward(store, &cache.h0, &g_t1)?;
        let g_h0 = g_h0.reshape(&[n, self.dx_dense.d_out])?;
        let g_zm = self.dx_dense.backward(store, &cache.zm, &g_h0)?;
        Ok(split_channels(&g_zm, self.config.latent_dim)?.0)
    }

    /// Class logits `[n, r]`; probabilities via [`DecoderYCache::probs`].
    pub fn decode_y<T: Real>(
        &self,
        store: &ParamStore<T>,
        z: &Tensor<T>,
        m: &Tensor<T>,
    ) -> Result<DecoderYCache<T>, NnError> {
        let zm = self.condition(z, m)?;
        let h1 = relu(&self.dy1.forward(store, &zm)?);
        let h2 = relu(&self.dy2.forward(store, &h1)?);
        let h3 = relu(&self.dy3.forward(store, &h2)?);
        let logits = self.dy_out.forward(store, &h3)?;
        Ok(DecoderYCache {
            zm,
            h1,
            h2,
            h3,
            logits,
        })
    }

    /// Backward from `dL/dlogits`; returns `dL/dz`.
    pub fn decode_y_backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        cache: &DecoderYCache<T>,
        g_logits: &Tensor<T>,
    ) -> Result<Tensor<T>, NnError> {
        let g = self.dy_out.backward(store, &cache.h3, g_logits)?;
        let g = self.dy3.backward(store, &cache.h2, &relu_backward(&cache.h3, &g))?;
        let g = self.dy2.backward(store, &cache.h1, &relu_backward(&cache.h2, &g))?;
        let g = self.dy1.backward(store, &cache.zm, &relu_backward(&cache.h1, &g))?;
        Ok(split_channels(&g, self.config.latent_dim)?.0)
    }

    /// Per-instance posteriors from an encoder pass.
    pub fn posteriors<T: Real>(cache: &EncoderCache<T>) -> Vec<LatentPosterior> {
        let j = cache.mu.dim(1);
        cache
            .mu
            .data()
            .chunks_exact(j)
            .zip(cache.log_var.data().chunks_exact(j))
            .map(|(m, lv)| LatentPosterior {
                mu: m.iter().map(|v| v.as_f64()).collect(),
                log_var: lv.iter().map(|v| v.as_f64()).collect(),
            })
            .collect()
    }
}
