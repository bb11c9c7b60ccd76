//! Posterior-predictive inference from well measurements alone: latent draws
//! come from the `N(0, I)` prior and are decoded together with `m`.

use crate::nn::{NnError, ParamStore, Tensor};
use crate::scvae::{draw_eps, Model};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum PosteriorError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("parameters contain non-finite values")]
    NonFiniteParams,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("not a probability vector (sum {0})")]
    NotSimplex(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorConfig {
    pub n_mc: usize,
    pub seed: u64,
    pub store_full_cov: bool,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig {
            n_mc: 100,
            seed: 0,
            store_full_cov: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Row-major `d x d`, only when requested.
    pub cov: Option<Vec<f64>>,
}

const DECODE_CHUNK: usize = 32;

fn prepare(model: &Model, store: &ParamStore<f32>, m: &[f32], cfg: &PosteriorConfig) -> Result<Vec<Tensor<f32>>, PosteriorError> {
    if !store.all_finite() {
        return Err(PosteriorError::NonFiniteParams);
    }
    if m.len() != model.config.n_wells {
        return Err(PosteriorError::Shape(format!(
            "{} measurements given, model expects {}",
            m.len(),
            model.config.n_wells
        )));
    }
    if cfg.n_mc == 0 {
        return Err(PosteriorError::TooFewSamples { need: 1, got: 0 });
    }
    let mut rng = seed::rng(cfg.seed);
    let j = model.config.latent_dim;
    let mut chunks = Vec::new();
    let mut left = cfg.n_mc;
    while left > 0 {
        let k = left.min(DECODE_CHUNK);
        chunks.extend(draw_eps::<f32, _>(&mut rng, 1, k, j));
        left -= k;
    }
    Ok(chunks)
}

fn tile(m: &[f32], k: usize) -> Tensor<f32> {
    let data = (0..k).flat_map(|_| m.iter().copied()).collect();
    Tensor::from_vec(&[k, m.len()], data).expect("sized")
}

fn split_rows(t: &Tensor<f32>) -> impl Iterator<Item = Vec<f32>> + '_ {
    let w = t.len() / t.dim(0).max(1);
    t.data().chunks_exact(w).map(|r| r.to_vec())
}

/// `n_mc` reconstructed fields (row-major, `grid_h * grid_w` each).
///
/// Draws are a pure function of `cfg.seed`; [`sample_posterior_y`] with the
/// same config decodes the same latent draws.
pub fn sample_posterior_x(
    model: &Model,
    store: &ParamStore<f32>,
    m: &[f32],
    cfg: &PosteriorConfig,
) -> Result<Vec<Vec<f32>>, PosteriorError> {
    let mut out = Vec::with_capacity(cfg.n_mc);
    for z in prepare(model, store, m, cfg)? {
        let d = model.decode_x(store, &z, &tile(m, z.dim(0)))?;
        out.extend(split_rows(&d.out));
    }
    Ok(out)
}

/// `n_mc` class-probability vectors.
pub fn sample_posterior_y(
    model: &Model,
    store: &ParamStore<f32>,
    m: &[f32],
    cfg: &PosteriorConfig,
) -> Result<Vec<Vec<f32>>, PosteriorError> {
    let mut out = Vec::with_capacity(cfg.n_mc);
    for z in prepare(model, store, m, cfg)? {
        let d = model.decode_y(store, &z, &tile(m, z.dim(0)))?;
        out.extend(split_rows(&d.probs()));
    }
    Ok(out)
}

/// Sample mean, `1/(n-1)` covariance (optional) and standard deviation.
pub fn summarize<S: AsRef<[f32]>>(samples: &[S], full_cov: bool) -> Result<PosteriorSummary, PosteriorError> {
    let n = samples.len();
    if n < 2 {
        return Err(PosteriorError::TooFewSamples { need: 2, got: n });
    }
    let d = samples[0].as_ref().len();
    if samples.iter().any(|s| s.as_ref().len() != d) {
        return Err(PosteriorError::Shape("samples differ in length".into()));
    }
    let mut mean = vec![0.0f64; d];
    for s in samples {
        for (a, &v) in mean.iter_mut().zip(s.as_ref()) {
            *a += f64::from(v);
        }
    }
    for a in &mut mean {
        *a /= n as f64;
    }
    let denom = (n - 1) as f64;
    let centered = |s: &S, i: usize| f64::from(s.as_ref()[i]) - mean[i];
    let cov = full_cov.then(|| {
        let mut c = vec![0.0f64; d * d];
        for s in samples {
            for i in 0..d {
                let ci = centered(s, i);
                for j in i..d {
                    c[i * d + j] += ci * centered(s, j);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                c[i * d + j] /= denom;
                c[j * d + i] = c[i * d + j];
            }
        }
        c
    });
    let std = match &cov {
        Some(c) => (0..d).map(|i| c[i * d + i].sqrt()).collect(),
        None => {
            let mut v = vec![0.0f64; d];
            for s in samples {
                for (i, a) in v.iter_mut().enumerate() {
                    let ci = centered(s, i);
                    *a += ci * ci;
                }
            }
            v.into_iter().map(|a| (a / denom).sqrt()).collect()
        }
    };
    Ok(PosteriorSummary { mean, std, cov })
}

/// 1-based index of the largest probability; ties go to the lowest index.
pub fn classify(y_mean: &[f64]) -> Result<usize, PosteriorError> {
    let sum: f64 = y_mean.iter().sum();
    if y_mean.is_empty() || !((sum - 1.0).abs() <= 1e-4) || y_mean.iter().any(|&p| !(p >= -1e-12)) {
        return Err(PosteriorError::NotSimplex(sum));
    }
    let mut best = 0;
    for (j, &p) in y_mean.iter().enumerate() {
        if p > y_mean[best] {
            best = j;
        }
    }
    Ok(best + 1)
}

pub fn abs_error_map(x_true: &[f32], x_mean: &[f64]) -> Result<Vec<f64>, PosteriorError> {
    if x_true.len() != x_mean.len() {
        return Err(PosteriorError::Shape(format!(
            "truth has {} cells, mean has {}",
            x_true.len(),
            x_mean.len()
        )));
    }
    Ok(x_true
        .iter()
        .zip(x_mean)
        .map(|(&t, &m)| (f64::from(t) - m).abs())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scvae::{init_model, ModelConfig};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained_like() -> (Model, ParamStore<f32>) {
        let (model, mut store) = init_model(&ModelConfig::new((8, 8), 4, 3, 2), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in store.iter_mut() {
            if p.name.ends_with(".bias") {
                for v in p.value.data_mut() {
                    *v = rng.gen_range(-0.3..0.3);
                }
            }
        }
        (model, store)
    }

    const M: [f32; 3] = [0.4, -1.2, 2.0];

    #[test]
    fn two_sample_summary() {
        let s = summarize(&[vec![0.0f32, 0.0], vec![2.0, 2.0]], true).unwrap();
        assert_eq!(s.mean, vec![1.0, 1.0]);
        assert_eq!(s.cov.as_deref(), Some(&[2.0, 2.0, 2.0, 2.0][..]));
        assert_eq!(s.std, vec![2f64.sqrt(), 2f64.sqrt()]);
    }

    #[test]
    fn repeated_sample_has_zero_spread() {
        let s = summarize(&vec![vec![0.3f32, -7.0, 1.5]; 5], false).unwrap();
        assert!(s.std.iter().all(|&v| v == 0.0));
        assert!(s.cov.is_none());
    }

    #[test]
    fn summary_rejects_small_or_ragged_input() {
        assert!(matches!(
            summarize::<Vec<f32>>(&[], false),
            Err(PosteriorError::TooFewSamples { .. })
        ));
        assert!(summarize(&[vec![1.0f32]], false).is_err());
        assert!(summarize(&[vec![1.0f32], vec![1.0, 2.0]], false).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&[0.1, 0.2, 0.3, 0.4]).unwrap(), 4);
        assert_eq!(classify(&[0.5, 0.5]).unwrap(), 1);
        assert_eq!(classify(&[0.2, 0.4, 0.4]).unwrap(), 2);
        assert_eq!(classify(&[0.25; 4]).unwrap(), 1);
        assert!(classify(&[0.5, 0.6]).is_err());
        assert!(classify(&[1.2, -0.2]).is_err());
        assert!(classify(&[]).is_err());
    }

    #[test]
    fn abs_error_examples() {
        let t = [1.0f32, -2.0, 0.5];
        assert_eq!(abs_error_map(&t, &[1.0, -2.0, 0.5]).unwrap(), vec![0.0; 3]);
        assert_eq!(abs_error_map(&[0.0; 3], &[1.0, -2.0, 0.5]).unwrap(), vec![1.0, 2.0, 0.5]);
        assert!(abs_error_map(&t, &[1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f32> = (0..50).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let map = abs_error_map(&a, &b).unwrap();
        for i in 0..50 {
            let d = f64::from(a[i]) - b[i];
            assert_eq!(map[i], if d < 0.0 { -d } else { d });
        }
    }

    #[test]
    fn zero_latent_weights_give_identical_draws() {
        let (model, mut store) = trained_like();
        for name in ["decoder_x.dense.weight", "decoder_y.dense1.weight"] {
            let id = store.find(name).unwrap();
            let j = model.config.latent_dim;
            let cols = store.value(id).dim(1);
            // rows of the latent inputs only
            for v in &mut store.value_mut(id).data_mut()[..j * cols] {
                *v = 0.0;
            }
        }
        let cfg = PosteriorConfig {
            n_mc: 10,
            ..PosteriorConfig::default()
        };
        let xs = sample_posterior_x(&model, &store, &M, &cfg).unwrap();
        assert!(xs.iter().all(|x| x == &xs[0]));
        let s = summarize(&xs, false).unwrap();
        assert!(s.std.iter().all(|&v| v == 0.0));
        let ys = sample_posterior_y(&model, &store, &M, &cfg).unwrap();
        assert!(ys.iter().all(|y| y == &ys[0]));
    }

    #[test]
    fn zero_parameter_class_draws_are_uniform() {
        let (model, mut store) = trained_like();
        for p in store.iter_mut() {
            p.value.fill(0.0);
        }
        let ys = sample_posterior_y(&model, &store, &M, &PosteriorConfig::default()).unwrap();
        assert_eq!(ys.len(), 100);
        assert!(ys.iter().all(|y| y.iter().all(|&p| p == 0.25)));
    }

    #[test]
    fn draws_are_on_the_simplex_and_reproducible() {
        let (model, store) = trained_like();
        let cfg = PosteriorConfig {
            n_mc: 77,
            seed: 9,
            store_full_cov: true,
        };
        let a = sample_posterior_y(&model, &store, &M, &cfg).unwrap();
        let b = sample_posterior_y(&model, &store, &M, &cfg).unwrap();
        assert_eq!(a, b);
        for y in &a {
            assert!((y.iter().map(|&p| f64::from(p)).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let sa = summarize(&a, true).unwrap();
        let sb = summarize(&b, true).unwrap();
        assert_eq!(sa, sb);
        assert!((sa.mean.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(sa.std.iter().any(|&s| s > 0.0));

        let d = sa.mean.len();
        let cov = sa.cov.unwrap();
        for i in 0..d {
            assert_eq!(sa.std[i], cov[i * d + i].sqrt());
        }
        let eig = DMatrix::from_row_slice(d, d, &cov).symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-8), "{eig}");

        let xa = sample_posterior_x(&model, &store, &M, &cfg).unwrap();
        assert_eq!(xa, sample_posterior_x(&model, &store, &M, &cfg).unwrap());
        let other = PosteriorConfig { seed: 10, ..cfg };
        assert_ne!(xa, sample_posterior_x(&model, &store, &M, &other).unwrap());
    }

    #[test]
    fn nan_parameters_and_bad_measurements_rejected() {
        let (model, mut store) = trained_like();
        assert!(matches!(
            sample_posterior_x(&model, &store, &[1.0], &PosteriorConfig::default()),
            Err(PosteriorError::Shape(_))
        ));
        store.iter_mut().next().unwrap().value.data_mut()[0] = f32::NAN;
        assert!(matches!(
            sample_posterior_y(&model, &store, &M, &PosteriorConfig::default()),
            Err(PosteriorError::NonFiniteParams)
        ));
    }

    #[test]
    fn mc_mean_converges() {
        let (model, store) = trained_like();
        let small = sample_posterior_x(&model, &store, &M, &PosteriorConfig { n_mc: 10_000, seed: 1, ..Default::default() }).unwrap();
        let large = sample_posterior_x(&model, &store, &M, &PosteriorConfig { n_mc: 100_000, seed: 2, ..Default::default() }).unwrap();
        let s = summarize(&small, false).unwrap();
        let l = summarize(&large, false).unwrap();
        let cells = s.mean.len();
        for k in 0..10 {
            let c = k * cells / 10 + 3;
            // standard error of the difference of two independent means
            let se = (s.std[c].powi(2) / 1e4 + l.std[c].powi(2) / 1e5).sqrt();
            assert!((s.mean[c] - l.mean[c]).abs() <= 3.0 * se.max(1e-9), "cell {c}");
        }
    }

    proptest! {
        #[test]
        fn summary_is_permutation_invariant(seed_value in 0u64..1000, n in 2usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
            let samples: Vec<Vec<f32>> = (0..n).map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut rng);
            let a = summarize(&samples, true).unwrap();
            let b = summarize(&shuffled, true).unwrap();
            for (x, y) in a.mean.iter().zip(&b.mean).chain(a.std.iter().zip(&b.std)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            for (x, y) in a.cov.unwrap().iter().zip(&b.cov.unwrap()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
