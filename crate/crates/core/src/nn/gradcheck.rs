//! Central finite-difference verification of analytic gradients.

use super::ParamStore;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding compare absolutely.
    pub floor: f64,
    /// Check at most this many evenly spaced elements per parameter.
    pub max_elements: Option<usize>,
}

impl GradCheckConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckConfig {
            tolerance,
            ..Self::default()
        }
    }
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_elements: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    /// Parameters whose worst element exceeds the tolerance.
    pub fn flagged(&self) -> Vec<&ParamCheck> {
        self.params
            .iter()
            .filter(|p| !(p.max_rel_error < self.tolerance))
            .collect()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<32} n={:<6} max_rel={:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
                p.name, p.checked, p.max_rel_error, p.worst_index, p.analytic, p.numeric
            )?;
        }
        Ok(())
    }
}

fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare the gradients that `loss` accumulates into `store` against central
/// differences of its return value.
///
/// `loss` must be deterministic and must add (not assign) its gradients; the
/// checker zeroes them before every call.
pub fn grad_check<F, E>(
    store: &mut ParamStore<f64>,
    mut loss: F,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut ParamStore<f64>) -> Result<f64, E>,
{
    store.zero_grads();
    loss(store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();

    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for (id, grads) in ids.into_iter().zip(analytic) {
        let len = grads.len();
        let stride = match cfg.max_elements {
            Some(k) if k > 0 && len > k => len.div_ceil(k),
            _ => 1,
        };
        let mut check = ParamCheck {
            name: store.param(id).name.clone(),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in (0..len).step_by(stride) {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + cfg.step;
            store.zero_grads();
            let plus = loss(store)?;
            store.value_mut(id).data_mut()[i] = orig - cfg.step;
            store.zero_grads();
            let minus = loss(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(grads[i], numeric, cfg.floor);
            check.checked += 1;
            if err > check.max_rel_error || !err.is_finite() {
                check.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                check.worst_index = i;
                check.analytic = grads[i];
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    store.zero_grads();
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Layer, NnError, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore<f64>, Dense, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = ParamStore::new();
        let d = Dense::new(&mut s, "dense", 5, 2).unwrap();
        d.init(&mut s, &mut rng);
        for b in s.value_mut(d.bias).data_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        s.add("input", Tensor::from_vec(&[3, 5], x).unwrap()).unwrap();
        let proj: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (s, d, proj)
    }

    fn dense_loss(
        d: &Dense,
        proj: &[f64],
        s: &mut ParamStore<f64>,
        scale: f64,
    ) -> Result<f64, NnError> {
        let input_id = s.find("input").unwrap();
        let x = s.value(input_id).clone();
        let y = d.forward(s, &x)?;
        let loss = y.data().iter().zip(proj).map(|(a, b)| a * b).sum();
        let g = Tensor::from_vec(&[3, 2], proj.iter().map(|p| p * scale).collect())?;
        let gx = d.backward(s, &x, &g)?;
        for (acc, v) in s.grad_mut(input_id).data_mut().iter_mut().zip(gx.data()) {
            *acc += v;
        }
        Ok(loss)
    }

    #[test]
    fn dense_layer_passes() {
        let (mut s, d, proj) = setup();
        let report = grad_check(
            &mut s,
            |s| dense_loss(&d, &proj, s, 1.0),
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.max_rel_error() < 1e-4);
    }

    #[test]
    fn corrupted_backward_is_flagged() {
        let (mut s, d, proj) = setup();
        let report = grad_check(
            &mut s,
            |s| dense_loss(&d, &proj, s, 2.0),
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.flagged().len(), 3);
    }
}
