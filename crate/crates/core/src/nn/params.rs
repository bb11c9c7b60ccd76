use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{NnError, Real, Tensor};

/// Index of an entry in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named trainable arrays, each paired with a gradient buffer of the same
/// shape. Entry order is insertion order and defines the checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, NnError> {
        if self.find(name).is_some() {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.value.is_finite())
    }

    /// Replace all values with those of `other`, which must have the same
    /// layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<(), NnError> {
        self.check_same_layout(other)?;
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    pub fn check_same_layout<U: Real>(&self, other: &ParamStore<U>) -> Result<(), NnError> {
        if self.entries.len() != other.entries.len() {
            return Err(NnError::Shape(format!(
                "parameter count {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(NnError::Shape(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Convert every value to another precision; gradients are reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: Tensor::zeros(p.value.shape()),
                })
                .collect(),
        }
    }

    /// Glorot-uniform fill: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot_uniform<R: Rng>(
        &mut self,
        id: ParamId,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        for v in self.entries[id.0].value.data_mut() {
            *v = T::from_f64_lossy(dist.sample(rng));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(
            s.add("w", Tensor::zeros(&[3])),
            Err(NnError::DuplicateParam(_))
        ));
    }

    #[test]
    fn grad_shape_follows_value() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("k", Tensor::zeros(&[2, 2, 3, 4])).unwrap();
        assert_eq!(s.grad(id).shape(), s.value(id).shape());
    }

    #[test]
    fn glorot_is_bounded_and_seeded() {
        let mut a = ParamStore::<f64>::new();
        let id = a.add("w", Tensor::zeros(&[10, 20])).unwrap();
        let mut b = a.clone();
        a.glorot_uniform(id, 10, 20, &mut ChaCha8Rng::seed_from_u64(3));
        b.glorot_uniform(id, 10, 20, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.value(id), b.value(id));
        let lim = (6.0f64 / 30.0).sqrt();
        assert!(a.value(id).data().iter().all(|v| v.abs() <= lim));
    }
}
