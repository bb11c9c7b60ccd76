use super::{NnError, Real};

/// Dense row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, NnError> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(NnError::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Same data, new shape of equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(NnError::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn dot(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub(crate) fn expect_shape(&self, op: &str, want: &[usize]) -> Result<(), NnError> {
        if self.shape != want {
            return Err(NnError::Shape(format!(
                "{op}: expected shape {:?}, got {:?}",
                want, self.shape
            )));
        }
        Ok(())
    }
}

/// Concatenate two NHWC tensors along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        return Err(NnError::Shape(format!(
            "concat: leading dims differ, {:?} vs {:?}",
            sa, sb
        )));
    }
    let ca = *sa.last().unwrap();
    let cb = *sb.last().unwrap();
    let rows = a.len() / ca.max(1);
    let mut data = Vec::with_capacity(a.len() + b.len());
    for r in 0..rows {
        data.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
        data.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
    }
    let mut shape = sa.to_vec();
    *shape.last_mut().unwrap() = ca + cb;
    Tensor::from_vec(&shape, data)
}

/// Split the trailing axis into `[.., first]` and `[.., rest]`; inverse of
/// [`concat_channels`].
pub fn split_channels<T: Real>(
    t: &Tensor<T>,
    first: usize,
) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    let s = t.shape();
    let c = *s
        .last()
        .ok_or_else(|| NnError::Shape("split of a scalar".into()))?;
    if first > c {
        return Err(NnError::Shape(format!(
            "split: {first} exceeds channel count {c}"
        )));
    }
    let rest = c - first;
    let rows = t.len() / c.max(1);
    let mut a = Vec::with_capacity(rows * first);
    let mut b = Vec::with_capacity(rows * rest);
    for r in 0..rows {
        let row = &t.data()[r * c..(r + 1) * c];
        a.extend_from_slice(&row[..first]);
        b.extend_from_slice(&row[first..]);
    }
    let mut sa = s.to_vec();
    let mut sb = s.to_vec();
    *sa.last_mut().unwrap() = first;
    *sb.last_mut().unwrap() = rest;
    Ok((Tensor::from_vec(&sa, a)?, Tensor::from_vec(&sb, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor::from_vec(&[2, 2, 1], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2, 2], (10..18).map(f64::from).collect()).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 3]);
        assert_eq!(&c.data()[..6], &[1.0, 10.0, 11.0, 2.0, 12.0, 13.0]);
        let (a2, b2) = split_channels(&c, 1).unwrap();
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn reshape_keeps_data() {
        let t = Tensor::from_vec(&[4], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let r = t.clone().reshape(&[2, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[3]).is_err());
    }
}
