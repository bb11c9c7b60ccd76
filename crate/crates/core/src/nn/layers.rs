//! Layers with hand-written backward passes.
//!
//! All tensors are batch-major; spatial tensors use NHWC layout. The
//! convolutions here only support kernel size equal to stride (non-overlapping
//! patches), which is what the stride-2/kernel-2 architecture needs and makes
//! the forward map a pure gather followed by a matrix product.

use rand::Rng;

use super::{NnError, ParamId, ParamStore, Real, Tensor};

/// A parametric layer with fixed per-sample input and output shapes.
pub trait Layer<T: Real> {
    fn name(&self) -> &str;

    /// Per-sample input shape (no batch axis).
    fn in_shape(&self) -> Vec<usize>;

    /// Per-sample output shape (no batch axis).
    fn out_shape(&self) -> Vec<usize>;

    fn forward(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>, NnError>;

    /// Accumulates parameter gradients into `store` and returns the gradient
    /// with respect to `input`.
    fn backward(
        &self,
        store: &mut ParamStore<T>,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>, NnError>;

    /// Seeded Glorot-uniform weights and zero bias.
    fn init<R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R);
}

fn batch_of(op: &str, t: &Tensor<impl Real>, per_sample: &[usize]) -> Result<usize, NnError> {
    let s = t.shape();
    if s.len() != per_sample.len() + 1 || &s[1..] != per_sample {
        return Err(NnError::Shape(format!(
            "{op}: expected [n, {:?}], got {:?}",
            per_sample, s
        )));
    }
    Ok(s[0])
}

fn with_batch(n: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(per_sample.len() + 1);
    v.push(n);
    v.extend_from_slice(per_sample);
    v
}

/// Fully connected layer `out = input * W + b`, with `W` of shape `[d_in, d_out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    name: String,
    pub d_in: usize,
    pub d_out: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self, NnError> {
        if d_in == 0 || d_out == 0 {
            return Err(NnError::Shape(format!("{name}: zero-width dense layer")));
        }
        let weight = store.add(&format!("{name}.weight"), Tensor::zeros(&[d_in, d_out]))?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[d_out]))?;
        Ok(Dense {
            name: name.to_string(),
            d_in,
            d_out,
            weight,
            bias,
        })
    }
}

impl<T: Real> Layer<T> for Dense {
    fn name(&self) -> &str {
        &self.name
    }

    fn in_shape(&self) -> Vec<usize> {
        vec![self.d_in]
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.d_out]
    }

    fn forward(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = batch_of(&self.name, input, &[self.d_in])?;
        let bias = store.value(self.bias).data();
        let mut out = Vec::with_capacity(n * self.d_out);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        T::gemm(
            false,
            false,
            n,
            self.d_out,
            self.d_in,
            T::one(),
            input.data(),
            store.value(self.weight).data(),
            T::one(),
            &mut out,
        );
        Tensor::from_vec(&[n, self.d_out], out)
    }

    fn backward(
        &self,
        store: &mut ParamStore<T>,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>, NnError> {
        let n = batch_of(&self.name, input, &[self.d_in])?;
        grad_out.expect_shape(&self.name, &[n, self.d_out])?;
        T::gemm(
            true,
            false,
            self.d_in,
            self.d_out,
            n,
            T::one(),
            input.data(),
            grad_out.data(),
            T::one(),
            store.grad_mut(self.weight).data_mut(),
        );
        let gb = store.grad_mut(self.bias).data_mut();
        for row in grad_out.data().chunks_exact(self.d_out) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g = *g + v;
            }
        }
        let mut gin = vec![T::zero(); n * self.d_in];
        T::gemm(
            false,
            true,
            n,
            self.d_in,
            self.d_out,
            T::one(),
            grad_out.data(),
            store.value(self.weight).data(),
            T::zero(),
            &mut gin,
        );
        Tensor::from_vec(&[n, self.d_in], gin)
    }

    fn init<R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        store.glorot_uniform(self.weight, self.d_in, self.d_out, rng);
        store.value_mut(self.bias).fill(T::zero());
    }
}

/// Gather non-overlapping `p x p` patches of an NHWC tensor into rows of a
/// `[n * (h/p) * (w/p), p * p * c]` matrix. Column order is `(di, dj, c)`.
fn patches_to_rows<T: Real>(src: &[T], n: usize, h: usize, w: usize, c: usize, p: usize) -> Vec<T> {
    let (ho, wo) = (h / p, w / p);
    let chunk = p * c;
    let mut out = Vec::with_capacity(src.len());
    for b in 0..n {
        for a in 0..ho {
            for q in 0..wo {
                for di in 0..p {
                    let start = ((b * h + p * a + di) * w + p * q) * c;
                    out.extend_from_slice(&src[start..start + chunk]);
                }
            }
        }
    }
    out
}

/// Inverse of [`patches_to_rows`]: scatter patch rows back into NHWC layout.
fn rows_to_patches<T: Real>(rows: &[T], n: usize, h: usize, w: usize, c: usize, p: usize) -> Vec<T> {
    let (ho, wo) = (h / p, w / p);
    let chunk = p * c;
    let mut out = vec![T::zero(); rows.len()];
    let mut r = 0;
    for b in 0..n {
        for a in 0..ho {
            for q in 0..wo {
                for di in 0..p {
                    let start = ((b * h + p * a + di) * w + p * q) * c;
                    out[start..start + chunk].copy_from_slice(&rows[r..r + chunk]);
                    r += chunk;
                }
            }
        }
    }
    out
}

fn add_channel_bias<T: Real>(data: &mut [T], bias: &[T]) {
    for px in data.chunks_exact_mut(bias.len()) {
        for (v, &b) in px.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

fn accumulate_channel_bias_grad<T: Real>(grad: &mut [T], grad_out: &[T]) {
    let c = grad.len();
    for px in grad_out.chunks_exact(c) {
        for (g, &v) in grad.iter_mut().zip(px) {
            *g = *g + v;
        }
    }
}

/// Strided convolution with kernel size equal to stride.
///
/// Kernel shape `[p, p, c_in, c_out]`; maps `[h, w, c_in]` to
/// `[h/p, w/p, c_out]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    name: String,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub patch: usize,
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        (h, w, c_in): (usize, usize, usize),
        c_out: usize,
        patch: usize,
    ) -> Result<Self, NnError> {
        if patch == 0 || h == 0 || w == 0 || h % patch != 0 || w % patch != 0 {
            return Err(NnError::Shape(format!(
                "{name}: spatial dims {h}x{w} not divisible by stride {patch}"
            )));
        }
        if c_in == 0 || c_out == 0 {
            return Err(NnError::Shape(format!("{name}: zero channels")));
        }
        let kernel = store.add(
            &format!("{name}.kernel"),
            Tensor::zeros(&[patch, patch, c_in, c_out]),
        )?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Conv2d {
            name: name.to_string(),
            h,
            w,
            c_in,
            c_out,
            patch,
            kernel,
            bias,
        })
    }

    fn rows(&self, n: usize) -> usize {
        n * (self.h / self.patch) * (self.w / self.patch)
    }
}

impl<T: Real> Layer<T> for Conv2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn in_shape(&self) -> Vec<usize> {
        vec![self.h, self.w, self.c_in]
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.h / self.patch, self.w / self.patch, self.c_out]
    }

    fn forward(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = batch_of(&self.name, input, &[self.h, self.w, self.c_in])?;
        let p = self.patch;
        let cols = patches_to_rows(input.data(), n, self.h, self.w, self.c_in, p);
        let rows = self.rows(n);
        let mut out = vec![T::zero(); rows * self.c_out];
        T::gemm(
            false,
            false,
            rows,
            self.c_out,
            p * p * self.c_in,
            T::one(),
            &cols,
            store.value(self.kernel).data(),
            T::zero(),
            &mut out,
        );
        add_channel_bias(&mut out, store.value(self.bias).data());
        Tensor::from_vec(&with_batch(n, &Layer::<T>::out_shape(self)), out)
    }

    fn backward(
        &self,
        store: &mut ParamStore<T>,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>, NnError> {
        let n = batch_of(&self.name, input, &[self.h, self.w, self.c_in])?;
        grad_out.expect_shape(&self.name, &with_batch(n, &Layer::<T>::out_shape(self)))?;
        let p = self.patch;
        let k = p * p * self.c_in;
        let rows = self.rows(n);
        let cols = patches_to_rows(input.data(), n, self.h, self.w, self.c_in, p);
        T::gemm(
            true,
            false,
            k,
            self.c_out,
            rows,
            T::one(),
            &cols,
            grad_out.data(),
            T::one(),
            store.grad_mut(self.kernel).data_mut(),
        );
        accumulate_channel_bias_grad(store.grad_mut(self.bias).data_mut(), grad_out.data());
        let mut gcols = vec![T::zero(); rows * k];
        T::gemm(
            false,
            true,
            rows,
            k,
            self.c_out,
            T::one(),
            grad_out.data(),
            store.value(self.kernel).data(),
            T::zero(),
            &mut gcols,
        );
        let gin = rows_to_patches(&gcols, n, self.h, self.w, self.c_in, p);
        Tensor::from_vec(input.shape(), gin)
    }

    fn init<R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let area = self.patch * self.patch;
        store.glorot_uniform(self.kernel, area * self.c_in, area * self.c_out, rng);
        store.value_mut(self.bias).fill(T::zero());
    }
}

/// Transposed convolution with kernel size equal to stride.
///
/// Kernel shape `[p, p, c_out, c_in]`; maps `[h, w, c_in]` to
/// `[h*p, w*p, c_out]`. Without bias this is the adjoint of [`Conv2d`] with
/// the same kernel tensor.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    name: String,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub patch: usize,
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl ConvTranspose2d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        (h, w, c_in): (usize, usize, usize),
        c_out: usize,
        patch: usize,
    ) -> Result<Self, NnError> {
        if patch == 0 || h == 0 || w == 0 || c_in == 0 || c_out == 0 {
            return Err(NnError::Shape(format!(
                "{name}: invalid transposed conv {h}x{w}x{c_in} -> {c_out} (stride {patch})"
            )));
        }
        let kernel = store.add(
            &format!("{name}.kernel"),
            Tensor::zeros(&[patch, patch, c_out, c_in]),
        )?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(ConvTranspose2d {
            name: name.to_string(),
            h,
            w,
            c_in,
            c_out,
            patch,
            kernel,
            bias,
        })
    }
}

impl<T: Real> Layer<T> for ConvTranspose2d {
    fn name(&self) -> &str {
        &self.name
    }

    fn in_shape(&self) -> Vec<usize> {
        vec![self.h, self.w, self.c_in]
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.h * self.patch, self.w * self.patch, self.c_out]
    }

    fn forward(&self, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = batch_of(&self.name, input, &[self.h, self.w, self.c_in])?;
        let p = self.patch;
        let rows = n * self.h * self.w;
        let k = p * p * self.c_out;
        let mut cols = vec![T::zero(); rows * k];
        T::gemm(
            false,
            true,
            rows,
            k,
            self.c_in,
            T::one(),
            input.data(),
            store.value(self.kernel).data(),
            T::zero(),
            &mut cols,
        );
        let (ho, wo) = (self.h * p, self.w * p);
        let mut out = rows_to_patches(&cols, n, ho, wo, self.c_out, p);
        add_channel_bias(&mut out, store.value(self.bias).data());
        Tensor::from_vec(&[n, ho, wo, self.c_out], out)
    }

    fn backward(
        &self,
        store: &mut ParamStore<T>,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Tensor<T>, NnError> {
        let n = batch_of(&self.name, input, &[self.h, self.w, self.c_in])?;
        let p = self.patch;
        let (ho, wo) = (self.h * p, self.w * p);
        grad_out.expect_shape(&self.name, &[n, ho, wo, self.c_out])?;
        let rows = n * self.h * self.w;
        let k = p * p * self.c_out;
        accumulate_channel_bias_grad(store.grad_mut(self.bias).data_mut(), grad_out.data());
        let gcols = patches_to_rows(grad_out.data(), n, ho, wo, self.c_out, p);
        T::gemm(
            true,
            false,
            k,
            self.c_in,
            rows,
            T::one(),
            &gcols,
            input.data(),
            T::one(),
            store.grad_mut(self.kernel).data_mut(),
        );
        let mut gin = vec![T::zero(); rows * self.c_in];
        T::gemm(
            false,
            false,
            rows,
            self.c_in,
            k,
            T::one(),
            &gcols,
            store.value(self.kernel).data(),
            T::zero(),
            &mut gin,
        );
        Tensor::from_vec(input.shape(), gin)
    }

    fn init<R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let area = self.patch * self.patch;
        store.glorot_uniform(self.kernel, area * self.c_in, area * self.c_out, rng);
        store.value_mut(self.bias).fill(T::zero());
    }
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Backward of ReLU given its forward output; the subgradient at 0 is 0.
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("same shape")
}

/// Row-wise softmax over the last axis, stabilized by max-subtraction.
pub fn softmax<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let r = *input.shape().last().unwrap_or(&1);
    let mut out = input.data().to_vec();
    for row in out.chunks_exact_mut(r.max(1)) {
        let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Tensor::from_vec(input.shape(), out).expect("same shape")
}

/// Row-wise log-softmax over the last axis.
pub fn log_softmax<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let r = *input.shape().last().unwrap_or(&1);
    let mut out = input.data().to_vec();
    for row in out.chunks_exact_mut(r.max(1)) {
        let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln() + mx;
        for v in row.iter_mut() {
            *v = *v - lse;
        }
    }
    Tensor::from_vec(input.shape(), out).expect("same shape")
}

/// Backward of softmax given its forward output `s`:
/// `dx = s * (g - sum(g * s))` per row.
pub fn softmax_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let r = *output.shape().last().unwrap_or(&1);
    let mut out = Vec::with_capacity(output.len());
    for (s, g) in output
        .data()
        .chunks_exact(r.max(1))
        .zip(grad_out.data().chunks_exact(r.max(1)))
    {
        let dot = s.iter().zip(g).fold(T::zero(), |a, (&s, &g)| a + s * g);
        out.extend(s.iter().zip(g).map(|(&s, &g)| s * (g - dot)));
    }
    Tensor::from_vec(output.shape(), out).expect("same shape")
}

/// Verify that consecutive per-sample shapes agree.
pub fn check_chain(stages: &[(&str, Vec<usize>, Vec<usize>)]) -> Result<(), NnError> {
    for pair in stages.windows(2) {
        let (a, _, out) = &pair[0];
        let (b, inp, _) = &pair[1];
        if out.iter().product::<usize>() != inp.iter().product::<usize>() {
            return Err(NnError::Shape(format!(
                "{a} produces {:?} but {b} expects {:?}",
                out, inp
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn dense_identity_passthrough() {
        let mut s = ParamStore::<f64>::new();
        let d = Dense::new(&mut s, "d", 3, 3).unwrap();
        for i in 0..3 {
            s.value_mut(d.weight).data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        assert_eq!(d.forward(&s, &x).unwrap(), x);
    }

    #[test]
    fn dense_rejects_bad_width() {
        let mut s = ParamStore::<f64>::new();
        let d = Dense::new(&mut s, "d", 3, 2).unwrap();
        let x = Tensor::zeros(&[2, 4]);
        assert!(d.forward(&s, &x).is_err());
    }

    #[test]
    fn label_embedding_reshapes_to_grid() {
        let mut s = ParamStore::<f32>::new();
        let d = Dense::new(&mut s, "embed", 4, 25600).unwrap();
        let y = Tensor::from_vec(&[1, 4], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let out = d.forward(&s, &y).unwrap();
        assert_eq!(out.reshape(&[1, 160, 160, 1]).unwrap().len(), 25600);
    }

    #[test]
    fn conv_chain_halves_spatial_dims() {
        let mut s = ParamStore::<f32>::new();
        let c1 = Conv2d::new(&mut s, "c1", (160, 160, 1), 32, 2).unwrap();
        let c2 = Conv2d::new(&mut s, "c2", (80, 80, 32), 64, 2).unwrap();
        assert_eq!(Layer::<f32>::out_shape(&c1), vec![80, 80, 32]);
        assert_eq!(Layer::<f32>::out_shape(&c2), vec![40, 40, 64]);
        let x = Tensor::<f32>::zeros(&[1, 160, 160, 1]);
        let h = c1.forward(&s, &x).unwrap();
        let out = c2.forward(&s, &h).unwrap();
        assert_eq!(out.shape(), &[1, 40, 40, 64]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_odd_dims() {
        let mut s = ParamStore::<f32>::new();
        assert!(Conv2d::new(&mut s, "c", (5, 4, 1), 2, 2).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f64>::new();
        let c = Conv2d::new(&mut s, "c", (4, 6, 2), 3, 2).unwrap();
        c.init(&mut s, &mut rng);
        s.value_mut(c.bias).data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        let x = rand_tensor(&[2, 4, 6, 2], &mut rng);
        let y = c.forward(&s, &x).unwrap();
        let k = s.value(c.kernel).data();
        let b = s.value(c.bias).data();
        for n in 0..2 {
            for a in 0..2 {
                for q in 0..3 {
                    for o in 0..3 {
                        let mut acc = b[o];
                        for di in 0..2 {
                            for dj in 0..2 {
                                for ci in 0..2 {
                                    let xi = ((n * 4 + 2 * a + di) * 6 + 2 * q + dj) * 2 + ci;
                                    let ki = ((di * 2 + dj) * 2 + ci) * 3 + o;
                                    acc += x.data()[xi] * k[ki];
                                }
                            }
                        }
                        let yi = ((n * 2 + a) * 3 + q) * 3 + o;
                        assert!((y.data()[yi] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn transposed_chain_doubles_spatial_dims() {
        let mut s = ParamStore::<f32>::new();
        let t1 = ConvTranspose2d::new(&mut s, "t1", (40, 40, 64), 64, 2).unwrap();
        let t2 = ConvTranspose2d::new(&mut s, "t2", (80, 80, 64), 32, 2).unwrap();
        let t3 = ConvTranspose2d::new(&mut s, "t3", (160, 160, 32), 1, 1).unwrap();
        assert_eq!(Layer::<f32>::out_shape(&t1), vec![80, 80, 64]);
        assert_eq!(Layer::<f32>::out_shape(&t2), vec![160, 160, 32]);
        assert_eq!(Layer::<f32>::out_shape(&t3), vec![160, 160, 1]);
    }

    #[test]
    fn transposed_zero_input_gives_bias() {
        let mut s = ParamStore::<f64>::new();
        let t = ConvTranspose2d::new(&mut s, "t", (2, 3, 4), 2, 2).unwrap();
        t.init(&mut s, &mut ChaCha8Rng::seed_from_u64(0));
        s.value_mut(t.bias).data_mut().copy_from_slice(&[1.5, -0.5]);
        let out = t.forward(&s, &Tensor::zeros(&[1, 2, 3, 4])).unwrap();
        assert_eq!(out.shape(), &[1, 4, 6, 2]);
        for px in out.data().chunks_exact(2) {
            assert_eq!(px, &[1.5, -0.5]);
        }
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(&[3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_examples() {
        for c in [-1e4, 0.0, 3.7, 1e4] {
            let x = Tensor::from_vec(&[1, 4], vec![c; 4]).unwrap();
            for &v in softmax(&x).data() {
                assert!((v - 0.25f64).abs() < 1e-15);
            }
        }
        let x = Tensor::from_vec(&[1, 2], vec![0.0, 2f64.ln()]).unwrap();
        let s = softmax(&x);
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_agrees_with_softmax() {
        let x = Tensor::from_vec(&[2, 3], vec![0.3, -1.0, 2.0, 5.0, 5.0, -3.0f64]).unwrap();
        let a = softmax(&x);
        let b = log_softmax(&x);
        for (p, lp) in a.data().iter().zip(b.data()) {
            assert!((p.ln() - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_rejects_mismatch() {
        let ok = check_chain(&[
            ("a", vec![4], vec![16]),
            ("b", vec![4, 4, 1], vec![2]),
        ]);
        assert!(ok.is_ok());
        let bad = check_chain(&[("a", vec![4], vec![16]), ("b", vec![15], vec![2])]);
        assert!(bad.is_err());
    }
}
