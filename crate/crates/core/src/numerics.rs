//! Dense arithmetic, probability helpers, the optimizer and its schedule,
//! reproducible random streams and a finite-difference gradient oracle.
//!
//! Everything here works in `f64`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Row-major array of `f64` values with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::contract(format!("zero-sized axis in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Draws every entry from `N(0, scale^2)`.
    pub fn randn(shape: &[usize], scale: f64, rng: &mut RngStream) -> Self {
        let mut out = Self::zeros(shape);
        for v in &mut out.data {
            *v = scale * rng.normal();
        }
        out
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &DenseArray) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &DenseArray) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Log-softmax over a single slice.
pub fn log_softmax_slice(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::contract("log_softmax over an empty axis"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::contract("log_softmax needs finite logits"));
    }
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|v| v - lse).collect())
}

/// Softmax over a single slice, computed through [`log_softmax_slice`].
pub fn softmax_slice(logits: &[f64]) -> Result<Vec<f64>> {
    Ok(log_softmax_slice(logits)?.into_iter().map(f64::exp).collect())
}

/// Log-softmax along the last axis.
pub fn log_softmax(logits: &DenseArray) -> Result<DenseArray> {
    let last = *logits
        .shape()
        .last()
        .ok_or_else(|| Error::contract("log_softmax on a rank-0 array"))?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(last) {
        out.extend(log_softmax_slice(row)?);
    }
    DenseArray::new(logits.shape().to_vec(), out)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln σ(x)`, evaluated on the branch that avoids cancellation.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Linear warmup followed by inverse square root decay:
/// `base_lr * min(step / warmup, sqrt(warmup / step))`.
pub fn lr_schedule(step: u64, warmup: u64, base_lr: f64) -> Result<f64> {
    if warmup == 0 {
        return Err(Error::contract("warmup must be positive"));
    }
    if step == 0 {
        return Err(Error::contract("schedule steps start at 1"));
    }
    if !(base_lr > 0.0 && base_lr.is_finite()) {
        return Err(Error::contract("base learning rate must be positive"));
    }
    let (s, w) = (step as f64, warmup as f64);
    Ok(base_lr * (s / w).min((w / s).sqrt()))
}

/// AdamW hyperparameters. Moment decays default to 0.9 / 0.999.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamW,
    first_moment: Vec<DenseArray>,
    second_moment: Vec<DenseArray>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamW, params: &[DenseArray]) -> Self {
        Self {
            config,
            first_moment: params.iter().map(|p| DenseArray::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| DenseArray::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One decoupled-weight-decay Adam update with bias correction.
pub fn adamw_step(
    params: &mut [DenseArray],
    grads: &[DenseArray],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::contract(format!(
            "optimizer got {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        p.check_same_shape(g)?;
        p.check_same_shape(m)?;
        if !g.all_finite() {
            return Err(Error::contract("non-finite gradient"));
        }
    }

    state.step += 1;
    let AdamW {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *w);
        }
    }
    Ok(())
}

/// Seeded random stream. Equal `(seed, stream)` pairs replay the same draws on
/// every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Child stream keyed by `id`. Depends only on this stream's identity,
    /// not on how many values have been drawn from it.
    pub fn fork(&self, id: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(self.stream)), id)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Draws an index from unnormalized non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> Option<usize> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return None;
        }
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return Some(i);
            }
            u -= w;
        }
        weights.iter().rposition(|&w| w > 0.0)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Central-difference gradient of `f` at `params`.
pub fn finite_diff_grad<F>(f: F, params: &[DenseArray], eps: f64) -> Result<Vec<DenseArray>>
where
    F: Fn(&[DenseArray]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::contract(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut probe = params.to_vec();
    let mut grads: Vec<DenseArray> = params.iter().map(|p| DenseArray::zeros(p.shape())).collect();
    for a in 0..params.len() {
        for i in 0..params[a].len() {
            let orig = probe[a].data()[i];
            probe[a].data_mut()[i] = orig + eps;
            let plus = f(&probe);
            probe[a].data_mut()[i] = orig - eps;
            let minus = f(&probe);
            probe[a].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { array: a, index: i });
            }
            grads[a].data_mut()[i] = (plus - minus) / (2.0 * eps);
        }
    }
    Ok(grads)
}

/// Largest elementwise relative error between two gradient sets, with the
/// denominator floored at `floor` so near-zero entries compare absolutely.
pub fn max_relative_error(a: &[DenseArray], b: &[DenseArray], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn log_softmax_uniform_and_shifted() {
        let out = log_softmax_slice(&[0.0, 0.0]).unwrap();
        assert!((out[0] + LN_2).abs() < 1e-15 && (out[1] + LN_2).abs() < 1e-15);
        let out = log_softmax_slice(&[1000.0, 1000.0]).unwrap();
        assert!((out[0] + LN_2).abs() < 1e-12 && (out[1] + LN_2).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_matches_high_precision_values() {
        // 40-digit evaluation of v - ln(e + e^2 + e^3).
        let expected = [
            -2.407_605_964_444_38,
            -1.407_605_964_444_380_4,
            -0.407_605_964_444_380_3,
        ];
        let out = log_softmax_slice(&[1.0, 2.0, 3.0]).unwrap();
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-15);
        }
        let total: f64 = out.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_rejects_empty_axis() {
        assert!(log_softmax_slice(&[]).is_err());
    }

    #[test]
    fn log_softmax_operates_on_last_axis() {
        let a = DenseArray::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let out = log_softmax(&a).unwrap();
        for row in out.data().chunks(3) {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((out.data()[3] + 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_values() {
        assert!((log_sigmoid(0.0) + LN_2).abs() < 1e-15);
        let sat = log_sigmoid(50.0);
        assert!(sat < 0.0 && sat > -1e-20);
        // 40-digit oracle: ln σ(0.13) = -0.63025819468169...
        assert!((log_sigmoid(0.13) + 0.630_258_194_681_690_7).abs() < 1e-15);
        assert!(log_sigmoid(-700.0).is_finite());
        assert!((log_sigmoid(-700.0) + 700.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_identity() {
        for x in [-30.0, -1.0, 0.0, 0.5, 40.0] {
            assert!((log_sigmoid(x) + softplus(-x)).abs() < 1e-14);
        }
    }

    #[test]
    fn schedule_examples() {
        assert!((lr_schedule(4000, 4000, 5e-6).unwrap() - 5e-6).abs() < 1e-20);
        assert!((lr_schedule(1, 4000, 5e-6).unwrap() - 1.25e-9).abs() < 1e-22);
        assert!((lr_schedule(16000, 4000, 5e-6).unwrap() - 2.5e-6).abs() < 1e-20);
        assert!(lr_schedule(10, 0, 5e-6).is_err());
    }

    #[test]
    fn adamw_zero_gradient_is_a_no_op() {
        let mut params = vec![DenseArray::from_vec(vec![1.0, -2.0]).unwrap()];
        let grads = vec![DenseArray::zeros(&[2])];
        let mut state = OptimizerState::new(AdamW::default(), &params);
        adamw_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn adamw_descends_on_quadratic() {
        let mut params = vec![DenseArray::from_vec(vec![1.0]).unwrap()];
        let mut state = OptimizerState::new(AdamW::default(), &params);
        let grads = vec![params[0].clone()];
        adamw_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert!(params[0].data()[0] < 1.0 && params[0].data()[0] > 0.0);
    }

    #[test]
    fn adamw_converges_on_2d_quadratic() {
        // f(w) = 0.5 * (w0^2 + 4 w1^2); minimum at the origin. With beta1 = 0.9
        // the momentum recursion contracts by at most sqrt(0.9) per step, so
        // 100 steps cannot get below ~5e-3; a lighter beta1 reaches 1e-6.
        let grad = |p: &DenseArray| DenseArray::from_vec(vec![p.data()[0], 4.0 * p.data()[1]]).unwrap();
        let run = |config: AdamW, lr: f64| {
            let mut params = vec![DenseArray::from_vec(vec![1.0, -0.5]).unwrap()];
            let mut state = OptimizerState::new(config, &params);
            for _ in 0..100 {
                let g = vec![grad(&params[0])];
                adamw_step(&mut params, &g, &mut state, lr).unwrap();
            }
            grad(&params[0]).norm_sq().sqrt()
        };
        let light = AdamW {
            beta1: 0.5,
            ..AdamW::default()
        };
        let norm = run(light, 0.2);
        assert!(norm < 1e-6, "grad norm {norm}");
        let norm = run(AdamW::default(), 0.3);
        assert!(norm < 1e-2, "grad norm {norm}");
    }

    #[test]
    fn adamw_rejects_shape_mismatch() {
        let mut params = vec![DenseArray::zeros(&[2])];
        let grads = vec![DenseArray::zeros(&[3])];
        let mut state = OptimizerState::new(AdamW::default(), &params);
        assert!(adamw_step(&mut params, &grads, &mut state, 0.1).is_err());
    }

    #[test]
    fn finite_differences_examples() {
        let p = vec![DenseArray::from_vec(vec![3.0]).unwrap()];
        let g = finite_diff_grad(|p| p[0].data()[0].powi(2), &p, 1e-5).unwrap();
        assert!((g[0].data()[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 4.2, &p, 1e-5).unwrap();
        assert!(g[0].data()[0].abs() < 1e-9);
    }

    #[test]
    fn finite_differences_report_non_finite_coordinate() {
        let p = vec![
            DenseArray::from_vec(vec![1.0]).unwrap(),
            DenseArray::from_vec(vec![1.0, 0.0]).unwrap(),
        ];
        let err = finite_diff_grad(|p| p[1].data()[1].sqrt(), &p, 1e-4).unwrap_err();
        assert!(matches!(err, Error::NonFinite { array: 1, index: 1 }));
        assert!(finite_diff_grad(|_| 0.0, &p, 1e-2).is_err());
    }

    #[test]
    fn dense_array_rejects_bad_input() {
        assert!(DenseArray::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseArray::new(vec![1], vec![f64::NAN]).is_err());
        assert!(DenseArray::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn rng_streams_replay() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let da: Vec<u64> = (0..10_000).map(|_| a.next_u64()).collect();
        let db: Vec<u64> = (0..10_000).map(|_| b.next_u64()).collect();
        let dc: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(da, db);
        assert_ne!(&da[..16], &dc[..]);
    }

    #[test]
    fn fork_ignores_consumed_draws() {
        let a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 0);
        b.uniform();
        assert_eq!(a.fork(9).next_u64(), b.fork(9).next_u64());
        assert_ne!(a.fork(9).next_u64(), a.fork(10).next_u64());
    }
}
