//! The two shared MLP decoders: feature → TSDF and feature → color.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamBlock;
use crate::simd;

/// Fully connected `in → hidden → hidden → out` network with ReLU hidden
/// activations and a linear output. Hidden-layer weights are stored
/// input-major `[in][out]`, output-layer weights `[out][in]`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub params: ParamBlock,
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    pub x: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
}

impl MlpCache {
    pub fn new(mlp: &Mlp) -> Self {
        Self {
            x: vec![0.0; mlp.input],
            a1: vec![0.0; mlp.hidden],
            a2: vec![0.0; mlp.hidden],
        }
    }
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        input: usize,
        hidden: usize,
        output: usize,
        learning_rate: f64,
        rng: &mut R,
    ) -> Self {
        let mut mlp = Self {
            input,
            hidden,
            output,
            params: ParamBlock::zeros(name, 0, learning_rate),
        };
        let mut values = vec![0.0; mlp.param_count()];
        let layers = [(input, hidden), (hidden, hidden), (hidden, output)];
        let mut at = 0;
        for (fan_in, fan_out) in layers {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut values[at..at + fan_in * fan_out] {
                *v = rng.random_range(-bound..=bound);
            }
            at += fan_in * fan_out + fan_out;
        }
        let name = std::mem::take(&mut mlp.params.name);
        mlp.params = ParamBlock::new(name, values, learning_rate);
        mlp
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.hidden * self.hidden + self.hidden + self.output * self.hidden + self.output
    }

    fn offsets(&self) -> [usize; 6] {
        let (i, h, o) = (self.input, self.hidden, self.output);
        let w1 = 0;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + o * h;
        [w1, b1, w2, b2, w3, b3]
    }

    /// Output-layer bias slice, for initialization and tests.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let b3 = self.offsets()[5];
        &mut self.params.values[b3..b3 + self.output]
    }

    /// Zero the final layer's weights, leaving its bias.
    pub fn zero_output_weights(&mut self) {
        let [_, _, _, _, w3, b3] = self.offsets();
        self.params.values[w3..b3].iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn forward(&self, x: &[f64], cache: &mut MlpCache, out: &mut [f64]) {
        #[cfg(target_arch = "x86_64")]
        if simd::available() {
            // SAFETY: the CPU supports the enabled features.
            return unsafe { self.forward_avx2(x, cache, out) };
        }
        self.forward_impl(x, cache, out)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn forward_avx2(&self, x: &[f64], cache: &mut MlpCache, out: &mut [f64]) {
        self.forward_impl(x, cache, out)
    }

    #[inline(always)]
    fn forward_impl(&self, x: &[f64], cache: &mut MlpCache, out: &mut [f64]) {
        let (i, h, o) = (self.input, self.hidden, self.output);
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let p = &self.params.values;
        cache.x.copy_from_slice(&x[..i]);
        dense_relu(&p[w1..w1 + i * h], &p[b1..b1 + h], &x[..i], &mut cache.a1);
        dense_relu(&p[w2..w2 + h * h], &p[b2..b2 + h], &cache.a1, &mut cache.a2);
        for r in 0..o {
            let row = &p[w3 + r * h..w3 + (r + 1) * h];
            out[r] = p[b3 + r] + dot(row, &cache.a2);
        }
    }

    /// Backpropagate `d_out`; writes `∂L/∂x` into `d_x`. Parameter gradients
    /// are accumulated only when `accumulate` is set.
    pub fn backward(&mut self, cache: &MlpCache, d_out: &[f64], d_x: &mut [f64], accumulate: bool) {
        #[cfg(target_arch = "x86_64")]
        if simd::available() {
            // SAFETY: the CPU supports the enabled features.
            return unsafe { self.backward_avx2(cache, d_out, d_x, accumulate) };
        }
        self.backward_impl(cache, d_out, d_x, accumulate)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn backward_avx2(&mut self, cache: &MlpCache, d_out: &[f64], d_x: &mut [f64], accumulate: bool) {
        self.backward_impl(cache, d_out, d_x, accumulate)
    }

    #[inline(always)]
    fn backward_impl(&mut self, cache: &MlpCache, d_out: &[f64], d_x: &mut [f64], accumulate: bool) {
        let (i, h, o) = (self.input, self.hidden, self.output);
        let [w1, b1, w2, b2, w3, b3] = self.offsets();
        let p = &self.params.values;
        let g = &mut self.params.grads;

        let mut dz2 = [0.0f64; 64];
        let mut dz1 = [0.0f64; 64];
        assert!(h <= 64, "hidden width above 64 not supported");
        let (dz2, dz1) = (&mut dz2[..h], &mut dz1[..h]);

        for r in 0..o {
            let d = d_out[r];
            if d == 0.0 {
                continue;
            }
            let row = &p[w3 + r * h..w3 + (r + 1) * h];
            axpy(dz2, row, d);
            if accumulate {
                g[b3 + r] += d;
                axpy(&mut g[w3 + r * h..w3 + (r + 1) * h], &cache.a2, d);
            }
        }
        for (d, a) in dz2.iter_mut().zip(&cache.a2) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        // Inactive first-layer units receive no gradient.
        for (k, d) in dz1.iter_mut().enumerate() {
            *d = if cache.a1[k] > 0.0 { dot(&p[w2 + k * h..w2 + (k + 1) * h], dz2) } else { 0.0 };
        }
        dense_backward(&p[w1..w1 + i * h], dz1, &mut d_x[..i]);
        if accumulate {
            dense_grads(&mut g[w2..b2 + h], dz2, &cache.a1);
            dense_grads(&mut g[w1..b1 + h], dz1, &cache.x);
        }
    }
}

/// `out = relu(b + Wᵀx)` for input-major `w`; zero inputs are skipped.
#[inline(always)]
fn dense_relu(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let h = b.len();
    out.copy_from_slice(b);
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            axpy(out, &w[k * h..(k + 1) * h], xk);
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// `d_in[k] = Σ_r w[k][r]·dz[r]`.
#[inline(always)]
fn dense_backward(w: &[f64], dz: &[f64], d_in: &mut [f64]) {
    let h = dz.len();
    for (k, d) in d_in.iter_mut().enumerate() {
        *d = dot(&w[k * h..(k + 1) * h], dz);
    }
}

/// Weight and bias gradients of one layer; `g` holds the weights then the bias.
#[inline(always)]
fn dense_grads(g: &mut [f64], dz: &[f64], x: &[f64]) {
    let h = dz.len();
    let (gw, gb) = g.split_at_mut(x.len() * h);
    for (a, d) in gb.iter_mut().zip(dz) {
        *a += d;
    }
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            axpy(&mut gw[k * h..(k + 1) * h], dz, xk);
        }
    }
}

#[inline(always)]
fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// TSDF decoder `f_s` (linear scalar output) and color decoder `f_c` (sigmoid RGB).
#[derive(Clone, Debug)]
pub struct Decoders {
    pub sdf: Mlp,
    pub color: Mlp,
}

impl Decoders {
    pub const HIDDEN: usize = 32;

    pub fn new<R: Rng + ?Sized>(feature_dim: usize, learning_rate: f64, rng: &mut R) -> Self {
        Self {
            sdf: Mlp::new("decoder.sdf", feature_dim, Self::HIDDEN, 1, learning_rate, rng),
            color: Mlp::new("decoder.color", feature_dim, Self::HIDDEN, 3, learning_rate, rng),
        }
    }

    /// Normalized TSDF `s = f_s(F_s)` and color `sigmoid(f_c(F_c))`.
    pub fn decode(&self, f_s: &[f64], f_c: &[f64]) -> Result<(f64, [f64; 3])> {
        let mut cs = MlpCache::new(&self.sdf);
        let mut cc = MlpCache::new(&self.color);
        let mut s = [0.0];
        let mut logits = [0.0; 3];
        self.sdf.forward(f_s, &mut cs, &mut s);
        if !s[0].is_finite() {
            return Err(Error::NonFiniteDecoder("sdf"));
        }
        self.color.forward(f_c, &mut cc, &mut logits);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDecoder("color"));
        }
        Ok((s[0], logits.map(sigmoid)))
    }
}
