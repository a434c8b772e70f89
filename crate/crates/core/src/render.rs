//! Ray sampling and TSDF volume rendering, with the backward pass.

use rand::Rng;

use crate::decoder::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingConfig {
    pub near: f64,
    /// Far bound is `gt_depth + far_margin`.
    pub far_margin: f64,
    pub n_strat: usize,
    pub n_surface: usize,
    /// Truncation distance, meters.
    pub truncation: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            near: 0.05,
            far_margin: 0.24,
            n_strat: 32,
            n_surface: 8,
            truncation: 0.06,
        }
    }
}

impl SamplingConfig {
    pub fn far(&self, gt_depth: f64) -> f64 {
        gt_depth + self.far_margin
    }

    pub fn samples_per_ray(&self) -> usize {
        self.n_strat + self.n_surface
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    /// Ascending camera z-depths.
    pub depths: Vec<f64>,
    pub near_surface: Vec<bool>,
    pub near: f64,
    pub far: f64,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }
}

/// Stratified samples over `[near, far]` plus uniform samples in `[d - δ, d + δ]`.
///
/// Near-surface samples are skipped when `d` is not a valid depth and are
/// clamped to at least `near`.
pub fn sample_ray_depths<R: Rng + ?Sized>(
    d: f64,
    near: f64,
    far: f64,
    n_strat: usize,
    n_surface: usize,
    delta: f64,
    rng: &mut R,
) -> RaySamples {
    let mut out = RaySamples::default();
    sample_ray_depths_into(d, near, far, n_strat, n_surface, delta, rng, &mut out);
    out
}

/// Allocation-free variant of [`sample_ray_depths`].
#[allow(clippy::too_many_arguments)]
pub fn sample_ray_depths_into<R: Rng + ?Sized>(
    d: f64,
    near: f64,
    far: f64,
    n_strat: usize,
    n_surface: usize,
    delta: f64,
    rng: &mut R,
    out: &mut RaySamples,
) {
    debug_assert!(far > near);
    out.depths.clear();
    out.near_surface.clear();
    out.near = near;
    out.far = far;
    let width = (far - near) / n_strat as f64;
    for i in 0..n_strat {
        let u: f64 = rng.random();
        out.depths.push(near + (i as f64 + u) * width);
        out.near_surface.push(false);
    }
    if d > 0.0 && d.is_finite() {
        for _ in 0..n_surface {
            let u: f64 = rng.random();
            out.depths.push((d - delta + 2.0 * delta * u).max(near));
            out.near_surface.push(true);
        }
    }
    // Insertion sort keeps the flags paired with their depths.
    for i in 1..out.depths.len() {
        let mut j = i;
        while j > 0 && out.depths[j - 1] > out.depths[j] {
            out.depths.swap(j - 1, j);
            out.near_surface.swap(j - 1, j);
            j -= 1;
        }
    }
}

/// `σ = β · sigmoid(-β s)`.
#[inline]
pub fn sdf_to_density(s: f64, beta: f64) -> f64 {
    beta * sigmoid(-beta * s)
}

/// `(∂σ/∂s, ∂σ/∂β)`.
#[inline]
pub fn sdf_to_density_grad(s: f64, beta: f64) -> (f64, f64) {
    let g = sigmoid(-beta * s);
    let dg = g * (1.0 - g);
    (-beta * beta * dg, g - beta * s * dg)
}

/// `ω_n = exp(-Σ_{k<n} σ_k) · (1 - exp(-σ_n))`, without a spacing factor.
pub fn compute_weights(sigma: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; sigma.len()];
    compute_weights_into(sigma, &mut w);
    w
}

pub fn compute_weights_into(sigma: &[f64], w: &mut [f64]) {
    let mut acc = 0.0f64;
    for (wn, &s) in w.iter_mut().zip(sigma) {
        *wn = (-acc).exp() * -(-s).exp_m1();
        acc += s;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderResult {
    pub color: [f64; 3],
    pub depth: f64,
    pub sdf: Vec<f64>,
    pub sigma: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Weighted sums of per-sample colors and depths.
pub fn render_ray(depths: &[f64], sdf: &[f64], colors: &[[f64; 3]], beta: f64) -> RenderResult {
    let mut r = RenderResult::default();
    render_ray_into(depths, sdf, colors, beta, &mut r);
    r
}

pub fn render_ray_into(depths: &[f64], sdf: &[f64], colors: &[[f64; 3]], beta: f64, r: &mut RenderResult) {
    let n = depths.len();
    r.sdf.clear();
    r.sdf.extend_from_slice(sdf);
    r.sigma.clear();
    r.sigma.extend(sdf.iter().map(|&s| sdf_to_density(s, beta)));
    r.weights.resize(n, 0.0);
    compute_weights_into(&r.sigma, &mut r.weights);
    r.color = [0.0; 3];
    r.depth = 0.0;
    for i in 0..n {
        let w = r.weights[i];
        for ch in 0..3 {
            r.color[ch] += w * colors[i][ch];
        }
        r.depth += w * depths[i];
    }
}

/// Gradients of a scalar loss with respect to the per-sample inputs of
/// [`render_ray`], given `∂L/∂ĉ` and `∂L/∂d̂`.
///
/// Writes `∂L/∂s_n` into `d_sdf`, `∂L/∂c_n` into `d_color`, and returns `∂L/∂β`.
pub fn render_ray_backward(
    r: &RenderResult,
    depths: &[f64],
    colors: &[[f64; 3]],
    beta: f64,
    d_color: [f64; 3],
    d_depth: f64,
    d_sdf: &mut [f64],
    d_colors: &mut [[f64; 3]],
) -> f64 {
    let n = depths.len();
    // suffix = Σ_{m>n} g_m ω_m, walked from the back.
    let mut suffix = 0.0;
    let mut d_beta = 0.0;
    let mut acc: f64 = r.sigma.iter().sum();
    for i in (0..n).rev() {
        let w = r.weights[i];
        let c = &colors[i];
        let g = d_color[0] * c[0] + d_color[1] * c[1] + d_color[2] * c[2] + d_depth * depths[i];
        for ch in 0..3 {
            d_colors[i][ch] = d_color[ch] * w;
        }
        let sigma = r.sigma[i];
        acc -= sigma;
        let t_n = (-acc.max(0.0)).exp();
        let d_sigma = g * t_n * (-sigma).exp() - suffix;
        suffix += g * w;
        let (ds, db) = sdf_to_density_grad(r.sdf[i], beta);
        d_sdf[i] = d_sigma * ds;
        d_beta += d_sigma * db;
    }
    d_beta
}
