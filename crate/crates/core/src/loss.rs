//! Photometric, free-space and truncated SDF objectives.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub rgb: f64,
    pub depth: f64,
    pub fs: f64,
    pub mid: f64,
    pub tail: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 5.0,
            depth: 0.1,
            fs: 10.0,
            mid: 200.0,
            tail: 10.0,
        }
    }
}

/// Supervision target for samples inside the truncation band.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TsdfTarget {
    /// `s* = (d_r - d_p) / δ`.
    #[default]
    Normalized,
    /// Residual `s + d_r - d_p`, so `s* = d_p - d_r` in meters.
    Literal,
}

impl TsdfTarget {
    #[inline]
    pub fn target(self, d_p: f64, d_r: f64, delta: f64) -> f64 {
        match self {
            TsdfTarget::Normalized => (d_r - d_p) / delta,
            TsdfTarget::Literal => d_p - d_r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleClass {
    FreeSpace,
    Mid,
    Tail,
}

#[inline]
pub fn classify(d_p: f64, d_r: f64, delta: f64) -> SampleClass {
    let gap = (d_p - d_r).abs();
    if gap > delta {
        SampleClass::FreeSpace
    } else if gap <= 0.4 * delta {
        SampleClass::Mid
    } else {
        SampleClass::Tail
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SampleClasses {
    pub fs: Vec<usize>,
    pub mid: Vec<usize>,
    pub tail: Vec<usize>,
}

pub fn classify_samples(d_p: &[f64], d_r: f64, delta: f64) -> SampleClasses {
    let mut out = SampleClasses::default();
    for (i, &d) in d_p.iter().enumerate() {
        match classify(d, d_r, delta) {
            SampleClass::FreeSpace => out.fs.push(i),
            SampleClass::Mid => out.mid.push(i),
            SampleClass::Tail => out.tail.push(i),
        }
    }
    out
}

/// Mean squared color error (averaged over channels) and mean squared depth
/// error over a batch of `(color, depth)` pairs.
pub fn photometric_losses(rendered: &[([f64; 3], f64)], gt: &[([f64; 3], f64)]) -> Result<(f64, f64)> {
    if rendered.is_empty() {
        return Err(Error::EmptyBatch);
    }
    assert_eq!(rendered.len(), gt.len(), "rendered and reference batches differ in length");
    let n = rendered.len() as f64;
    let (mut l_rgb, mut l_depth) = (0.0, 0.0);
    for ((c, d), (gc, gd)) in rendered.iter().zip(gt) {
        l_rgb += (0..3).map(|k| (c[k] - gc[k]).powi(2)).sum::<f64>() / 3.0;
        l_depth += (d - gd).powi(2);
    }
    Ok((l_rgb / n, l_depth / n))
}

/// Per-ray SDF terms, each already averaged over its sample set.
/// `mid` and `tail` include their λ weights; `fs` does not.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RaySdfLoss {
    pub fs: f64,
    pub mid: f64,
    pub tail: f64,
}

/// SDF losses of a single ray. When `grad` is given, `∂/∂s_n` of
/// `scale · (λ_fs·fs + mid + tail)` is added into it.
pub fn ray_sdf_loss(
    s: &[f64],
    d_p: &[f64],
    d_r: f64,
    delta: f64,
    weights: &LossWeights,
    target: TsdfTarget,
    grad: Option<(&mut [f64], f64)>,
) -> RaySdfLoss {
    let (mut n_fs, mut n_mid, mut n_tail) = (0usize, 0usize, 0usize);
    let (mut e_fs, mut e_mid, mut e_tail) = (0.0, 0.0, 0.0);
    for (&si, &dp) in s.iter().zip(d_p) {
        match classify(dp, d_r, delta) {
            SampleClass::FreeSpace => {
                n_fs += 1;
                e_fs += (si - 1.0).powi(2);
            }
            SampleClass::Mid => {
                n_mid += 1;
                e_mid += (si - target.target(dp, d_r, delta)).powi(2);
            }
            SampleClass::Tail => {
                n_tail += 1;
                e_tail += (si - target.target(dp, d_r, delta)).powi(2);
            }
        }
    }
    let mean = |e: f64, n: usize| if n == 0 { 0.0 } else { e / n as f64 };
    let out = RaySdfLoss {
        fs: mean(e_fs, n_fs),
        mid: weights.mid * mean(e_mid, n_mid),
        tail: weights.tail * mean(e_tail, n_tail),
    };
    if let Some((g, scale)) = grad {
        for (i, (&si, &dp)) in s.iter().zip(d_p).enumerate() {
            g[i] += scale
                * match classify(dp, d_r, delta) {
                    SampleClass::FreeSpace => weights.fs * 2.0 * (si - 1.0) / n_fs as f64,
                    SampleClass::Mid => weights.mid * 2.0 * (si - target.target(dp, d_r, delta)) / n_mid as f64,
                    SampleClass::Tail => weights.tail * 2.0 * (si - target.target(dp, d_r, delta)) / n_tail as f64,
                };
        }
    }
    out
}

/// Batch means of the per-ray SDF terms: `(L_fs, L_mid, L_tail)`.
pub fn sdf_losses(rays: &[RaySdfLoss]) -> Result<(f64, f64, f64)> {
    if rays.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = rays.len() as f64;
    let sum = rays.iter().fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.fs, a.1 + r.mid, a.2 + r.tail));
    Ok((sum.0 / n, sum.1 / n, sum.2 / n))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub depth: f64,
    pub fs: f64,
    pub mid: f64,
    pub tail: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn tsdf(&self) -> f64 {
        self.mid + self.tail
    }
}

/// `λ_rgb·L_rgb + λ_depth·L_depth + λ_fs·L_fs + L_tsdf`.
pub fn total_loss(rgb: f64, depth: f64, fs: f64, tsdf: f64, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [("L_rgb", rgb), ("L_depth", depth), ("L_fs", fs), ("L_tsdf", tsdf)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
    }
    Ok(weights.rgb * rgb + weights.depth * depth + weights.fs * fs + tsdf)
}
