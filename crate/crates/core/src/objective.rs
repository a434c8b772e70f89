//! Batched loss evaluation over pixel samples from several frames, with
//! gradients for the scene parameters and every frame's 7-vector pose.

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{QueryCache, SceneField};
use crate::loss::{ray_sdf_loss, total_loss, LossBreakdown, LossWeights, TsdfTarget};
use crate::math::{rotation_vjp, CameraIntrinsics, Pose};
use crate::params::ParamBlock;
use crate::render::{render_ray_backward, render_ray_into, sample_ray_depths_into, RaySamples, RenderResult, SamplingConfig};

/// One supervised pixel of a frame whose pose lives in slot `frame`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelSample {
    pub frame: usize,
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub color: [f64; 3],
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveConfig {
    pub sampling: SamplingConfig,
    pub weights: LossWeights,
    pub target: TsdfTarget,
}

/// What receives gradients in a call to [`evaluate`].
#[derive(Clone, Copy, Debug)]
pub struct GradTargets<'a> {
    pub scene: bool,
    /// Per pose slot.
    pub poses: &'a [bool],
}

impl GradTargets<'_> {
    pub fn any(&self) -> bool {
        self.scene || self.poses.iter().any(|&p| p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchResult {
    pub loss: LossBreakdown,
    /// Rays kept after filtering.
    pub rays: usize,
}

/// Reusable per-ray buffers.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    samples: RaySamples,
    render: RenderResult,
    caches: Vec<QueryCache>,
    sdf: Vec<f64>,
    colors: Vec<[f64; 3]>,
    d_sdf: Vec<f64>,
    d_render: Vec<f64>,
    d_colors: Vec<[f64; 3]>,
}

impl Workspace {
    fn ensure(&mut self, field: &SceneField, n: usize) {
        while self.caches.len() < n {
            self.caches.push(field.new_cache());
        }
        self.sdf.resize(n, 0.0);
        self.colors.resize(n, [0.0; 3]);
        self.d_sdf.resize(n, 0.0);
        self.d_render.resize(n, 0.0);
        self.d_colors.resize(n, [0.0; 3]);
    }
}

/// Evaluate the total loss on `pixels`, accumulating gradients into the
/// blocks selected by `grads` (gradients are added, never cleared).
///
/// Rays whose far-bound point lies outside every submap are dropped and the
/// batch means run over the kept rays. Depth sampling draws from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<R: Rng + ?Sized>(
    field: &mut SceneField,
    poses: &mut [ParamBlock],
    pixels: &[PixelSample],
    intr: &CameraIntrinsics,
    cfg: &ObjectiveConfig,
    grads: GradTargets<'_>,
    ws: &mut Workspace,
    rng: &mut R,
) -> Result<BatchResult> {
    let sc = &cfg.sampling;
    let delta = sc.truncation;
    let decoded: Vec<Pose> = poses.iter().map(|b| Pose::from_vec7(&b.values)).collect::<Result<_>>()?;

    let kept: Vec<&PixelSample> = pixels
        .iter()
        .filter(|px| px.depth > 0.0)
        .filter(|px| {
            let pose = &decoded[px.frame];
            let far_point = pose.transform_point(&(intr.camera_dir(px.u, px.v) * sc.far(px.depth)));
            field.manager.locate(&far_point).is_some()
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_rays = kept.len();
    let inv_n = 1.0 / n_rays as f64;
    ws.ensure(field, sc.samples_per_ray());
    let beta = field.beta.value();
    let mut d_beta = 0.0;
    let mut sums = LossBreakdown::default();
    // Per pose slot: Σ ∂L/∂p and Σ z ∂L/∂p in world coordinates, per camera direction.
    let mut pose_t = vec![Vector3::zeros(); poses.len()];
    let mut pose_q = vec![[0.0; 4]; poses.len()];

    for px in kept {
        let pose = &decoded[px.frame];
        let d_cam = intr.camera_dir(px.u, px.v);
        let dir = pose.q * d_cam;
        sample_ray_depths_into(px.depth, sc.near, sc.far(px.depth), sc.n_strat, sc.n_surface, delta, rng, &mut ws.samples);
        let n = ws.samples.len();
        for i in 0..n {
            let p = pose.t + dir * ws.samples.depths[i];
            let (s, c) = field.query(&p, &mut ws.caches[i])?;
            ws.sdf[i] = s;
            ws.colors[i] = c;
        }
        render_ray_into(&ws.samples.depths, &ws.sdf[..n], &ws.colors[..n], beta, &mut ws.render);
        let r = &ws.render;
        let e_c: [f64; 3] = [0, 1, 2].map(|k| r.color[k] - px.color[k]);
        let e_d = r.depth - px.depth;
        sums.rgb += (e_c[0] * e_c[0] + e_c[1] * e_c[1] + e_c[2] * e_c[2]) / 3.0;
        sums.depth += e_d * e_d;

        let train_pose = grads.poses.get(px.frame).copied().unwrap_or(false);
        let want_grad = grads.scene || train_pose;
        ws.d_sdf[..n].iter_mut().for_each(|g| *g = 0.0);
        let sdf_terms = ray_sdf_loss(
            &ws.sdf[..n],
            &ws.samples.depths,
            px.depth,
            delta,
            &cfg.weights,
            cfg.target,
            want_grad.then_some((&mut ws.d_sdf[..n], inv_n)),
        );
        sums.fs += sdf_terms.fs;
        sums.mid += sdf_terms.mid;
        sums.tail += sdf_terms.tail;
        if !want_grad {
            continue;
        }

        let w = &cfg.weights;
        let d_color = e_c.map(|e| w.rgb * 2.0 * e / 3.0 * inv_n);
        let d_depth = w.depth * 2.0 * e_d * inv_n;
        let db = render_ray_backward(
            r,
            &ws.samples.depths,
            &ws.colors[..n],
            beta,
            d_color,
            d_depth,
            &mut ws.d_render[..n],
            &mut ws.d_colors[..n],
        );
        d_beta += db;
        let mut dp_sum = Vector3::zeros();
        let mut dp_z = Vector3::zeros();
        for i in 0..n {
            let ds = ws.d_sdf[i] + ws.d_render[i];
            let dp = field.backward(&ws.caches[i], ds, ws.d_colors[i], grads.scene);
            if train_pose {
                dp_sum += dp;
                dp_z += dp * ws.samples.depths[i];
            }
        }
        if train_pose {
            pose_t[px.frame] += dp_sum;
            let g = rotation_vjp(
                [poses[px.frame].values[0], poses[px.frame].values[1], poses[px.frame].values[2], poses[px.frame].values[3]],
                &d_cam,
                &dp_z,
            );
            for k in 0..4 {
                pose_q[px.frame][k] += g[k];
            }
        }
    }

    if grads.scene {
        field.beta.accumulate(d_beta);
    }
    for (slot, block) in poses.iter_mut().enumerate() {
        if grads.poses.get(slot).copied().unwrap_or(false) {
            for k in 0..4 {
                block.grads[k] += pose_q[slot][k];
            }
            for k in 0..3 {
                block.grads[4 + k] += pose_t[slot][k];
            }
        }
    }

    let loss = LossBreakdown {
        rgb: sums.rgb * inv_n,
        depth: sums.depth * inv_n,
        fs: sums.fs * inv_n,
        mid: sums.mid * inv_n,
        tail: sums.tail * inv_n,
        total: 0.0,
    };
    let total = total_loss(loss.rgb, loss.depth, loss.fs, loss.tsdf(), &cfg.weights)?;
    Ok(BatchResult {
        loss: LossBreakdown { total, ..loss },
        rays: n_rays,
    })
}

/// Render color and depth for one pixel without touching gradients.
pub fn render_pixel<R: Rng + ?Sized>(
    field: &SceneField,
    pose: &Pose,
    intr: &CameraIntrinsics,
    u: f64,
    v: f64,
    depth_hint: f64,
    sampling: &SamplingConfig,
    ws: &mut Workspace,
    rng: &mut R,
) -> Result<([f64; 3], f64)> {
    ws.ensure(field, sampling.samples_per_ray());
    let dir = pose.q * intr.camera_dir(u, v);
    let sc = sampling;
    sample_ray_depths_into(depth_hint, sc.near, sc.far(depth_hint), sc.n_strat, sc.n_surface, sc.truncation, rng, &mut ws.samples);
    let n = ws.samples.len();
    for i in 0..n {
        let p = pose.t + dir * ws.samples.depths[i];
        let (s, c) = field.query(&p, &mut ws.caches[i])?;
        ws.sdf[i] = s;
        ws.colors[i] = c;
    }
    render_ray_into(&ws.samples.depths, &ws.sdf[..n], &ws.colors[..n], field.beta.value(), &mut ws.render);
    Ok((ws.render.color, ws.render.depth))
}

/// A 7-vector pose block.
pub fn pose_block(name: impl Into<String>, pose: &Pose, learning_rate: f64) -> ParamBlock {
    ParamBlock::new(name, pose.to_vec7().to_vec(), learning_rate)
}
