//! The frame loop: tracking, keyframing, mapping with co-visible keyframes,
//! and periodic global bundle adjustment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{debug, info, warn};
use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::{FieldConfig, SceneField};
use crate::loss::LossBreakdown;
use crate::manager::sample_allocation_points;
use crate::math::{constant_speed_predict, CameraIntrinsics, Pose};
use crate::objective::{evaluate, pose_block, GradTargets, ObjectiveConfig, PixelSample, Workspace};
use crate::params::{AdamConfig, ParamBlock};
use crate::submap::Aabb;
use crate::synthetic::Frame;
use crate::trajectory::TimedPose;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlamConfig {
    pub field: FieldConfig,
    pub objective: ObjectiveConfig,
    pub adam: AdamConfig,
    /// Mapping interval K (frames).
    pub map_every: usize,
    /// Co-visible keyframes per mapping step (M).
    pub covisible: usize,
    /// Keyframes sampled per bundle adjustment (G).
    pub ba_keyframes: usize,
    /// Smallest database that triggers bundle adjustment.
    pub ba_min_keyframes: usize,
    pub ba_every: usize,
    pub enable_ba: bool,
    pub rays_track: usize,
    pub rays_map: usize,
    pub iters_track: usize,
    pub iters_map: usize,
    pub iters_ba: usize,
    /// Scene-only iterations on the first frame.
    pub iters_init: usize,
    pub pose_lr_track: f64,
    pub pose_lr_map: f64,
    pub min_track_pixels: usize,
    pub covis_points: usize,
    pub covis_threshold: f64,
    /// Check for new submaps after every tracked frame, not only mapping frames.
    pub alloc_every_frame: bool,
    /// Gaussian noise (m, degrees) added to every tracked pose.
    pub pose_noise_trans: f64,
    pub pose_noise_rot_deg: f64,
    pub seed: u64,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            field: FieldConfig::default(),
            objective: ObjectiveConfig::default(),
            adam: AdamConfig::default(),
            map_every: 5,
            covisible: 8,
            ba_keyframes: 10,
            ba_min_keyframes: 4,
            ba_every: 20,
            enable_ba: true,
            rays_track: 1024,
            rays_map: 2048,
            iters_track: 10,
            iters_map: 15,
            iters_ba: 15,
            iters_init: 15,
            pose_lr_track: 1e-3,
            pose_lr_map: 5e-4,
            min_track_pixels: 50,
            covis_points: 200,
            covis_threshold: 0.05,
            alloc_every_frame: false,
            pose_noise_trans: 0.0,
            pose_noise_rot_deg: 0.0,
            seed: 0,
        }
    }
}

impl SlamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.map_every == 0 {
            return Err(Error::Config("map_every (K) must be at least 1".into()));
        }
        if self.ba_every < self.map_every {
            return Err(Error::Config("ba_every must be at least map_every (K)".into()));
        }
        if self.objective.sampling.n_strat == 0 {
            return Err(Error::Config("n_strat must be positive".into()));
        }
        if self.rays_track == 0 || self.rays_map == 0 {
            return Err(Error::Config("ray budgets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Keyframe {
    pub frame_index: usize,
    pub frame: Frame,
    /// Camera-to-world 7-vector `(qw, qx, qy, qz, tx, ty, tz)`.
    pub pose: ParamBlock,
    valid: Vec<usize>,
}

impl Keyframe {
    pub fn new(frame_index: usize, frame: Frame, pose: &Pose, learning_rate: f64) -> Self {
        let valid = valid_pixels(&frame);
        Self {
            frame_index,
            frame,
            pose: pose_block(format!("keyframe{frame_index}.pose"), pose, learning_rate),
            valid,
        }
    }

    pub fn current_pose(&self) -> Pose {
        Pose::from_vec7(&self.pose.values).expect("keyframe pose stays normalized")
    }
}

/// Indices of pixels with positive depth.
pub fn valid_pixels(frame: &Frame) -> Vec<usize> {
    frame.depth.iter().enumerate().filter(|(_, d)| **d > 0.0).map(|(i, _)| i).collect()
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub phase: Phase,
    pub frame: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Init,
    Track,
    Map,
    Ba,
}

/// A frame pose stored relative to a keyframe, so keyframe refinements carry over.
#[derive(Clone, Copy, Debug)]
struct FramePose {
    keyframe: usize,
    relative: Pose,
}

/// Co-visibility score: the fraction of `points` (world) that project into
/// the image of `pose` with positive depth.
pub fn covisibility_score(points: &[Vector3<f64>], pose: &Pose, intr: &CameraIntrinsics) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let hits = points
        .iter()
        .filter(|p| matches!(intr.project(pose, p), Some((u, v, z)) if z > 0.0 && intr.in_bounds(u, v)))
        .count();
    hits as f64 / points.len() as f64
}

/// Indices of the top `m` scores above `threshold`, best first; ties keep the earlier index.
pub fn top_covisible(scores: &[f64], m: usize, threshold: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > threshold).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

fn renormalize_pose(block: &mut ParamBlock) {
    let n = block.values[..4].iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 1e-12 {
        block.values[..4].iter_mut().for_each(|v| *v /= n);
    }
}

fn draw_indices<R: Rng + ?Sized>(pool: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if count <= pool {
        index::sample(rng, pool, count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..pool)).collect()
    }
}

pub struct SlamSystem {
    pub cfg: SlamConfig,
    pub intr: CameraIntrinsics,
    pub field: SceneField,
    pub keyframes: Vec<Keyframe>,
    frames: Vec<FramePose>,
    pub loss_log: Vec<LossRecord>,
    /// `(frame index, bounds)` per allocated submap.
    pub submap_log: Vec<(usize, Aabb)>,
    rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    ws: Workspace,
    iter: usize,
}

impl SlamSystem {
    pub fn new(cfg: SlamConfig, intr: CameraIntrinsics) -> Result<Self> {
        cfg.validate()?;
        intr.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let field = SceneField::new(&cfg.field, &mut rng);
        Ok(Self {
            cfg,
            intr,
            field,
            keyframes: Vec::new(),
            frames: Vec::new(),
            loss_log: Vec::new(),
            submap_log: Vec::new(),
            rng,
            noise_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15),
            ws: Workspace::default(),
            iter: 0,
        })
    }

    pub fn frames_processed(&self) -> usize {
        self.frames.len()
    }

    /// Current estimate of frame `i`.
    pub fn estimated_pose(&self, i: usize) -> Pose {
        let fp = &self.frames[i];
        self.keyframes[fp.keyframe].current_pose().compose(&fp.relative)
    }

    pub fn trajectory(&self) -> Vec<Pose> {
        (0..self.frames.len()).map(|i| self.estimated_pose(i)).collect()
    }

    /// Feed the next frame. The first frame requires its ground-truth pose.
    pub fn process_frame(&mut self, frame: &Frame, gt_pose: Option<&Pose>) -> Result<Pose> {
        let idx = self.frames.len();
        if frame.depth.len() != self.intr.num_pixels() || frame.color.len() != self.intr.num_pixels() {
            return Err(Error::InvalidIntrinsics(format!("frame {idx} does not match the image size")));
        }
        if idx == 0 {
            let gt = gt_pose.ok_or(Error::MissingGroundTruth)?;
            self.initialize_first_frame(frame, gt)?;
            return Ok(*gt);
        }
        let mut pose = self.track_frame(idx, frame)?;
        if self.cfg.pose_noise_trans > 0.0 || self.cfg.pose_noise_rot_deg > 0.0 {
            pose = self.perturb(&pose);
        }
        let reference = self.keyframes.len() - 1;
        self.frames.push(FramePose {
            keyframe: reference,
            relative: self.keyframes[reference].current_pose().inverse().compose(&pose),
        });
        let mapping = idx % self.cfg.map_every == 0;
        if mapping {
            self.map_frame(idx, frame, &pose)?;
        } else if self.cfg.alloc_every_frame {
            self.allocate(idx, frame, &pose)?;
        }
        if self.cfg.enable_ba && idx % self.cfg.ba_every == 0 {
            self.global_ba()?;
        }
        Ok(self.estimated_pose(idx))
    }

    fn perturb(&mut self, pose: &Pose) -> Pose {
        let nt = Normal::new(0.0, self.cfg.pose_noise_trans.max(0.0)).unwrap();
        let nr = Normal::new(0.0, self.cfg.pose_noise_rot_deg.max(0.0).to_radians()).unwrap();
        let r = &mut self.noise_rng;
        let dt = Vector3::new(nt.sample(r), nt.sample(r), nt.sample(r));
        let dr = Vector3::new(nr.sample(r), nr.sample(r), nr.sample(r));
        Pose::new(UnitQuaternion::from_scaled_axis(dr) * pose.q, pose.t + dt)
    }

    /// Allocate the first submap and fit the scene to the first frame at its
    /// ground-truth pose.
    pub fn initialize_first_frame(&mut self, frame: &Frame, gt: &Pose) -> Result<()> {
        self.allocate(0, frame, gt)?;
        self.keyframes.push(Keyframe::new(0, frame.clone(), gt, 0.0));
        self.frames.push(FramePose {
            keyframe: 0,
            relative: Pose::identity(),
        });
        let rays = vec![self.cfg.rays_map];
        self.optimize(&[0], &rays, self.cfg.iters_init, Phase::Init, 0, false)?;
        info!("initialized on frame 0 with {} submap(s)", self.field.manager.len());
        Ok(())
    }

    fn allocate(&mut self, idx: usize, frame: &Frame, pose: &Pose) -> Result<()> {
        let alloc = self.field.manager.alloc;
        let pts = sample_allocation_points(&frame.depth, &self.intr, pose, alloc.sample_points, alloc.max_depth, &mut self.rng)?;
        if let Some(map) = self.field.manager.maybe_allocate(&pts, &pose.t, &mut self.rng)? {
            info!(
                "frame {idx}: new submap {} [{:.2} {:.2} {:.2}] - [{:.2} {:.2} {:.2}], N_max {}",
                map.creation_index,
                map.bounds.min.x,
                map.bounds.min.y,
                map.bounds.min.z,
                map.bounds.max.x,
                map.bounds.max.y,
                map.bounds.max.z,
                map.finest_res
            );
            self.submap_log.push((idx, map.bounds));
        }
        Ok(())
    }

    /// Optimize the 7-vector of frame `idx` against the frozen scene.
    pub fn track_frame(&mut self, idx: usize, frame: &Frame) -> Result<Pose> {
        let prev = self.estimated_pose(idx - 1);
        let guess = if idx >= 2 {
            constant_speed_predict(&prev, &self.estimated_pose(idx - 2))
        } else {
            prev
        };
        let valid = valid_pixels(frame);
        if valid.len() < self.cfg.min_track_pixels {
            warn!("frame {idx}: only {} valid depth pixels, keeping the predicted pose", valid.len());
            return Ok(guess);
        }
        let mut poses = vec![pose_block("tracking.pose", &guess, self.cfg.pose_lr_track)];
        for _ in 0..self.cfg.iters_track {
            let pixels: Vec<PixelSample> = draw_indices(valid.len(), self.cfg.rays_track, &mut self.rng)
                .into_iter()
                .map(|k| pixel_sample(frame, valid[k], 0, self.intr.width))
                .collect();
            poses[0].zero_grad();
            let res = evaluate(
                &mut self.field,
                &mut poses,
                &pixels,
                &self.intr,
                &self.cfg.objective,
                GradTargets { scene: false, poses: &[true] },
                &mut self.ws,
                &mut self.rng,
            );
            let res = match res {
                Ok(r) => r,
                Err(Error::EmptyBatch) => {
                    warn!("frame {idx}: no rays inside the map, tracking stopped");
                    break;
                }
                Err(e) => return Err(e),
            };
            self.log(Phase::Track, idx, res.loss);
            poses[0].adam_step(&self.cfg.adam)?;
            renormalize_pose(&mut poses[0]);
        }
        Pose::from_vec7(&poses[0].values)
    }

    /// Keyframes (excluding `exclude`) ranked by co-visibility with `pose`.
    pub fn select_covisible(&mut self, pose: &Pose, exclude: Option<usize>) -> Vec<usize> {
        let mut scores = vec![0.0; self.keyframes.len()];
        for (k, kf) in self.keyframes.iter().enumerate() {
            if Some(k) == exclude || kf.valid.is_empty() {
                continue;
            }
            let kp = kf.current_pose();
            let pts: Vec<Vector3<f64>> = draw_indices(kf.valid.len(), self.cfg.covis_points.min(kf.valid.len()), &mut self.rng)
                .into_iter()
                .map(|j| {
                    let i = kf.valid[j];
                    let (u, v) = ((i % self.intr.width) as f64, (i / self.intr.width) as f64);
                    self.intr.back_project(&kp, u, v, kf.frame.depth[i])
                })
                .collect();
            scores[k] = covisibility_score(&pts, pose, &self.intr);
        }
        top_covisible(&scores, self.cfg.covisible, self.cfg.covis_threshold)
    }

    /// Allocate if needed, insert a keyframe, and jointly optimize the scene
    /// with the current and co-visible keyframes.
    pub fn map_frame(&mut self, idx: usize, frame: &Frame, pose: &Pose) -> Result<()> {
        self.allocate(idx, frame, pose)?;
        self.keyframes.push(Keyframe::new(idx, frame.clone(), pose, self.cfg.pose_lr_map));
        let current = self.keyframes.len() - 1;
        self.frames[idx] = FramePose {
            keyframe: current,
            relative: Pose::identity(),
        };
        let covis = self.select_covisible(pose, Some(current));
        let mut ids = vec![current];
        ids.extend(&covis);
        let rays = split_rays(self.cfg.rays_map, covis.len());
        debug!("frame {idx}: mapping with keyframes {:?}", ids.iter().map(|&k| self.keyframes[k].frame_index).collect::<Vec<_>>());
        self.optimize(&ids, &rays, self.cfg.iters_map, Phase::Map, idx, true)
    }

    /// Joint refinement over up to G randomly chosen keyframes.
    pub fn global_ba(&mut self) -> Result<()> {
        let n = self.keyframes.len();
        if n < self.cfg.ba_min_keyframes {
            info!("bundle adjustment skipped: {n} keyframe(s), need {}", self.cfg.ba_min_keyframes);
            return Ok(());
        }
        let g = self.cfg.ba_keyframes.min(n);
        let mut ids = index::sample(&mut self.rng, n, g).into_vec();
        ids.sort_unstable();
        let per = self.cfg.rays_map / g;
        let mut rays = vec![per; g];
        rays[0] += self.cfg.rays_map - per * g;
        let frame = self.frames.len() - 1;
        self.optimize(&ids, &rays, self.cfg.iters_ba, Phase::Ba, frame, true)
    }

    /// Shared mapping loop over keyframes `ids` with `rays[i]` rays each.
    /// Keyframe 0 keeps its pose; others are optimized when `train_poses`.
    fn optimize(&mut self, ids: &[usize], rays: &[usize], iters: usize, phase: Phase, frame: usize, train_poses: bool) -> Result<()> {
        let trainable: Vec<bool> = ids.iter().map(|&k| train_poses && k != 0).collect();
        for _ in 0..iters {
            let mut pixels = Vec::with_capacity(rays.iter().sum());
            for (slot, (&k, &count)) in ids.iter().zip(rays).enumerate() {
                let kf = &self.keyframes[k];
                if kf.valid.is_empty() {
                    continue;
                }
                for j in draw_indices(kf.valid.len(), count, &mut self.rng) {
                    pixels.push(pixel_sample(&kf.frame, kf.valid[j], slot, self.intr.width));
                }
            }
            let mut poses: Vec<ParamBlock> = ids.iter().map(|&k| self.keyframes[k].pose.clone()).collect();
            poses.iter_mut().for_each(ParamBlock::zero_grad);
            let res = evaluate(
                &mut self.field,
                &mut poses,
                &pixels,
                &self.intr,
                &self.cfg.objective,
                GradTargets {
                    scene: true,
                    poses: &trainable,
                },
                &mut self.ws,
                &mut self.rng,
            );
            let res = match res {
                Ok(r) => r,
                Err(Error::EmptyBatch) => {
                    warn!("frame {frame}: no rays inside the map during {phase:?}");
                    return Ok(());
                }
                Err(e) => return Err(e),
            };
            self.log(phase, frame, res.loss);
            self.step_scene()?;
            for ((&k, block), &train) in ids.iter().zip(poses.iter_mut()).zip(&trainable) {
                if train {
                    block.adam_step(&self.cfg.adam)?;
                    renormalize_pose(block);
                    self.keyframes[k].pose = block.clone();
                }
            }
        }
        Ok(())
    }

    fn step_scene(&mut self) -> Result<()> {
        let adam = self.cfg.adam;
        for map in self.field.manager.submaps_mut() {
            if map.has_gradient() {
                for b in map.blocks_mut() {
                    b.adam_step(&adam)?;
                }
            }
        }
        self.field.decoders.sdf.params.adam_step(&adam)?;
        self.field.decoders.color.params.adam_step(&adam)?;
        self.field.beta.block.adam_step(&adam)
    }

    fn log(&mut self, phase: Phase, frame: usize, loss: LossBreakdown) {
        self.loss_log.push(LossRecord {
            iter: self.iter,
            phase,
            frame,
            loss,
        });
        self.iter += 1;
    }

    /// Stamped estimated trajectory using the ground-truth timestamps.
    pub fn timed_trajectory(&self, timestamps: &[f64]) -> Vec<TimedPose> {
        self.trajectory()
            .into_iter()
            .enumerate()
            .map(|(i, pose)| TimedPose {
                timestamp: timestamps.get(i).copied().unwrap_or(i as f64),
                pose,
            })
            .collect()
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iter,L_rgb,L_depth,L_fs,L_mid,L_tail,total\n");
        for r in &self.loss_log {
            let l = &r.loss;
            writeln!(s, "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}", r.iter, l.rgb, l.depth, l.fs, l.mid, l.tail, l.total).unwrap();
        }
        s
    }

    pub fn submap_log_text(&self) -> String {
        let mut s = String::new();
        for (f, b) in &self.submap_log {
            writeln!(s, "{f} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}", b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z).unwrap();
        }
        s
    }

    /// Write `loss.csv` and `submaps.txt` into `dir`.
    pub fn write_logs(&self, dir: &Path) -> Result<()> {
        for (name, text) in [("loss.csv", self.loss_csv()), ("submaps.txt", self.submap_log_text())] {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Scene parameters and keyframe poses, with submap bounds in the manifest.
    pub fn write_checkpoint(&self, dir: &Path) -> Result<()> {
        let mut meta = self.field.checkpoint_meta();
        meta.extend(self.keyframes.iter().map(|k| format!("keyframe {}", k.frame_index)));
        let mut blocks = self.field.blocks();
        blocks.extend(self.keyframes.iter().map(|k| &k.pose));
        crate::params::write_checkpoint(dir, &meta, &blocks)
    }
}

/// `total` rays: half for the current frame, the rest split evenly across
/// `others` keyframes (all to the current frame when there are none).
pub fn split_rays(total: usize, others: usize) -> Vec<usize> {
    if others == 0 {
        return vec![total];
    }
    let own = total - total / 2;
    let per = (total / 2) / others;
    let mut out = vec![own];
    out.extend(std::iter::repeat_n(per, others));
    out[0] += total - out.iter().sum::<usize>();
    out
}

fn pixel_sample(frame: &Frame, i: usize, slot: usize, width: usize) -> PixelSample {
    PixelSample {
        frame: slot,
        u: (i % width) as f64,
        v: (i / width) as f64,
        depth: frame.depth[i],
        color: frame.color[i],
    }
}
