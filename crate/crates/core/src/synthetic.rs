//! Analytic CSG scenes, camera trajectories, and a sphere-tracing RGB-D renderer.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math::{look_at, CameraIntrinsics, Pose};
use crate::submap::Aabb;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vector3<f64>, radius: f64 },
    Box { center: Vector3<f64>, half: Vector3<f64> },
}

impl Shape {
    /// Exact signed distance.
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Box { center, half } => {
                let q = (p - center).abs() - half;
                let outside = q.map(|v| v.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Shape::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Shape::Box { half, .. } => 8.0 * (half.x * half.y + half.y * half.z + half.x * half.z),
        }
    }

    /// Uniform point on the surface and its outward normal.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Shape::Sphere { center, radius } => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi = rng.random_range(0.0..2.0 * PI);
                let r = (1.0 - z * z).sqrt();
                let n = Vector3::new(r * phi.cos(), r * phi.sin(), z);
                (center + n * *radius, n)
            }
            Shape::Box { center, half } => {
                let faces = [half.y * half.z, half.x * half.z, half.x * half.y];
                let mut pick = rng.random_range(0.0..faces.iter().sum::<f64>());
                let mut axis = 0;
                while axis < 2 && pick >= faces[axis] {
                    pick -= faces[axis];
                    axis += 1;
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = Vector3::zeros();
                for a in 0..3 {
                    p[a] = if a == axis { sign * half[a] } else { rng.random_range(-half[a]..half[a]) };
                }
                let mut n = Vector3::zeros();
                n[axis] = sign;
                (center + p, n)
            }
        }
    }

    /// Index of the box face nearest to `p` (±x, ±y, ±z as 0..6); 0 for spheres.
    fn face(&self, p: &Vector3<f64>) -> usize {
        match self {
            Shape::Sphere { .. } => 0,
            Shape::Box { center, half } => {
                let r = (p - center).component_div(half);
                let axis = r.iamax();
                2 * axis + usize::from(r[axis] < 0.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsgOp {
    Union,
    Subtract,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coloring {
    Solid([f64; 3]),
    /// One color per box face, ordered +x, -x, +y, -y, +z, -z.
    PerFace([[f64; 3]; 6]),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub coloring: Coloring,
    pub op: CsgOp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub bounds: Aabb,
    /// Period (m) of a smooth brightness pattern applied to all colors; 0 disables it.
    pub texture_period: f64,
}

impl AnalyticScene {
    /// Evaluate the CSG chain left to right; returns the distance and the
    /// index of the primitive that defines it.
    fn eval(&self, p: &Vector3<f64>) -> Result<(f64, usize)> {
        let first = self.primitives.first().ok_or(Error::EmptyScene)?;
        let mut d = first.shape.sdf(p);
        let mut owner = 0;
        for (i, prim) in self.primitives.iter().enumerate().skip(1) {
            let b = prim.shape.sdf(p);
            match prim.op {
                CsgOp::Union if b < d => {
                    d = b;
                    owner = i;
                }
                CsgOp::Subtract if -b > d => {
                    d = -b;
                    owner = i;
                }
                _ => {}
            }
        }
        Ok((d, owner))
    }

    pub fn sdf(&self, p: &Vector3<f64>) -> Result<f64> {
        self.eval(p).map(|(d, _)| d)
    }

    pub fn color(&self, p: &Vector3<f64>) -> Result<[f64; 3]> {
        let (_, owner) = self.eval(p)?;
        let prim = &self.primitives[owner];
        let base = match prim.coloring {
            Coloring::Solid(c) => c,
            Coloring::PerFace(faces) => faces[prim.shape.face(p)],
        };
        if self.texture_period <= 0.0 {
            return Ok(base);
        }
        let k = 2.0 * PI / self.texture_period;
        let m = 0.8 + 0.2 * ((k * p.x).sin() * (k * p.y).cos() + (k * p.z).sin()) / 2.0;
        Ok(base.map(|c| (c * m).clamp(0.0, 1.0)))
    }

    /// Unit gradient of the scene SDF by central differences.
    pub fn normal(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        let h = 1e-5;
        let mut g = Vector3::zeros();
        for a in 0..3 {
            let mut e = Vector3::zeros();
            e[a] = h;
            g[a] = (self.sdf(&(p + e))? - self.sdf(&(p - e))?) / (2.0 * h);
        }
        Ok(g.normalize())
    }

    /// The default test scene: a 4 × 4 × 3 m room with colored walls, a
    /// sphere and a box on the floor. Floor at z = -1.5, z up.
    pub fn box_room() -> Self {
        let room_half = Vector3::new(2.0, 2.0, 1.5);
        let wall = 0.2;
        let walls = [
            [0.85, 0.25, 0.2],
            [0.2, 0.55, 0.85],
            [0.3, 0.75, 0.3],
            [0.9, 0.8, 0.25],
            [0.85, 0.85, 0.85],
            [0.55, 0.4, 0.3],
        ];
        Self {
            primitives: vec![
                Primitive {
                    shape: Shape::Box {
                        center: Vector3::zeros(),
                        half: room_half + Vector3::repeat(wall),
                    },
                    coloring: Coloring::Solid([0.5, 0.5, 0.5]),
                    op: CsgOp::Union,
                },
                Primitive {
                    shape: Shape::Box {
                        center: Vector3::zeros(),
                        half: room_half,
                    },
                    coloring: Coloring::PerFace(walls),
                    op: CsgOp::Subtract,
                },
                Primitive {
                    shape: Shape::Sphere {
                        center: Vector3::new(-0.6, 0.5, -1.05),
                        radius: 0.45,
                    },
                    coloring: Coloring::Solid([0.75, 0.3, 0.75]),
                    op: CsgOp::Union,
                },
                Primitive {
                    shape: Shape::Box {
                        center: Vector3::new(0.7, -0.5, -1.2),
                        half: Vector3::new(0.3, 0.25, 0.3),
                    },
                    coloring: Coloring::PerFace([
                        [0.2, 0.8, 0.8],
                        [0.1, 0.5, 0.5],
                        [0.3, 0.7, 0.9],
                        [0.2, 0.6, 0.7],
                        [0.9, 0.9, 0.6],
                        [0.2, 0.2, 0.2],
                    ]),
                    op: CsgOp::Union,
                },
            ],
            bounds: Aabb::new(Vector3::new(-2.2, -2.2, -1.7), Vector3::new(2.2, 2.2, 1.7)).unwrap(),
            texture_period: 0.6,
        }
    }

    /// Area-weighted points on the exposed surface: primitives are sampled in
    /// proportion to their area, and a point is kept when it lies on the scene
    /// zero set with free space inside `bounds` just off the surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vector3<f64>>> {
        if self.primitives.is_empty() {
            return Err(Error::EmptyScene);
        }
        let areas: Vec<f64> = self.primitives.iter().map(|p| p.shape.area()).collect();
        let total: f64 = areas.iter().sum();
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n && attempts < 1000 * n.max(1) {
            attempts += 1;
            let mut pick = rng.random_range(0.0..total);
            let mut k = 0;
            while k + 1 < areas.len() && pick >= areas[k] {
                pick -= areas[k];
                k += 1;
            }
            let (p, normal) = self.primitives[k].shape.sample_surface(rng);
            // Subtracted shapes face inward.
            let normal = if self.primitives[k].op == CsgOp::Subtract { -normal } else { normal };
            let probe = p + normal * 1e-3;
            if self.sdf(&p)?.abs() < 1e-9 && self.sdf(&probe)? > 0.0 && self.bounds.contains(&probe) {
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// Camera path families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrajectoryKind {
    /// Circle of `radius` at height `height` around `center`, sweeping
    /// `sweep_deg` with smoothstep easing, plus a vertical bob.
    Orbit {
        center: Vector3<f64>,
        radius: f64,
        height: f64,
        sweep_deg: f64,
        bob: f64,
    },
    /// Lissajous figure in the horizontal plane.
    Lissajous {
        center: Vector3<f64>,
        amplitude: Vector3<f64>,
        freq: (f64, f64, f64),
    },
    /// Linear interpolation through `waypoints`.
    Waypoints(&'static [[f64; 3]]),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub frames: usize,
    pub target: Vector3<f64>,
}

impl TrajectorySpec {
    /// The default orbit for `box_room`.
    pub fn box_room_orbit(frames: usize) -> Self {
        Self {
            kind: TrajectoryKind::Orbit {
                center: Vector3::zeros(),
                radius: 1.2,
                height: 0.0,
                sweep_deg: 360.0,
                bob: 0.1,
            },
            frames,
            target: Vector3::new(0.0, 0.0, -0.6),
        }
    }

    pub fn poses(&self) -> Vec<Pose> {
        let up = Vector3::z();
        let n = self.frames;
        (0..n)
            .map(|i| {
                let x = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                let eye = match self.kind {
                    TrajectoryKind::Orbit {
                        center,
                        radius,
                        height,
                        sweep_deg,
                        bob,
                    } => {
                        let eased = x * x * (3.0 - 2.0 * x);
                        let a = sweep_deg.to_radians() * eased;
                        center + Vector3::new(radius * a.cos(), radius * a.sin(), height + bob * (2.0 * a).sin())
                    }
                    TrajectoryKind::Lissajous { center, amplitude, freq } => {
                        let t = 2.0 * PI * x;
                        center
                            + Vector3::new(
                                amplitude.x * (freq.0 * t).sin(),
                                amplitude.y * (freq.1 * t).cos(),
                                amplitude.z * (freq.2 * t).sin(),
                            )
                    }
                    TrajectoryKind::Waypoints(w) => {
                        if w.len() == 1 {
                            Vector3::from(w[0])
                        } else {
                            let s = x * (w.len() - 1) as f64;
                            let k = (s.floor() as usize).min(w.len() - 2);
                            let f = s - k as f64;
                            Vector3::from(w[k]) * (1.0 - f) + Vector3::from(w[k + 1]) * f
                        }
                    }
                };
                look_at(&eye, &self.target, &up)
            })
            .collect()
    }
}

/// An RGB-D image pair, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub color: Vec<[f64; 3]>,
    /// Camera z-depth in meters, 0 where invalid.
    pub depth: Vec<f64>,
}

pub const TRACE_EPS: f64 = 1e-4;
pub const TRACE_MAX: f64 = 10.0;

/// Sphere-trace from `origin` along unit `dir`; returns the arclength of the hit.
pub fn sphere_trace(scene: &AnalyticScene, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Result<Option<f64>> {
    let mut t = 0.0;
    for _ in 0..512 {
        let d = scene.sdf(&(origin + dir * t))?;
        if d.abs() < TRACE_EPS {
            return Ok(Some(t));
        }
        // A step never exceeds the local distance bound.
        t += d.abs();
        if t > TRACE_MAX {
            break;
        }
    }
    Ok(None)
}

/// Render color and z-depth for every pixel, optionally with Gaussian depth noise.
pub fn render_gt_frame<R: Rng + ?Sized>(
    scene: &AnalyticScene,
    intr: &CameraIntrinsics,
    pose: &Pose,
    depth_noise: f64,
    rng: &mut R,
) -> Result<Frame> {
    let n = intr.num_pixels();
    let mut color = vec![[0.0; 3]; n];
    let mut depth = vec![0.0; n];
    let noise = Normal::new(0.0, depth_noise.max(0.0)).unwrap();
    for v in 0..intr.height {
        for u in 0..intr.width {
            let d_cam = intr.camera_dir(u as f64, v as f64);
            let scale = d_cam.norm();
            let dir = pose.q * (d_cam / scale);
            if let Some(t) = sphere_trace(scene, &pose.t, &dir)? {
                let i = v * intr.width + u;
                let hit = pose.t + dir * t;
                color[i] = scene.color(&hit)?;
                let mut z = t / scale;
                if depth_noise > 0.0 {
                    z += noise.sample(rng);
                }
                depth[i] = z.max(0.0);
            }
        }
    }
    Ok(Frame { color, depth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere_scene() -> AnalyticScene {
        AnalyticScene {
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: Vector3::zeros(),
                    radius: 1.0,
                },
                coloring: Coloring::Solid([1.0, 0.0, 0.0]),
                op: CsgOp::Union,
            }],
            bounds: Aabb::new(Vector3::repeat(-5.0), Vector3::repeat(5.0)).unwrap(),
            texture_period: 0.0,
        }
    }

    #[test]
    fn primitive_examples() {
        let s = sphere_scene();
        assert_eq!(s.sdf(&Vector3::new(2.0, 0.0, 0.0)).unwrap(), 1.0);
        let b = Shape::Box {
            center: Vector3::zeros(),
            half: Vector3::new(1.0, 2.0, 3.0),
        };
        assert_eq!(b.sdf(&Vector3::new(1.0, 0.5, -1.0)), 0.0);
        assert_eq!(b.sdf(&Vector3::new(3.0, 0.0, 0.0)), 2.0);
        assert_eq!(b.sdf(&Vector3::zeros()), -1.0);
    }

    #[test]
    fn union_is_min() {
        let mut s = sphere_scene();
        s.primitives.push(Primitive {
            shape: Shape::Sphere {
                center: Vector3::new(3.0, 0.0, 0.0),
                radius: 0.5,
            },
            coloring: Coloring::Solid([0.0, 1.0, 0.0]),
            op: CsgOp::Union,
        });
        let p = Vector3::new(2.0, 0.3, 0.0);
        let a = s.primitives[0].shape.sdf(&p);
        let b = s.primitives[1].shape.sdf(&p);
        assert_eq!(s.sdf(&p).unwrap(), a.min(b));
        assert_eq!(s.color(&p).unwrap(), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_scene_errors() {
        let mut s = sphere_scene();
        s.primitives.clear();
        assert!(matches!(s.sdf(&Vector3::zeros()), Err(Error::EmptyScene)));
    }

    #[test]
    fn frontal_wall_depth() {
        let scene = AnalyticScene::box_room();
        let intr = CameraIntrinsics::new(40.0, 40.0, 32.0, 24.0, 64, 48, 5000.0).unwrap();
        // Wall at x = 2, camera at x = 0 facing +x.
        let pose = look_at(&Vector3::zeros(), &Vector3::new(5.0, 0.0, 0.0), &Vector3::z());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = render_gt_frame(&scene, &intr, &pose, 0.0, &mut rng).unwrap();
        assert!((f.depth[24 * 64 + 32] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn misses_have_zero_depth() {
        let scene = sphere_scene();
        let intr = CameraIntrinsics::desk();
        let pose = look_at(&Vector3::new(0.0, 0.0, -4.0), &Vector3::zeros(), &Vector3::y());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = render_gt_frame(&scene, &intr, &pose, 0.0, &mut rng).unwrap();
        assert_eq!(f.depth[0], 0.0);
        assert!(f.depth[24 * 64 + 32] > 0.0);
    }

    #[test]
    fn sphere_depth_matches_closed_form() {
        let scene = sphere_scene();
        let intr = CameraIntrinsics::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = look_at(&Vector3::new(0.3, -0.2, -3.0), &Vector3::zeros(), &Vector3::y());
        let f = render_gt_frame(&scene, &intr, &pose, 0.0, &mut rng).unwrap();
        let mut checked = 0;
        for _ in 0..1000 {
            let (u, v) = (rng.random_range(0..64), rng.random_range(0..48));
            let d_cam = intr.camera_dir(u as f64, v as f64);
            let dir = pose.q * d_cam.normalize();
            // |o + t d|² = 1.
            let o = pose.t;
            let b = o.dot(&dir);
            let disc = b * b - (o.norm_squared() - 1.0);
            let depth = f.depth[v * 64 + u];
            if disc < 0.0 {
                assert_eq!(depth, 0.0);
                continue;
            }
            let t = -b - disc.sqrt();
            let z = t / d_cam.norm();
            if disc < 1e-3 {
                continue; // grazing rays converge slowly
            }
            assert!((depth - z).abs() < 1e-3, "{depth} vs {z}");
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn depth_consistent_with_pose() {
        let scene = AnalyticScene::box_room();
        let intr = CameraIntrinsics::desk();
        let poses = TrajectorySpec::box_room_orbit(5).poses();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for pose in &poses {
            let f = render_gt_frame(&scene, &intr, pose, 0.0, &mut rng).unwrap();
            for v in (0..48).step_by(3) {
                for u in (0..64).step_by(3) {
                    let d = f.depth[v * 64 + u];
                    assert!(d > 0.0, "room is closed");
                    let p = intr.back_project(pose, u as f64, v as f64, d);
                    assert!(scene.sdf(&p).unwrap().abs() < 2e-3);
                }
            }
        }
    }

    #[test]
    fn trajectories_face_target() {
        let specs = [
            TrajectorySpec::box_room_orbit(50),
            TrajectorySpec {
                kind: TrajectoryKind::Lissajous {
                    center: Vector3::zeros(),
                    amplitude: Vector3::new(1.0, 0.8, 0.2),
                    freq: (1.0, 2.0, 3.0),
                },
                frames: 40,
                target: Vector3::new(0.0, 0.0, -1.0),
            },
            TrajectorySpec {
                kind: TrajectoryKind::Waypoints(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.2], [-1.0, 0.0, 0.0]]),
                frames: 30,
                target: Vector3::new(0.0, 0.0, -1.2),
            },
        ];
        for spec in specs {
            let poses = spec.poses();
            assert_eq!(poses.len(), spec.frames);
            for p in poses {
                let c = p.inverse_transform_point(&spec.target);
                assert!(c.z > 0.0);
                assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn surface_samples_lie_on_surface() {
        let scene = AnalyticScene::box_room();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = scene.sample_surface(200, &mut rng).unwrap();
        assert_eq!(pts.len(), 200);
        assert!(pts.iter().all(|p| scene.sdf(p).unwrap().abs() < 1e-5));
        // Nothing on the outside of the outer shell.
        assert!(pts.iter().all(|p| p.x.abs() <= 2.0 + 1e-5 && p.y.abs() <= 2.0 + 1e-5 && p.z.abs() <= 1.5 + 1e-5));
    }
}
