//! Trajectory, depth and mesh metrics.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::SceneField;
use crate::marching_cubes::{marching_cubes, ScalarGrid, TriMesh};
use crate::math::{CameraIntrinsics, Pose};
use crate::objective::{render_pixel, Workspace};
use crate::render::SamplingConfig;
use crate::synthetic::{AnalyticScene, Frame};

/// Rigid transform `(R, t)` minimizing `Σ |R·a + t − b|²`.
pub fn align_rigid(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<(Rotation3<f64>, Vector3<f64>)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { est: a.len(), gt: b.len() });
    }
    if a.is_empty() {
        return Err(Error::LengthMismatch { est: 0, gt: 0 });
    }
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        h += (q - cb) * (p - ca).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = Rotation3::from_matrix_unchecked(u * s * v_t);
    Ok((r, cb - r * ca))
}

/// Absolute trajectory error (RMSE of positions, metres) after rigid alignment
/// of `estimated` onto `groundtruth`.
pub fn ate_rmse(estimated: &[Pose], groundtruth: &[Pose]) -> Result<f64> {
    let a: Vec<Vector3<f64>> = estimated.iter().map(|p| p.t).collect();
    let b: Vec<Vector3<f64>> = groundtruth.iter().map(|p| p.t).collect();
    let (r, t) = align_rigid(&a, &b)?;
    let sq: f64 = a.iter().zip(&b).map(|(p, q)| (r * p + t - q).norm_squared()).sum();
    Ok((sq / a.len() as f64).sqrt())
}

/// Mean absolute depth error (metres) of the rendered field over every
/// `stride`-th valid pixel of every `stride`-th frame, sampling along each ray around the observed depth.
#[allow(clippy::too_many_arguments)]
pub fn depth_l1<R: Rng + ?Sized>(
    field: &SceneField,
    poses: &[Pose],
    frames: &[&Frame],
    intr: &CameraIntrinsics,
    sampling: &SamplingConfig,
    stride: usize,
    rng: &mut R,
) -> Result<f64> {
    if poses.len() != frames.len() {
        return Err(Error::LengthMismatch { est: poses.len(), gt: frames.len() });
    }
    let stride = stride.max(1);
    let mut ws = Workspace::default();
    let (mut sum, mut n) = (0.0, 0usize);
    for (pose, frame) in poses.iter().zip(frames).step_by(stride) {
        for i in (0..intr.num_pixels()).step_by(stride) {
            let d = frame.depth[i];
            if d <= 0.0 {
                continue;
            }
            let (u, v) = ((i % intr.width) as f64, (i / intr.width) as f64);
            let (_, dhat) = render_pixel(field, pose, intr, u, v, d, sampling, &mut ws, rng)?;
            sum += (dhat - d).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(sum / n as f64)
}

/// Zero level set of the field over `bounds` at `voxel` spacing, with vertex colors.
pub fn extract_mesh(field: &SceneField, voxel: f64) -> Result<TriMesh> {
    let Some(b) = field.manager.bounds() else {
        return Ok(TriMesh::default());
    };
    let dims = [0, 1, 2].map(|k| ((b.max[k] - b.min[k]) / voxel).ceil() as usize + 1);
    let mut cache = field.new_cache();
    let mut err = None;
    let grid = ScalarGrid::sample(b.min, voxel, dims, |p| match field.sdf_at(p, &mut cache) {
        Ok(s) => s,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let mut mesh = marching_cubes(&grid, 0.0);
    mesh.colors = mesh
        .vertices
        .iter()
        .map(|v| field.query(v, &mut cache).map(|(_, c)| c))
        .collect::<Result<_>>()?;
    Ok(mesh)
}

/// Drop triangles whose centroid no frame saw: it must project inside some
/// image with positive depth no further than the observed depth plus `margin`.
pub fn cull_mesh(mesh: &mut TriMesh, poses: &[Pose], frames: &[&Frame], intr: &CameraIntrinsics, margin: f64) {
    let keep: Vec<bool> = (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.triangle(t);
            let centroid = (a + b + c) / 3.0;
            poses.iter().zip(frames).any(|(pose, frame)| {
                let Some((u, v, z)) = intr.project(pose, &centroid) else {
                    return false;
                };
                if z <= 0.0 || !intr.in_bounds(u, v) {
                    return false;
                }
                let (ui, vi) = (u.round() as usize, v.round() as usize);
                if ui >= intr.width || vi >= intr.height {
                    return false;
                }
                let d = frame.depth[vi * intr.width + ui];
                d > 0.0 && z <= d + margin
            })
        })
        .collect();
    mesh.retain_triangles(&keep);
}

/// `n` points on the mesh, area-weighted.
pub fn sample_mesh<R: Rng + ?Sized>(mesh: &TriMesh, n: usize, rng: &mut R) -> Vec<Vector3<f64>> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(t);
        cdf.push(acc);
    }
    if acc <= 0.0 {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let r = rng.random_range(0.0..acc);
            let t = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(t);
            let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            a + (b - a) * u + (c - a) * v
        })
        .collect()
}

fn closest_on_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let ab = b - a;
    let l = ab.norm_squared();
    if l <= 0.0 {
        return *a;
    }
    a + ab * ((p - a).dot(&ab) / l).clamp(0.0, 1.0)
}

/// Closest point to `p` on triangle `abc` (degenerate triangles allowed).
pub fn closest_on_triangle(p: &Vector3<f64>, [a, b, c]: &[Vector3<f64>; 3]) -> Vector3<f64> {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = va + vb + vc;
    if denom.abs() < 1e-300 {
        return [closest_on_segment(p, a, b), closest_on_segment(p, b, c), closest_on_segment(p, a, c)]
            .into_iter()
            .min_by(|x, y| (x - p).norm_squared().total_cmp(&(y - p).norm_squared()))
            .unwrap();
    }
    a + ab * (vb / denom) + ac * (vc / denom)
}

/// Point-to-surface distance over triangles bucketed on a uniform grid.
pub struct SurfaceIndex {
    cell: f64,
    triangles: Vec<[Vector3<f64>; 3]>,
    buckets: HashMap<[i64; 3], Vec<u32>>,
}

impl SurfaceIndex {
    pub fn new(triangles: Vec<[Vector3<f64>; 3]>, cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, t) in triangles.iter().enumerate() {
            let lo = [0, 1, 2].map(|k| (t[0][k].min(t[1][k]).min(t[2][k]) / cell).floor() as i64);
            let hi = [0, 1, 2].map(|k| (t[0][k].max(t[1][k]).max(t[2][k]) / cell).floor() as i64);
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        buckets.entry([x, y, z]).or_default().push(i as u32);
                    }
                }
            }
        }
        Self { cell, triangles, buckets }
    }

    pub fn from_mesh(mesh: &TriMesh, cell: f64) -> Self {
        Self::new((0..mesh.triangles.len()).map(|t| mesh.triangle(t)).collect(), cell)
    }

    fn brute(&self, q: &Vector3<f64>) -> f64 {
        self.triangles.iter().map(|t| (closest_on_triangle(q, t) - q).norm()).fold(f64::INFINITY, f64::min)
    }

    /// Distance to the nearest triangle, `None` when empty.
    pub fn distance(&self, q: &Vector3<f64>) -> Option<f64> {
        if self.triangles.is_empty() {
            return None;
        }
        let c = [0, 1, 2].map(|k| (q[k] / self.cell).floor() as i64);
        let mut best = f64::INFINITY;
        for r in 0i64.. {
            // Triangles first met in shell r are at least (r - 1)·cell away.
            if best <= (r - 1) as f64 * self.cell {
                break;
            }
            if 6 * (2 * r + 1).pow(2) as usize > self.triangles.len() {
                return Some(best.min(self.brute(q)));
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    let edge = dx.abs() == r || dy.abs() == r;
                    let zs: Vec<i64> = if edge { (-r..=r).collect() } else if r == 0 { vec![0] } else { vec![-r, r] };
                    for dz in zs {
                        if let Some(b) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &i in b {
                                best = best.min((closest_on_triangle(q, &self.triangles[i as usize]) - q).norm());
                            }
                        }
                    }
                }
            }
        }
        Some(best)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshMetrics {
    /// Mean distance from mesh samples to the true surface (m).
    pub accuracy: f64,
    /// Mean distance from true-surface samples to the mesh (m).
    pub completion: f64,
    /// Fraction of true-surface samples within 5 cm of the mesh.
    pub completion_ratio: f64,
}

/// Compare `mesh` with the analytic surface: accuracy from `n` mesh samples,
/// completion from `n` surface samples to the nearest triangle.
pub fn mesh_metrics<R: Rng + ?Sized>(mesh: &TriMesh, scene: &AnalyticScene, n: usize, rng: &mut R) -> Result<MeshMetrics> {
    let pred = sample_mesh(mesh, n, rng);
    if pred.is_empty() {
        return Err(Error::Config("mesh has no area to sample".into()));
    }
    let mut acc = 0.0;
    for p in &pred {
        acc += scene.sdf(p)?.abs();
    }
    let gt = scene.sample_surface(n, rng)?;
    let index = SurfaceIndex::from_mesh(mesh, 0.05);
    let (mut comp, mut within) = (0.0, 0usize);
    for q in &gt {
        let d = index.distance(q).unwrap_or(f64::INFINITY);
        comp += d;
        within += usize::from(d < 0.05);
    }
    Ok(MeshMetrics {
        accuracy: acc / pred.len() as f64,
        completion: comp / gt.len().max(1) as f64,
        completion_ratio: within as f64 / gt.len().max(1) as f64,
    })
}

pub fn format_ply(mesh: &TriMesh) -> String {
    let colored = mesh.colors.len() == mesh.vertices.len();
    let mut s = String::new();
    writeln!(s, "ply\nformat ascii 1.0\nelement vertex {}", mesh.vertices.len()).unwrap();
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if colored {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    writeln!(s, "element face {}\nproperty list uchar int vertex_indices\nend_header", mesh.triangles.len()).unwrap();
    for (i, v) in mesh.vertices.iter().enumerate() {
        write!(s, "{:.6} {:.6} {:.6}", v.x, v.y, v.z).unwrap();
        if colored {
            let c = mesh.colors[i].map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8);
            write!(s, " {} {} {}", c[0], c[1], c[2]).unwrap();
        }
        s.push('\n');
    }
    for t in &mesh.triangles {
        writeln!(s, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    s
}

pub fn write_ply(path: &Path, mesh: &TriMesh) -> Result<()> {
    fs::write(path, format_ply(mesh)).map_err(|e| Error::io(path, e))
}
