//! Ownership of the submap collection: allocation, point lookup, ray filtering.

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{CameraIntrinsics, Pose, Ray};
use crate::submap::{Aabb, SubMap, SubMapConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllocationConfig {
    /// Fraction of outside points that triggers a new submap.
    pub threshold: f64,
    /// Expansion of the new box on every face, meters.
    pub expansion: f64,
    pub sample_points: usize,
    pub max_depth: f64,
    /// Never allocate past the first submap (ablation).
    pub single_map: bool,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            expansion: 1.0,
            sample_points: 1000,
            max_depth: 10.0,
            single_map: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SubMapManager {
    submaps: Vec<SubMap>,
    pub alloc: AllocationConfig,
    pub map_cfg: SubMapConfig,
}

impl SubMapManager {
    pub fn new(alloc: AllocationConfig, map_cfg: SubMapConfig) -> Self {
        Self {
            submaps: Vec::new(),
            alloc,
            map_cfg,
        }
    }

    pub fn len(&self) -> usize {
        self.submaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.submaps.is_empty()
    }

    pub fn submaps(&self) -> &[SubMap] {
        &self.submaps
    }

    pub fn submaps_mut(&mut self) -> &mut [SubMap] {
        &mut self.submaps
    }

    pub fn get(&self, k: usize) -> &SubMap {
        &self.submaps[k]
    }

    pub fn get_mut(&mut self, k: usize) -> &mut SubMap {
        &mut self.submaps[k]
    }

    /// Oldest submap whose (closed) box contains `p`.
    ///
    /// Submaps are stored in creation order, so the first hit is the oldest.
    #[inline]
    pub fn locate(&self, p: &Vector3<f64>) -> Option<usize> {
        self.submaps.iter().position(|m| m.bounds.contains(p))
    }

    /// Append a submap with explicit bounds.
    pub fn push<R: Rng + ?Sized>(&mut self, bounds: Aabb, rng: &mut R) -> Result<&SubMap> {
        let index = self.submaps.last().map_or(0, |m| m.creation_index + 1);
        self.submaps.push(SubMap::new(bounds, index, &self.map_cfg, rng)?);
        Ok(self.submaps.last().unwrap())
    }

    /// Allocate a new submap when more than `threshold` of the points fall
    /// outside every existing one. The new box encloses the camera and the
    /// outside points, grown by `expansion` on every face.
    pub fn maybe_allocate<R: Rng + ?Sized>(
        &mut self,
        world_points: &[Vector3<f64>],
        cam_pos: &Vector3<f64>,
        rng: &mut R,
    ) -> Result<Option<&SubMap>> {
        if world_points.is_empty() {
            return Err(Error::EmptyPoints);
        }
        if self.alloc.single_map && !self.submaps.is_empty() {
            return Ok(None);
        }
        let outside: Vec<&Vector3<f64>> = world_points.iter().filter(|p| self.locate(p).is_none()).collect();
        let fraction = outside.len() as f64 / world_points.len() as f64;
        if !self.submaps.is_empty() && fraction <= self.alloc.threshold {
            return Ok(None);
        }
        let (lo, hi) = Aabb::enclosing(outside.into_iter().chain(std::iter::once(cam_pos))).unwrap();
        let l = Vector3::repeat(self.alloc.expansion);
        let bounds = Aabb::new(lo - l, hi + l)?;
        self.push(bounds, rng).map(Some)
    }

    /// Keep the rays whose far-bound point lies in some submap.
    pub fn filter_rays(&self, rays: &[Ray], far_depths: &[f64]) -> Vec<Ray> {
        rays.iter()
            .zip(far_depths)
            .filter(|(r, &far)| self.locate(&r.point_at_depth(far)).is_some())
            .map(|(r, _)| *r)
            .collect()
    }

    /// Union of every submap box.
    pub fn bounds(&self) -> Option<Aabb> {
        let first = self.submaps.first()?.bounds;
        Some(self.submaps.iter().skip(1).fold(first, |acc, m| acc.union(&m.bounds)))
    }

    pub fn total_collisions(&self) -> u64 {
        self.submaps.iter().map(|m| m.tables.collision_count()).sum()
    }
}

/// Draw `n` pixels uniformly, keep valid depths, back-project, and drop
/// points farther than three RMS distances from the centroid.
pub fn sample_allocation_points<R: Rng + ?Sized>(
    depth: &[f64],
    intr: &CameraIntrinsics,
    pose: &Pose,
    n: usize,
    max_depth: f64,
    rng: &mut R,
) -> Result<Vec<Vector3<f64>>> {
    let npix = intr.num_pixels();
    assert_eq!(depth.len(), npix, "depth image size does not match intrinsics");
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..npix);
        let d = depth[i];
        if d > 0.0 && d <= max_depth {
            let (u, v) = ((i % intr.width) as f64, (i / intr.width) as f64);
            pts.push(intr.back_project(pose, u, v, d));
        }
    }
    if pts.len() < 10 {
        return Err(Error::InsufficientDepth(pts.len()));
    }
    Ok(remove_outliers(pts))
}

fn remove_outliers(pts: Vec<Vector3<f64>>) -> Vec<Vector3<f64>> {
    let centroid = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / pts.len() as f64;
    let ms = pts.iter().map(|p| (p - centroid).norm_squared()).sum::<f64>() / pts.len() as f64;
    let cutoff = 3.0 * ms.sqrt();
    pts.into_iter().filter(|p| (p - centroid).norm() <= cutoff).collect()
}
