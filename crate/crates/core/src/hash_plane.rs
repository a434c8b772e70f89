//! Multi-resolution hash-encoded feature grids.
//!
//! [`HashPlane2D`] is the tri-plane building block: `L` levels of 2D vertex
//! features, geometric resolution growth from `N_min` to `N_max`, dense storage
//! on coarse levels that fit the table, spatial hashing on the rest. The same
//! code with `D = 3` gives the voxel-grid variant used for ablations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamBlock;

/// Spatial hash primes, one per axis. Hashing is done in 64-bit arithmetic.
pub const HASH_PRIMES: [u64; 3] = [1, 2654435761, 805459861];

/// Most levels an encoder may have.
pub const MAX_LEVELS: usize = 32;

/// The cell of one level that a query point falls in.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LevelLookup {
    /// Table entry of each cell corner (first `2^D` used).
    pub slots: [u32; 8],
    pub base: [u32; 3],
    pub frac: [f64; 3],
    /// Bit `d` set when coordinate `d` was clamped into the unit range.
    pub clamped: u8,
}

/// Multiplier for [`fast_mod`] with divisor `d`.
fn mod_multiplier(d: u64) -> u128 {
    (u128::MAX / d as u128).wrapping_add(1)
}

/// `a mod d` for 64-bit operands via a precomputed multiplier (Lemire).
#[inline(always)]
fn fast_mod(a: u64, m: u128, d: u64) -> u64 {
    let low = m.wrapping_mul(a as u128);
    let bottom = ((low as u64 as u128) * d as u128) >> 64;
    let top = (low >> 64) * d as u128;
    ((bottom + top) >> 64) as u64
}

/// Uniform init range for table entries.
pub const INIT_SCALE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageMode {
    Dense,
    Hashed,
}

/// Shape shared by every encoder of a submap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderSpec {
    pub levels: usize,
    pub base_res: u32,
    pub finest_res: u32,
    pub feat_dim: usize,
    pub table_size: usize,
}

impl EncoderSpec {
    pub fn output_dim(&self) -> usize {
        self.levels * self.feat_dim
    }
}

/// Per-level resolutions `floor(N_min · b^ℓ)` with `b = (N_max/N_min)^(1/(L−1))`.
pub fn level_resolutions(base_res: u32, finest_res: u32, levels: usize) -> Result<Vec<u32>> {
    if finest_res < base_res {
        return Err(Error::InvalidResolution {
            base: base_res,
            finest: finest_res,
        });
    }
    if base_res < 1 || levels < 2 {
        return Err(Error::InvalidEncoder(format!(
            "need base resolution ≥ 1 and at least 2 levels (got {base_res}, {levels})"
        )));
    }
    let b = growth_factor(base_res, finest_res, levels);
    Ok((0..levels)
        .map(|l| {
            if l == levels - 1 {
                return finest_res;
            }
            // The epsilon keeps exact powers (b = 2, ℓ = 1 → 4) from flooring down.
            let r = (base_res as f64 * b.powi(l as i32) * (1.0 + 1e-12)).floor() as u32;
            r.clamp(base_res, finest_res)
        })
        .collect())
}

pub fn growth_factor(base_res: u32, finest_res: u32, levels: usize) -> f64 {
    (finest_res as f64 / base_res as f64).powf(1.0 / (levels as f64 - 1.0))
}

#[derive(Clone, Copy, Debug)]
struct Level {
    res: u32,
    mode: StorageMode,
    /// Offset into the parameter block, in scalars.
    offset: usize,
    entries: usize,
    mod_mul: u128,
}

/// `D`-dimensional multi-resolution hash encoder over the unit cube.
#[derive(Clone, Debug)]
pub struct HashEncoder<const D: usize> {
    spec: EncoderSpec,
    levels: Vec<Level>,
    pub params: ParamBlock,
    /// Bit per vertex of the finest level, set when a training gradient touches it.
    occupancy: Vec<u64>,
}

pub type HashPlane2D = HashEncoder<2>;
pub type HashGrid3D = HashEncoder<3>;

impl<const D: usize> HashEncoder<D> {
    const CORNERS: usize = 1 << D;

    pub fn new<R: Rng + ?Sized>(name: impl Into<String>, spec: EncoderSpec, learning_rate: f64, rng: &mut R) -> Result<Self> {
        let mut enc = Self::zeroed(name, spec, learning_rate)?;
        for v in &mut enc.params.values {
            *v = rng.random_range(-INIT_SCALE..=INIT_SCALE);
        }
        Ok(enc)
    }

    /// Encoder with all table entries zero.
    pub fn zeroed(name: impl Into<String>, spec: EncoderSpec, learning_rate: f64) -> Result<Self> {
        if spec.feat_dim == 0 || spec.table_size == 0 {
            return Err(Error::InvalidEncoder("feature dimension and table size must be positive".into()));
        }
        if spec.levels > MAX_LEVELS || spec.table_size > u32::MAX as usize {
            return Err(Error::InvalidEncoder(format!(
                "at most {MAX_LEVELS} levels and 2^32 table entries supported"
            )));
        }
        let resolutions = level_resolutions(spec.base_res, spec.finest_res, spec.levels)?;
        let mut levels = Vec::with_capacity(spec.levels);
        let mut offset = 0;
        for res in resolutions {
            let dense_entries = (res as u128 + 1).pow(D as u32);
            let (mode, entries) = if dense_entries <= spec.table_size as u128 {
                (StorageMode::Dense, dense_entries as usize)
            } else {
                (StorageMode::Hashed, spec.table_size)
            };
            levels.push(Level {
                res,
                mode,
                offset,
                entries,
                mod_mul: mod_multiplier(entries as u64),
            });
            offset += entries * spec.feat_dim;
        }
        let finest = levels.last().unwrap();
        let occupancy = if finest.mode == StorageMode::Hashed {
            let verts = (finest.res as usize + 1).pow(D as u32);
            vec![0u64; verts.div_ceil(64)]
        } else {
            Vec::new()
        };
        Ok(Self {
            spec,
            levels,
            params: ParamBlock::zeros(name, offset, learning_rate),
            occupancy,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn resolutions(&self) -> Vec<u32> {
        self.levels.iter().map(|l| l.res).collect()
    }

    pub fn mode(&self, level: usize) -> StorageMode {
        self.levels[level].mode
    }

    /// Table slot of vertex `idx` on `level`, validating the vertex range.
    pub fn hash_index(&self, level: usize, idx: [u32; D]) -> Result<usize> {
        let lv = &self.levels[level];
        if idx.iter().any(|&i| i > lv.res) {
            let v = (idx[0], if D > 1 { idx[1] } else { 0 });
            return Err(Error::VertexOutOfRange {
                vertex: v,
                resolution: lv.res,
            });
        }
        Ok(Self::slot(lv, &idx))
    }

    #[inline(always)]
    fn slot(lv: &Level, idx: &[u32; D]) -> usize {
        match lv.mode {
            StorageMode::Dense => {
                let stride = lv.res as usize + 1;
                let mut s = 0usize;
                for d in (0..D).rev() {
                    s = s * stride + idx[d] as usize;
                }
                s
            }
            StorageMode::Hashed => {
                let mut h = 0u64;
                for d in 0..D {
                    h ^= idx[d] as u64 * HASH_PRIMES[d];
                }
                fast_mod(h, lv.mod_mul, lv.entries as u64) as usize
            }
        }
    }

    #[inline(always)]
    fn corner(base: &[u32; 3], c: usize) -> [u32; D] {
        let mut idx = [0u32; D];
        for (d, v) in idx.iter_mut().enumerate() {
            *v = base[d] + ((c >> d) & 1) as u32;
        }
        idx
    }

    #[inline(always)]
    fn corner_weight(frac: &[f64; 3], c: usize) -> f64 {
        let mut w = 1.0;
        for d in 0..D {
            w *= if (c >> d) & 1 == 1 { frac[d] } else { 1.0 - frac[d] };
        }
        w
    }

    /// Locate `x` on every level; `out` needs at least `levels` entries.
    pub fn lookup(&self, x: &[f64; D], out: &mut [LevelLookup]) {
        let mut clamped = 0u8;
        for d in 0..D {
            if !(0.0..=1.0).contains(&x[d]) {
                clamped |= 1 << d;
            }
        }
        for (lv, lk) in self.levels.iter().zip(out.iter_mut()) {
            let n = lv.res as f64;
            for d in 0..D {
                let s = x[d].clamp(0.0, 1.0) * n;
                let i = (s.floor() as u32).min(lv.res - 1);
                lk.base[d] = i;
                lk.frac[d] = s - i as f64;
            }
            for c in 0..Self::CORNERS {
                lk.slots[c] = Self::slot(lv, &Self::corner(&lk.base, c)) as u32;
            }
            lk.clamped = clamped;
        }
    }

    /// Add the features interpolated at precomputed cells into `out`.
    ///
    /// Any encoder with the same spec can consume another's lookups.
    pub fn gather_add(&self, plan: &[LevelLookup], out: &mut [f64]) {
        let f = self.spec.feat_dim;
        let table = &self.params.values;
        for (l, (lv, lk)) in self.levels.iter().zip(plan).enumerate() {
            let dst = &mut out[l * f..(l + 1) * f];
            for c in 0..Self::CORNERS {
                let w = Self::corner_weight(&lk.frac, c);
                let at = lv.offset + lk.slots[c] as usize * f;
                for (o, t) in dst.iter_mut().zip(&table[at..at + f]) {
                    *o += w * t;
                }
            }
        }
    }

    /// Write the interpolated feature vector (levels concatenated coarse to fine).
    pub fn encode(&self, x: &[f64; D], out: &mut [f64]) {
        out[..self.output_dim()].iter_mut().for_each(|v| *v = 0.0);
        self.encode_add(x, out);
    }

    /// Add the interpolated feature vector into `out`.
    pub fn encode_add(&self, x: &[f64; D], out: &mut [f64]) {
        let mut plan = [LevelLookup::default(); MAX_LEVELS];
        self.lookup(x, &mut plan);
        self.gather_add(&plan[..self.levels.len()], out);
    }

    /// Backpropagate `d_out` through the interpolation at `x`.
    ///
    /// When `accumulate` is set the table gradient is updated (same bilinear
    /// weights as the forward pass) and the finest-level occupancy is recorded.
    /// Always returns the gradient with respect to the query coordinates.
    pub fn backward(&mut self, x: &[f64; D], d_out: &[f64], accumulate: bool) -> [f64; D] {
        let mut plan = [LevelLookup::default(); MAX_LEVELS];
        self.lookup(x, &mut plan);
        let n = self.levels.len();
        self.scatter(&plan[..n], d_out, accumulate)
    }

    /// [`Self::backward`] over precomputed cells.
    pub fn scatter(&mut self, plan: &[LevelLookup], d_out: &[f64], accumulate: bool) -> [f64; D] {
        let f = self.spec.feat_dim;
        let nlev = self.levels.len();
        let mut dx = [0.0; D];
        for (l, lk) in plan.iter().enumerate().take(nlev) {
            let lv = self.levels[l];
            let g = &d_out[l * f..(l + 1) * f];
            let n = lv.res as f64;
            let mut dots = [0.0f64; 8];
            for (c, t) in dots.iter_mut().enumerate().take(Self::CORNERS) {
                let at = lv.offset + lk.slots[c] as usize * f;
                *t = g.iter().zip(&self.params.values[at..at + f]).map(|(a, b)| a * b).sum();
            }
            if D == 2 {
                // Corners (0,0), (1,0), (0,1), (1,1).
                let (fx, fy) = (lk.frac[0], lk.frac[1]);
                dx[0] += n * ((1.0 - fy) * (dots[1] - dots[0]) + fy * (dots[3] - dots[2]));
                dx[1] += n * ((1.0 - fx) * (dots[2] - dots[0]) + fx * (dots[3] - dots[1]));
            } else {
                for (c, t) in dots.iter().enumerate().take(Self::CORNERS) {
                    for d in 0..D {
                        let mut w = n;
                        for e in 0..D {
                            let bit = (c >> e) & 1 == 1;
                            w *= match (e == d, bit) {
                                (true, true) => 1.0,
                                (true, false) => -1.0,
                                (false, true) => lk.frac[e],
                                (false, false) => 1.0 - lk.frac[e],
                            };
                        }
                        dx[d] += w * t;
                    }
                }
            }
            if accumulate {
                for c in 0..Self::CORNERS {
                    let at = lv.offset + lk.slots[c] as usize * f;
                    let w = Self::corner_weight(&lk.frac, c);
                    for (gr, gk) in self.params.grads[at..at + f].iter_mut().zip(g) {
                        *gr += w * gk;
                    }
                    if l == nlev - 1 && !self.occupancy.is_empty() {
                        let v = Self::dense_vertex(lv.res, &Self::corner(&lk.base, c));
                        self.occupancy[v / 64] |= 1 << (v % 64);
                    }
                }
            }
        }
        if let Some(lk) = plan.first() {
            for (d, v) in dx.iter_mut().enumerate() {
                if lk.clamped & (1 << d) != 0 {
                    *v = 0.0;
                }
            }
        }
        dx
    }

    fn dense_vertex(res: u32, idx: &[u32; D]) -> usize {
        let stride = res as usize + 1;
        let mut s = 0usize;
        for d in (0..D).rev() {
            s = s * stride + idx[d] as usize;
        }
        s
    }

    /// Mark the finest-level vertices around `x` as occupied without touching gradients.
    pub fn mark_occupied(&mut self, x: &[f64; D]) {
        if self.occupancy.is_empty() {
            return;
        }
        let last = self.levels.len() - 1;
        let mut plan = [LevelLookup::default(); MAX_LEVELS];
        self.lookup(x, &mut plan);
        let lv = self.levels[last];
        for c in 0..Self::CORNERS {
            let v = Self::dense_vertex(lv.res, &Self::corner(&plan[last].base, c));
            self.occupancy[v / 64] |= 1 << (v % 64);
        }
    }

    pub fn occupied_vertices(&self) -> usize {
        self.occupancy.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Pairs of occupied finest-level vertices that share a table slot.
    ///
    /// Zero when the finest level is stored densely.
    pub fn collision_count(&self) -> u64 {
        if self.occupancy.is_empty() {
            return 0;
        }
        let lv = self.levels.last().unwrap();
        let stride = lv.res as usize + 1;
        let mut counts = vec![0u32; lv.entries];
        for (w, bits) in self.occupancy.iter().enumerate() {
            let mut bits = *bits;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let mut v = w * 64 + b;
                let mut idx = [0u32; D];
                for slot in idx.iter_mut() {
                    *slot = (v % stride) as u32;
                    v /= stride;
                }
                counts[Self::slot(lv, &idx)] += 1;
            }
        }
        counts.iter().map(|&k| k as u64 * (k as u64).saturating_sub(1) / 2).sum()
    }

    pub fn clear_occupancy(&mut self) {
        self.occupancy.iter_mut().for_each(|w| *w = 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::finite_diff_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(base: u32, finest: u32, levels: usize, table: usize) -> EncoderSpec {
        EncoderSpec {
            levels,
            base_res: base,
            finest_res: finest,
            feat_dim: 2,
            table_size: table,
        }
    }

    #[test]
    fn resolution_examples() {
        assert_eq!(level_resolutions(16, 16, 4).unwrap(), vec![16; 4]);
        assert_eq!(level_resolutions(2, 8, 3).unwrap(), vec![2, 4, 8]);
        let r = level_resolutions(16, 100, 16).unwrap();
        assert_eq!((r[0], r[15]), (16, 100));
        assert!(r.windows(2).all(|w| w[0] <= w[1]));
        assert!((growth_factor(16, 100, 16) - 1.1299).abs() < 1e-4);
        assert!(level_resolutions(16, 8, 4).is_err());
    }

    #[test]
    fn hash_index_examples() {
        let dense = HashPlane2D::zeroed("p", spec(16, 16, 2, 1 << 20), 0.0).unwrap();
        assert_eq!(dense.mode(0), StorageMode::Dense);
        assert_eq!(dense.hash_index(0, [3, 2]).unwrap(), 37);
        assert_eq!(dense.hash_index(0, [0, 0]).unwrap(), 0);
        assert!(dense.hash_index(0, [17, 0]).is_err());

        let hashed = HashPlane2D::zeroed("p", spec(16, 16, 2, 8), 0.0).unwrap();
        assert_eq!(hashed.mode(0), StorageMode::Hashed);
        assert_eq!(hashed.hash_index(0, [1, 0]).unwrap(), 1);
        assert_eq!(hashed.hash_index(0, [0, 1]).unwrap(), (2654435761u64 % 8) as usize);
        // No 32-bit wraparound: 5 · 2654435761 exceeds 2^32.
        let h = 4 ^ (5 * 2654435761u64);
        assert!(h > u32::MAX as u64);
        assert_eq!(hashed.hash_index(0, [4, 5]).unwrap(), (h % 8) as usize);
    }

    #[test]
    fn dense_iff_vertices_fit_table() {
        // (16+1)² = 289 fits in 289, (32+1)² does not.
        let p = HashPlane2D::zeroed("p", spec(16, 32, 2, 289), 0.0).unwrap();
        assert_eq!(p.mode(0), StorageMode::Dense);
        assert_eq!(p.mode(1), StorageMode::Hashed);
        assert_eq!(p.params.len(), (289 + 289) * 2);
    }

    #[test]
    fn query_at_vertex_returns_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = HashPlane2D::new("p", spec(4, 8, 2, 1 << 12), 0.0, &mut rng).unwrap();
        let mut out = vec![0.0; 4];
        // u = 0.5 is vertex 2 at res 4 and vertex 4 at res 8.
        p.encode(&[0.5, 0.25], &mut out);
        for (l, (ix, iy)) in [(2u32, 1u32), (4, 2)].into_iter().enumerate() {
            let at = p.levels[l].offset + p.hash_index(l, [ix, iy]).unwrap() * 2;
            assert_eq!(&out[l * 2..l * 2 + 2], &p.params.values[at..at + 2]);
        }
    }

    #[test]
    fn query_at_cell_center_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = HashPlane2D::new("p", spec(4, 4, 2, 1 << 12), 0.0, &mut rng).unwrap();
        let mut out = vec![0.0; 4];
        p.encode(&[0.375, 0.625], &mut out);
        let lv = p.levels[0];
        for k in 0..2 {
            let mean: f64 = [(1, 2), (2, 2), (1, 3), (2, 3)]
                .iter()
                .map(|&(x, y)| p.params.values[lv.offset + p.hash_index(0, [x, y]).unwrap() * 2 + k])
                .sum::<f64>()
                / 4.0;
            assert!((out[k] - mean).abs() < 1e-18);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for table in [1 << 16, 97] {
            let mut p = HashPlane2D::new("p", spec(3, 11, 3, table), 1.0, &mut rng).unwrap();
            for v in &mut p.params.values {
                *v = rng.random_range(-1.0..1.0);
            }
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let w: Vec<f64> = (0..p.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dx = p.backward(&x, &w, true);
            let probe = p.clone();
            let loss = |vals: &[f64]| {
                let mut q = probe.clone();
                q.params.values.copy_from_slice(vals);
                let mut out = vec![0.0; q.output_dim()];
                q.encode(&x, &mut out);
                out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            let err = finite_diff_check(loss, &p.params, 1e-5, 200, &mut rng);
            assert!(err <= 1e-6, "table grads rel err {err}");

            for d in 0..2 {
                let h = 1e-7;
                let (mut xp, mut xm) = (x, x);
                xp[d] += h;
                xm[d] -= h;
                let f = |x: &[f64; 2]| {
                    let mut out = vec![0.0; p.output_dim()];
                    p.encode(x, &mut out);
                    out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
                };
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                assert!((fd - dx[d]).abs() <= 1e-6 * (fd.abs() + dx[d].abs()).max(1e-8), "coord {d}: {fd} vs {}", dx[d]);
            }
        }
    }

    #[test]
    fn grid3d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut g = HashGrid3D::new("g", spec(2, 9, 3, 300), 1.0, &mut rng).unwrap();
        for v in &mut g.params.values {
            *v = rng.random_range(-1.0..1.0);
        }
        let x = [0.31, 0.77, 0.52];
        let w: Vec<f64> = (0..g.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        g.backward(&x, &w, true);
        let probe = g.clone();
        let loss = |vals: &[f64]| {
            let mut q = probe.clone();
            q.params.values.copy_from_slice(vals);
            let mut out = vec![0.0; q.output_dim()];
            q.encode(&x, &mut out);
            out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        assert!(finite_diff_check(loss, &g.params, 1e-5, 100, &mut rng) <= 1e-6);
    }

    #[test]
    fn collision_free_when_every_level_is_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = HashPlane2D::new("p", spec(4, 20, 4, 21 * 21), 0.0, &mut rng).unwrap();
        assert!((0..4).all(|l| p.mode(l) == StorageMode::Dense));
        for _ in 0..100 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            p.backward(&x, &[1.0; 8], true);
        }
        assert_eq!(p.collision_count(), 0);
    }

    #[test]
    fn collisions_counted_on_hashed_finest_level() {
        let mut p = HashPlane2D::zeroed("p", spec(4, 40, 2, 64), 0.0).unwrap();
        assert_eq!(p.mode(1), StorageMode::Hashed);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            p.mark_occupied(&[rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
        }
        let occupied = p.occupied_vertices() as u64;
        assert!(occupied > 64);
        // Pigeonhole: more occupied vertices than slots forces collisions.
        assert!(p.collision_count() >= occupied - 64);
    }

    proptest! {
        #[test]
        fn fast_mod_matches_remainder(a in any::<u64>(), d in 1u64..=u64::MAX) {
            prop_assert_eq!(fast_mod(a, mod_multiplier(d), d), a % d);
        }

        #[test]
        fn output_length_is_levels_times_features(u in -0.5f64..1.5, v in -0.5f64..1.5) {
            let p = HashPlane2D::zeroed("p", spec(16, 50, 5, 2500), 0.0).unwrap();
            let mut out = vec![f64::NAN; p.output_dim() + 3];
            p.encode(&[u, v], &mut out);
            prop_assert_eq!(p.output_dim(), 10);
            prop_assert!(out[..10].iter().all(|x| x.is_finite()));
            prop_assert!(out[10..].iter().all(|x| x.is_nan()));
        }

        #[test]
        fn continuous_across_cell_edges(seed in 0u64..1000, j in 1u32..16, v in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = HashPlane2D::new("p", spec(16, 16, 2, 1 << 10), 0.0, &mut rng).unwrap();
            let edge = j as f64 / 16.0;
            let mut a = vec![0.0; 4];
            let mut b = vec![0.0; 4];
            p.encode(&[edge - 1e-13, v], &mut a);
            p.encode(&[edge, v], &mut b);
            for k in 0..4 {
                prop_assert!((a[k] - b[k]).abs() < 1e-15);
            }
        }
    }
}
