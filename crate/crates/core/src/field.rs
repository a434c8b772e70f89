//! The full neural field: submaps, shared decoders and the density sharpness.

use nalgebra::Vector3;
use rand::Rng;

use crate::decoder::{sigmoid, Decoders, MlpCache};
use crate::hash_plane::LevelLookup;
use crate::error::{Error, Result};
use crate::manager::{AllocationConfig, SubMapManager};
use crate::params::{Beta, Checkpoint, ParamBlock};
use crate::submap::{join_features, split_features, Aabb, SubMapConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldConfig {
    pub map: SubMapConfig,
    pub alloc: AllocationConfig,
    pub decoder_lr: f64,
    pub beta_init: f64,
    pub beta_lr: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            map: SubMapConfig::default(),
            alloc: AllocationConfig::default(),
            decoder_lr: 1e-3,
            beta_init: 10.0,
            beta_lr: 1e-3,
        }
    }
}

/// What a sample outside every submap decodes to.
pub const FREE_SPACE_SDF: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct SceneField {
    pub manager: SubMapManager,
    pub decoders: Decoders,
    pub beta: Beta,
}

/// Forward state of one field query, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct QueryCache {
    pub submap: Option<usize>,
    pub n: [f64; 3],
    pub sdf: f64,
    pub color: [f64; 3],
    plan: Vec<LevelLookup>,
    joint: Vec<f64>,
    f_s: Vec<f64>,
    f_c: Vec<f64>,
    sdf_cache: MlpCache,
    color_cache: MlpCache,
}

impl SceneField {
    pub fn new<R: Rng + ?Sized>(cfg: &FieldConfig, rng: &mut R) -> Self {
        Self {
            manager: SubMapManager::new(cfg.alloc, cfg.map),
            decoders: Decoders::new(cfg.map.feature_dim(), cfg.decoder_lr, rng),
            beta: Beta::new(cfg.beta_init, cfg.beta_lr),
        }
    }

    pub fn new_cache(&self) -> QueryCache {
        let d = self.decoders.sdf.input;
        QueryCache {
            submap: None,
            n: [0.0; 3],
            sdf: FREE_SPACE_SDF,
            color: [0.0; 3],
            plan: Vec::new(),
            joint: vec![0.0; 2 * d],
            f_s: vec![0.0; d],
            f_c: vec![0.0; d],
            sdf_cache: MlpCache::new(&self.decoders.sdf),
            color_cache: MlpCache::new(&self.decoders.color),
        }
    }

    /// Decode `(s, c)` at `p`; free space with black color outside all submaps.
    pub fn query(&self, p: &Vector3<f64>, cache: &mut QueryCache) -> Result<(f64, [f64; 3])> {
        cache.submap = self.manager.locate(p);
        let Some(k) = cache.submap else {
            cache.sdf = FREE_SPACE_SDF;
            cache.color = [0.0; 3];
            return Ok((cache.sdf, cache.color));
        };
        let map = self.manager.get(k);
        cache.n = map.bounds.normalize(p);
        cache.plan.resize(map.tables.lookup_len(), LevelLookup::default());
        map.tables.lookup(&cache.n, &mut cache.plan);
        map.tables.gather(&cache.plan, &mut cache.joint);
        split_features(&cache.joint, map.feat_dim, &mut cache.f_s, &mut cache.f_c);
        let mut s = [0.0];
        self.decoders.sdf.forward(&cache.f_s, &mut cache.sdf_cache, &mut s);
        if !s[0].is_finite() {
            return Err(Error::NonFiniteDecoder("sdf"));
        }
        let mut logits = [0.0; 3];
        self.decoders.color.forward(&cache.f_c, &mut cache.color_cache, &mut logits);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDecoder("color"));
        }
        cache.sdf = s[0];
        cache.color = logits.map(sigmoid);
        Ok((cache.sdf, cache.color))
    }

    /// TSDF value at `p`, for mesh extraction and probes.
    pub fn sdf_at(&self, p: &Vector3<f64>, cache: &mut QueryCache) -> Result<f64> {
        self.query(p, cache).map(|(s, _)| s)
    }

    /// Backpropagate `∂L/∂s` and `∂L/∂c` of a cached query.
    ///
    /// Parameter gradients are accumulated when `train_scene` is set; the
    /// gradient with respect to the world point is always returned.
    pub fn backward(&mut self, cache: &QueryCache, d_sdf: f64, d_color: [f64; 3], train_scene: bool) -> Vector3<f64> {
        let Some(k) = cache.submap else {
            return Vector3::zeros();
        };
        let dim = cache.f_s.len();
        let mut d_fs = [0.0f64; 256];
        let mut d_fc = [0.0f64; 256];
        let mut d_joint = [0.0f64; 512];
        assert!(dim <= 256, "feature dimension above 256 not supported");
        self.decoders.sdf.backward(&cache.sdf_cache, &[d_sdf], &mut d_fs[..dim], train_scene);
        let d_logit = [0, 1, 2].map(|i| d_color[i] * cache.color[i] * (1.0 - cache.color[i]));
        self.decoders.color.backward(&cache.color_cache, &d_logit, &mut d_fc[..dim], train_scene);
        let map = self.manager.get_mut(k);
        join_features(&d_fs[..dim], &d_fc[..dim], map.feat_dim, &mut d_joint[..2 * dim]);
        let dn = map.tables.scatter(&cache.plan, &d_joint[..2 * dim], train_scene);
        map.world_gradient(&dn)
    }

    /// Every trainable block of the scene: tables, decoders, and β.
    pub fn blocks(&self) -> Vec<&ParamBlock> {
        let mut out: Vec<&ParamBlock> = self.manager.submaps().iter().flat_map(|m| m.blocks()).collect();
        out.push(&self.decoders.sdf.params);
        out.push(&self.decoders.color.params);
        out.push(&self.beta.block);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut out: Vec<&mut ParamBlock> = self.manager.submaps_mut().iter_mut().flat_map(|m| m.blocks_mut()).collect();
        out.push(&mut self.decoders.sdf.params);
        out.push(&mut self.decoders.color.params);
        out.push(&mut self.beta.block);
        out
    }

    pub fn zero_grad(&mut self) {
        for b in self.blocks_mut() {
            b.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Manifest lines describing every submap:
    /// `submap <index> <min xyz> <max xyz> <N_max> <H>`.
    pub fn checkpoint_meta(&self) -> Vec<String> {
        self.manager
            .submaps()
            .iter()
            .map(|m| {
                let (a, b) = (m.bounds.min, m.bounds.max);
                format!(
                    "submap {} {} {} {} {} {} {} {} {}",
                    m.creation_index, a.x, a.y, a.z, b.x, b.y, b.z, m.finest_res, m.table_size
                )
            })
            .collect()
    }

    /// Rebuild a field from a checkpoint written with [`Self::checkpoint_meta`].
    pub fn from_checkpoint(cfg: &FieldConfig, ckpt: &Checkpoint) -> Result<Self> {
        // Values are overwritten below, so the initialization stream is irrelevant.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut field = Self::new(cfg, &mut rng);
        for line in ckpt.meta.iter().filter_map(|m| m.strip_prefix("submap ")) {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad submap line `{line}`")))?;
            if v.len() != 9 {
                return Err(Error::Config(format!("bad submap line `{line}`")));
            }
            let bounds = Aabb::new(Vector3::new(v[1], v[2], v[3]), Vector3::new(v[4], v[5], v[6]))?;
            field.manager.push(bounds, &mut rng)?;
        }
        for block in field.blocks_mut() {
            let values = ckpt
                .block(&block.name)
                .ok_or_else(|| Error::Config(format!("checkpoint has no block `{}`", block.name)))?;
            if values.len() != block.len() {
                return Err(Error::Config(format!(
                    "block `{}` has {} values, expected {}",
                    block.name,
                    values.len(),
                    block.len()
                )));
            }
            block.values.copy_from_slice(values);
        }
        Ok(field)
    }
}
