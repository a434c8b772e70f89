//! Flat `key = value` run configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use triplane_slam::loss::TsdfTarget;
use triplane_slam::pipeline::SlamConfig;
use triplane_slam::submap::EncoderKind;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub slam: SlamConfig,
    pub data: PathBuf,
    pub out: PathBuf,
    /// Only `f64` is built; `f32` is rejected.
    pub precision: String,
    /// Process at most this many frames (0 = all).
    pub max_frames: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            slam: SlamConfig::default(),
            data: PathBuf::new(),
            out: PathBuf::new(),
            precision: "f64".into(),
            max_frames: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.slam;
        let f = &s.field;
        let o = &s.objective;
        vec![
            ("data", self.data.display().to_string()),
            ("out", self.out.display().to_string()),
            ("seed", s.seed.to_string()),
            ("precision", self.precision.clone()),
            ("max_frames", self.max_frames.to_string()),
            ("grid_hash", (f.map.kind == EncoderKind::Grid).to_string()),
            ("single_map", f.alloc.single_map.to_string()),
            ("no_ba", (!s.enable_ba).to_string()),
            ("paper_literal_tsdf", (o.target == TsdfTarget::Literal).to_string()),
            ("levels", f.map.levels.to_string()),
            ("base_res", f.map.base_res.to_string()),
            ("feat_dim", f.map.feat_dim.to_string()),
            ("table_lr", f.map.learning_rate.to_string()),
            ("decoder_lr", f.decoder_lr.to_string()),
            ("beta_init", f.beta_init.to_string()),
            ("beta_lr", f.beta_lr.to_string()),
            ("alloc_threshold", f.alloc.threshold.to_string()),
            ("alloc_expansion", f.alloc.expansion.to_string()),
            ("alloc_sample_points", f.alloc.sample_points.to_string()),
            ("alloc_max_depth", f.alloc.max_depth.to_string()),
            ("alloc_every_frame", s.alloc_every_frame.to_string()),
            ("near", o.sampling.near.to_string()),
            ("far_margin", o.sampling.far_margin.to_string()),
            ("n_strat", o.sampling.n_strat.to_string()),
            ("n_surface", o.sampling.n_surface.to_string()),
            ("truncation", o.sampling.truncation.to_string()),
            ("w_rgb", o.weights.rgb.to_string()),
            ("w_depth", o.weights.depth.to_string()),
            ("w_fs", o.weights.fs.to_string()),
            ("w_mid", o.weights.mid.to_string()),
            ("w_tail", o.weights.tail.to_string()),
            ("adam_beta1", s.adam.beta1.to_string()),
            ("adam_beta2", s.adam.beta2.to_string()),
            ("adam_eps", s.adam.eps.to_string()),
            ("map_every", s.map_every.to_string()),
            ("covisible", s.covisible.to_string()),
            ("ba_keyframes", s.ba_keyframes.to_string()),
            ("ba_min_keyframes", s.ba_min_keyframes.to_string()),
            ("ba_every", s.ba_every.to_string()),
            ("rays_track", s.rays_track.to_string()),
            ("rays_map", s.rays_map.to_string()),
            ("iters_track", s.iters_track.to_string()),
            ("iters_map", s.iters_map.to_string()),
            ("iters_ba", s.iters_ba.to_string()),
            ("iters_init", s.iters_init.to_string()),
            ("pose_lr_track", s.pose_lr_track.to_string()),
            ("pose_lr_map", s.pose_lr_map.to_string()),
            ("min_track_pixels", s.min_track_pixels.to_string()),
            ("covis_points", s.covis_points.to_string()),
            ("covis_threshold", s.covis_threshold.to_string()),
            ("pose_noise_trans", s.pose_noise_trans.to_string()),
            ("pose_noise_rot_deg", s.pose_noise_rot_deg.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.slam;
        let v = value;
        match key {
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "seed" => s.seed = parse(key, v)?,
            "precision" => match v {
                "f64" => self.precision = v.into(),
                "f32" => bail!("precision `f32` is not available in this build; use `f64`"),
                _ => bail!("invalid value `{v}` for `precision`: expected f64"),
            },
            "max_frames" => self.max_frames = parse(key, v)?,
            "grid_hash" => {
                s.field.map.kind = if parse(key, v)? { EncoderKind::Grid } else { EncoderKind::TriPlane };
            }
            "single_map" => s.field.alloc.single_map = parse(key, v)?,
            "no_ba" => s.enable_ba = !parse::<bool>(key, v)?,
            "paper_literal_tsdf" => {
                s.objective.target = if parse(key, v)? { TsdfTarget::Literal } else { TsdfTarget::Normalized };
            }
            "levels" => s.field.map.levels = parse(key, v)?,
            "base_res" => s.field.map.base_res = parse(key, v)?,
            "feat_dim" => s.field.map.feat_dim = parse(key, v)?,
            "table_lr" => s.field.map.learning_rate = parse(key, v)?,
            "decoder_lr" => s.field.decoder_lr = parse(key, v)?,
            "beta_init" => s.field.beta_init = parse(key, v)?,
            "beta_lr" => s.field.beta_lr = parse(key, v)?,
            "alloc_threshold" => s.field.alloc.threshold = parse(key, v)?,
            "alloc_expansion" => s.field.alloc.expansion = parse(key, v)?,
            "alloc_sample_points" => s.field.alloc.sample_points = parse(key, v)?,
            "alloc_max_depth" => s.field.alloc.max_depth = parse(key, v)?,
            "alloc_every_frame" => s.alloc_every_frame = parse(key, v)?,
            "near" => s.objective.sampling.near = parse(key, v)?,
            "far_margin" => s.objective.sampling.far_margin = parse(key, v)?,
            "n_strat" => s.objective.sampling.n_strat = parse(key, v)?,
            "n_surface" => s.objective.sampling.n_surface = parse(key, v)?,
            "truncation" => s.objective.sampling.truncation = parse(key, v)?,
            "w_rgb" => s.objective.weights.rgb = parse(key, v)?,
            "w_depth" => s.objective.weights.depth = parse(key, v)?,
            "w_fs" => s.objective.weights.fs = parse(key, v)?,
            "w_mid" => s.objective.weights.mid = parse(key, v)?,
            "w_tail" => s.objective.weights.tail = parse(key, v)?,
            "adam_beta1" => s.adam.beta1 = parse(key, v)?,
            "adam_beta2" => s.adam.beta2 = parse(key, v)?,
            "adam_eps" => s.adam.eps = parse(key, v)?,
            "map_every" => s.map_every = parse(key, v)?,
            "covisible" => s.covisible = parse(key, v)?,
            "ba_keyframes" => s.ba_keyframes = parse(key, v)?,
            "ba_min_keyframes" => s.ba_min_keyframes = parse(key, v)?,
            "ba_every" => s.ba_every = parse(key, v)?,
            "rays_track" => s.rays_track = parse(key, v)?,
            "rays_map" => s.rays_map = parse(key, v)?,
            "iters_track" => s.iters_track = parse(key, v)?,
            "iters_map" => s.iters_map = parse(key, v)?,
            "iters_ba" => s.iters_ba = parse(key, v)?,
            "iters_init" => s.iters_init = parse(key, v)?,
            "pose_lr_track" => s.pose_lr_track = parse(key, v)?,
            "pose_lr_map" => s.pose_lr_map = parse(key, v)?,
            "min_track_pixels" => s.min_track_pixels = parse(key, v)?,
            "covis_points" => s.covis_points = parse(key, v)?,
            "covis_threshold" => s.covis_threshold = parse(key, v)?,
            "pose_noise_trans" => s.pose_noise_trans = parse(key, v)?,
            "pose_noise_rot_deg" => s.pose_noise_rot_deg = parse(key, v)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", origin.display(), i + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("{}:{}", origin.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
