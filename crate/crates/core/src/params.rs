//! Flat trainable parameter blocks, Adam, a central-difference gradient
//! oracle, and checkpoint serialization.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
        }
    }
}

/// One named array of trainable scalars with its gradient and Adam moments.
#[derive(Clone, Debug)]
pub struct ParamBlock {
    pub name: String,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step_count: u64,
    pub learning_rate: f64,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, values: Vec<f64>, learning_rate: f64) -> Self {
        let n = values.len();
        Self {
            name: name.into(),
            values,
            grads: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step_count: 0,
            learning_rate,
        }
    }

    pub fn zeros(name: impl Into<String>, len: usize, learning_rate: f64) -> Self {
        Self::new(name, vec![0.0; len], learning_rate)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn has_nonzero_grad(&self) -> bool {
        self.grads.iter().any(|g| *g != 0.0)
    }

    /// Forget the optimizer moments, e.g. when a pose is re-initialized.
    pub fn reset_optimizer(&mut self) {
        self.adam_m.iter_mut().for_each(|x| *x = 0.0);
        self.adam_v.iter_mut().for_each(|x| *x = 0.0);
        self.step_count = 0;
    }

    /// Bias-corrected Adam update using the block's learning rate; clears the gradient.
    ///
    /// A non-finite gradient or result is reported after the pass, leaving the
    /// block partially updated; callers treat it as fatal.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let inv_bc2 = 1.0 / (1.0 - cfg.beta2.powi(t));
        let step = self.learning_rate / bc1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let mut bad_grad = false;
        let mut bad_value = false;
        for (((x, g), m), v) in self
            .values
            .iter_mut()
            .zip(self.grads.iter_mut())
            .zip(self.adam_m.iter_mut())
            .zip(self.adam_v.iter_mut())
        {
            let gi = *g;
            bad_grad |= !gi.is_finite();
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            *x -= step * *m / ((*v * inv_bc2).sqrt() + cfg.eps);
            bad_value |= !x.is_finite();
            *g = 0.0;
        }
        if bad_grad {
            return Err(Error::NonFiniteGradient(self.name.clone()));
        }
        if bad_value {
            return Err(Error::NonFiniteParameter(self.name.clone()));
        }
        Ok(())
    }
}

/// Positive sharpness parameter optimized through its logarithm.
#[derive(Clone, Debug)]
pub struct Beta {
    pub block: ParamBlock,
}

impl Beta {
    pub fn new(initial: f64, learning_rate: f64) -> Self {
        assert!(initial > 0.0);
        Self {
            block: ParamBlock::new("log_beta", vec![initial.ln()], learning_rate),
        }
    }

    pub fn value(&self) -> f64 {
        self.block.values[0].exp()
    }

    /// Accumulate `∂L/∂β`, converting to the log parameterization.
    pub fn accumulate(&mut self, d_beta: f64) {
        self.block.grads[0] += d_beta * self.value();
    }
}

/// Compare the analytic gradient stored in `block.grads` against central
/// differences of `loss` on `n_probe` random coordinates.
///
/// Returns the largest `|a − fd| / max(1e-8, |a| + |fd|)`.
pub fn finite_diff_check<F, R>(loss: F, block: &ParamBlock, eps: f64, n_probe: usize, rng: &mut R) -> f64
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let n = block.len();
    let coords: Vec<usize> = if n_probe >= n {
        (0..n).collect()
    } else {
        index::sample(rng, n, n_probe).into_vec()
    };
    finite_diff_check_at(loss, block, eps, &coords)
}

/// [`finite_diff_check`] on the given coordinates.
pub fn finite_diff_check_at<F>(mut loss: F, block: &ParamBlock, eps: f64, coords: &[usize]) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = block.values.clone();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let lp = loss(&x);
        x[i] = orig - eps;
        let lm = loss(&x);
        x[i] = orig;
        let fd = (lp - lm) / (2.0 * eps);
        let a = block.grads[i];
        let err = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

/// Checkpoint contents read back from disk.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    /// Free-form `meta` lines from the manifest, without the `meta ` prefix.
    pub meta: Vec<String>,
    /// `(name, learning rate, values)` in file order.
    pub blocks: Vec<(String, f64, Vec<f64>)>,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.blocks.iter().find(|b| b.0 == name).map(|b| b.2.as_slice())
    }
}

const MANIFEST: &str = "checkpoint.manifest";
const BINARY: &str = "checkpoint.bin";

/// Write `checkpoint.manifest` (text) and `checkpoint.bin` (little-endian f64) into `dir`.
pub fn write_checkpoint(dir: &Path, meta: &[String], blocks: &[&ParamBlock]) -> Result<()> {
    let mut manifest = String::from("# triplane-slam checkpoint v1\n");
    for m in meta {
        writeln!(manifest, "meta {m}").unwrap();
    }
    let total: usize = blocks.iter().map(|b| b.len()).sum();
    let mut bytes = Vec::with_capacity(total * 8);
    for b in blocks {
        writeln!(manifest, "block {} {} {:e}", b.name, b.len(), b.learning_rate).unwrap();
        for v in &b.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BINARY);
    fs::write(&bpath, bytes).map_err(|e| Error::io(&bpath, e))
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BINARY);
    let bytes = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let mut ckpt = Checkpoint::default();
    let mut offset = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            ckpt.meta.push(rest.to_string());
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::parse(&mpath, i + 1, "expected `block <name> <len> <lr>`");
        if fields.len() != 4 || fields[0] != "block" {
            return Err(bad());
        }
        let len: usize = fields[2].parse().map_err(|_| bad())?;
        let lr: f64 = fields[3].parse().map_err(|_| bad())?;
        let end = offset + len * 8;
        if end > bytes.len() {
            return Err(Error::parse(&bpath, 0, "binary shorter than manifest"));
        }
        let values = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset = end;
        ckpt.blocks.push((fields[1].to_string(), lr, values));
    }
    if offset != bytes.len() {
        return Err(Error::parse(&bpath, 0, "binary longer than manifest"));
    }
    Ok(ckpt)
}
