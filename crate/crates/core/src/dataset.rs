//! On-disk RGB-D sequences: Netpbm images, a TUM ground-truth trajectory and
//! an intrinsics line.
//!
//! ```text
//! <dir>/color/00000.ppm     P6, 8-bit RGB
//! <dir>/depth/00000.pgm     P5, 16-bit big-endian, depth · depth_scale
//! <dir>/groundtruth.txt     timestamp tx ty tz qx qy qz qw
//! <dir>/intrinsics.txt      fx fy cx cy width height depth_scale
//! <dir>/scene.txt           analytic scene name (optional)
//! ```

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{GraymapHeader, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::CameraIntrinsics;
use crate::synthetic::{render_gt_frame, AnalyticScene, Frame, TrajectorySpec};
use crate::trajectory::{read_trajectory, write_trajectory, TimedPose};

pub const FRAME_RATE: f64 = 30.0;

fn image_error(path: &Path, e: image::ImageError) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn color_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("color").join(format!("{i:05}.ppm"))
}

pub fn depth_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("depth").join(format!("{i:05}.pgm"))
}

pub fn write_color(path: &Path, color: &[[f64; 3]], width: usize, height: usize) -> Result<()> {
    let bytes: Vec<u8> = color.iter().flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)).collect();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&bytes, width as u32, height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| image_error(path, e))
}

pub fn write_depth(path: &Path, depth: &[f64], width: usize, height: usize, depth_scale: f64) -> Result<()> {
    let raw: Vec<u16> = depth.iter().map(|d| (d * depth_scale).round().clamp(0.0, u16::MAX as f64) as u16).collect();
    // The encoder takes native-endian samples and writes big-endian.
    let bytes: Vec<u8> = raw.iter().flat_map(|v| v.to_ne_bytes()).collect();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_header(
            GraymapHeader {
                encoding: SampleEncoding::Binary,
                width: width as u32,
                height: height as u32,
                maxwhite: u16::MAX as u32,
            }
            .into(),
        )
        .write_image(&bytes, width as u32, height as u32, ExtendedColorType::L16)
        .map_err(|e| image_error(path, e))
}

fn open_pnm(path: &Path) -> Result<image::DynamicImage> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = ImageReader::new(BufReader::new(file));
    reader.set_format(ImageFormat::Pnm);
    reader.decode().map_err(|e| image_error(path, e))
}

pub fn read_color(path: &Path) -> Result<(Vec<[f64; 3]>, usize, usize)> {
    let img = open_pnm(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let px = img.pixels().map(|p| p.0.map(|v| v as f64 / 255.0)).collect();
    Ok((px, w as usize, h as usize))
}

pub fn read_depth(path: &Path, depth_scale: f64) -> Result<(Vec<f64>, usize, usize)> {
    let img = open_pnm(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let px = img.pixels().map(|p| p.0[0] as f64 / depth_scale).collect();
    Ok((px, w as usize, h as usize))
}

pub fn write_intrinsics(path: &Path, intr: &CameraIntrinsics) -> Result<()> {
    let text = format!(
        "# fx fy cx cy width height depth_scale\n{} {} {} {} {} {} {}\n",
        intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, intr.depth_scale
    );
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (n, line) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .ok_or_else(|| Error::parse(path, 1, "no intrinsics line"))?;
    let v: Vec<f64> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e: std::num::ParseFloatError| Error::parse(path, n + 1, e.to_string()))?;
    if v.len() != 7 {
        return Err(Error::parse(path, n + 1, format!("expected 7 fields, found {}", v.len())));
    }
    CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4] as usize, v[5] as usize, v[6])
}

/// A sequence loaded in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub intr: CameraIntrinsics,
    pub frames: Vec<Frame>,
    pub groundtruth: Vec<TimedPose>,
    pub scene: Option<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let intr = read_intrinsics(&dir.join("intrinsics.txt"))?;
        let groundtruth = read_trajectory(&dir.join("groundtruth.txt"))?;
        let mut frames = Vec::with_capacity(groundtruth.len());
        for i in 0..groundtruth.len() {
            let (color, w, h) = read_color(&color_path(dir, i))?;
            let (depth, dw, dh) = read_depth(&depth_path(dir, i), intr.depth_scale)?;
            if (w, h) != (intr.width, intr.height) || (dw, dh) != (w, h) {
                return Err(Error::InvalidIntrinsics(format!("frame {i} is {w}x{h}, intrinsics say {}x{}", intr.width, intr.height)));
            }
            frames.push(Frame { color, depth });
        }
        let scene = fs::read_to_string(dir.join("scene.txt")).ok().map(|s| s.trim().to_string());
        Ok(Self {
            intr,
            frames,
            groundtruth,
            scene,
        })
    }
}

/// Look up an analytic scene by name.
pub fn scene_by_name(name: &str) -> Option<AnalyticScene> {
    match name {
        "box-room" => Some(AnalyticScene::box_room()),
        _ => None,
    }
}

/// Render a trajectory through `scene` and write the sequence to `out_dir`.
pub fn generate_dataset<R: Rng + ?Sized>(
    scene: &AnalyticScene,
    scene_name: &str,
    traj: &TrajectorySpec,
    intr: &CameraIntrinsics,
    depth_noise: f64,
    out_dir: &Path,
    rng: &mut R,
) -> Result<()> {
    for sub in ["color", "depth"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let poses = traj.poses();
    let mut gt = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let frame = render_gt_frame(scene, intr, pose, depth_noise, rng)?;
        write_color(&color_path(out_dir, i), &frame.color, intr.width, intr.height)?;
        write_depth(&depth_path(out_dir, i), &frame.depth, intr.width, intr.height, intr.depth_scale)?;
        gt.push(TimedPose {
            timestamp: i as f64 / FRAME_RATE,
            pose: *pose,
        });
    }
    write_trajectory(&out_dir.join("groundtruth.txt"), &gt)?;
    write_intrinsics(&out_dir.join("intrinsics.txt"), intr)?;
    let p = out_dir.join("scene.txt");
    fs::write(&p, format!("{scene_name}\n")).map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pgm");
        let depth: Vec<f64> = (0..12).map(|i| 0.37 * i as f64 + 0.0123).collect();
        write_depth(&p, &depth, 4, 3, 5000.0).unwrap();
        let (back, w, h) = read_depth(&p, 5000.0).unwrap();
        assert_eq!((w, h), (4, 3));
        for (a, b) in depth.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / 5000.0);
        }
        // Big-endian samples after the header.
        let bytes = fs::read(&p).unwrap();
        let tail = &bytes[bytes.len() - 2..];
        let expect = ((depth[11] * 5000.0).round() as u16).to_be_bytes();
        assert_eq!(tail, expect);
    }

    #[test]
    fn color_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        let color = vec![[0.0, 0.5, 1.0], [0.25, 0.75, 0.1]];
        write_color(&p, &color, 2, 1).unwrap();
        let (back, _, _) = read_color(&p).unwrap();
        for (a, b) in color.iter().zip(&back) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        assert!(fs::read(&p).unwrap().starts_with(b"P6"));
    }

    #[test]
    fn generate_counts_and_determinism() {
        let scene = AnalyticScene::box_room();
        let intr = CameraIntrinsics::new(20.0, 20.0, 7.5, 5.5, 16, 12, 5000.0).unwrap();
        let traj = TrajectorySpec::box_room_orbit(10);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_dataset(&scene, "box-room", &traj, &intr, 0.0, a.path(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        generate_dataset(&scene, "box-room", &traj, &intr, 0.0, b.path(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(fs::read_dir(a.path().join("color")).unwrap().count(), 10);
        assert_eq!(fs::read_dir(a.path().join("depth")).unwrap().count(), 10);
        let gt = fs::read_to_string(a.path().join("groundtruth.txt")).unwrap();
        assert_eq!(gt.lines().count(), 10);
        for i in 0..10 {
            assert_eq!(fs::read(color_path(a.path(), i)).unwrap(), fs::read(color_path(b.path(), i)).unwrap());
            assert_eq!(fs::read(depth_path(a.path(), i)).unwrap(), fs::read(depth_path(b.path(), i)).unwrap());
        }
        let ds = Dataset::load(a.path()).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.intr, intr);
        assert_eq!(ds.scene.as_deref(), Some("box-room"));
    }

    #[test]
    fn missing_dataset_reports_path() {
        let err = Dataset::load(Path::new("/nonexistent/seq")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/seq"));
    }
}
