//! TUM-format trajectory files: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::math::Pose;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

pub fn parse_trajectory(text: &str, origin: &Path) -> Result<Vec<TimedPose>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        if vals.len() != 8 {
            return Err(Error::parse(origin, i + 1, format!("expected 8 fields, found {}", vals.len())));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        if q.norm() < 1e-12 {
            return Err(Error::parse(origin, i + 1, "degenerate rotation"));
        }
        out.push(TimedPose {
            timestamp: vals[0],
            pose: Pose::new(UnitQuaternion::new_normalize(q), Vector3::new(vals[1], vals[2], vals[3])),
        });
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TimedPose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

pub fn format_trajectory(poses: &[TimedPose]) -> String {
    let mut s = String::new();
    for tp in poses {
        let q = tp.pose.q.quaternion();
        let t = tp.pose.t;
        writeln!(
            s,
            "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            tp.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
        .unwrap();
    }
    s
}

pub fn write_trajectory(path: &Path, poses: &[TimedPose]) -> Result<()> {
    fs::write(path, format_trajectory(poses)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tum_lines_and_skips_comments() {
        let text = "# timestamp tx ty tz qx qy qz qw\n\n0.0 1 2 3 0 0 0 1\n0.033 0 0 0 0 0 0.7071067811865476 0.7071067811865476\n";
        let traj = parse_trajectory(text, Path::new("t.txt")).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj[0].pose.t, Vector3::new(1.0, 2.0, 3.0));
        assert!((traj[1].pose.q.angle() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_lines() {
        let err = parse_trajectory("0 1 2 3\n", Path::new("bad.txt")).unwrap_err();
        assert!(err.to_string().starts_with("bad.txt:1:"));
    }

    #[test]
    fn format_then_parse_reproduces_poses() {
        let poses: Vec<_> = (0..5)
            .map(|i| TimedPose {
                timestamp: i as f64 / 30.0,
                pose: Pose::new(
                    UnitQuaternion::from_euler_angles(0.1 * i as f64, -0.2, 0.3),
                    Vector3::new(i as f64, -1.0, 0.25),
                ),
            })
            .collect();
        let back = parse_trajectory(&format_trajectory(&poses), Path::new("x")).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            let (dt, dr) = a.pose.distance(&b.pose);
            assert!(dt < 1e-8 && dr < 1e-8);
        }
    }
}
