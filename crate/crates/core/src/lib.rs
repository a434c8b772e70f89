//! Dense RGB-D SLAM over a set of axis-aligned submaps, each holding a
//! tri-plane hash-encoded signed distance field.

pub mod dataset;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod field;
pub mod hash_plane;
pub mod loss;
pub mod manager;
pub mod marching_cubes;
pub mod math;
pub mod objective;
pub mod params;
pub mod pipeline;
pub mod render;
pub mod simd;
pub mod submap;
pub mod synthetic;
pub mod trajectory;

pub use error::{Error, Result};
pub use math::{CameraIntrinsics, Pose, Ray};
