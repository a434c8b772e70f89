mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use triplane_slam::dataset::{generate_dataset, scene_by_name, Dataset};
use triplane_slam::eval::{ate_rmse, cull_mesh, depth_l1, extract_mesh, mesh_metrics, write_ply};
use triplane_slam::field::SceneField;
use triplane_slam::params::read_checkpoint;
use triplane_slam::pipeline::SlamSystem;
use triplane_slam::synthetic::{Frame, TrajectorySpec};
use triplane_slam::trajectory::{read_trajectory, write_trajectory};
use triplane_slam::{CameraIntrinsics, Pose};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "triplane-slam", version, about = "Dense RGB-D SLAM with tri-plane hash-encoded submaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic RGB-D sequence.
    Generate {
        #[arg(long, default_value = "box-room")]
        scene: String,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gaussian depth noise, meters.
        #[arg(long, default_value_t = 0.0)]
        depth_noise: f64,
    },
    /// Track and map a sequence; writes trajectory, checkpoint and logs.
    Run(RunArgs),
    /// Print metrics as JSON.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        est: PathBuf,
        /// Run directory; adds depth L1 and mesh metrics (needs --data).
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0.02)]
        voxel: f64,
    },
    /// Export the frustum-culled mesh of a run as PLY.
    Mesh {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        voxel: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    frames: Option<usize>,
    /// Single 3D hash grid instead of three planes.
    #[arg(long)]
    grid_hash: bool,
    /// Never allocate beyond the first submap.
    #[arg(long)]
    single_map: bool,
    /// Disable global bundle adjustment.
    #[arg(long)]
    no_ba: bool,
    /// TSDF residual in meters, `s + d_r - d_p`.
    #[arg(long)]
    paper_literal_tsdf: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{o}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        let mut set = |k: &str, v: String| cfg.set(k, &v);
        if let Some(d) = &self.data {
            set("data", d.display().to_string())?;
        }
        if let Some(o) = &self.out {
            set("out", o.display().to_string())?;
        }
        if let Some(s) = self.seed {
            set("seed", s.to_string())?;
        }
        if let Some(p) = &self.precision {
            set("precision", p.clone())?;
        }
        if let Some(n) = self.frames {
            set("max_frames", n.to_string())?;
        }
        for (flag, key) in [
            (self.grid_hash, "grid_hash"),
            (self.single_map, "single_map"),
            (self.no_ba, "no_ba"),
            (self.paper_literal_tsdf, "paper_literal_tsdf"),
        ] {
            if flag {
                set(key, "true".into())?;
            }
        }
        if cfg.data.as_os_str().is_empty() {
            bail!("no dataset given (--data or `data =` in the config file)");
        }
        if cfg.out.as_os_str().is_empty() {
            bail!("no output directory given (--out or `out =` in the config file)");
        }
        Ok(cfg)
    }
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn cmd_generate(scene: &str, frames: usize, out: &Path, seed: u64, depth_noise: f64) -> Result<()> {
    let Some(analytic) = scene_by_name(scene) else {
        bail!("unknown scene `{scene}` (available: box-room)");
    };
    if frames == 0 {
        bail!("--frames must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_dataset(
        &analytic,
        scene,
        &TrajectorySpec::box_room_orbit(frames),
        &CameraIntrinsics::desk(),
        depth_noise,
        out,
        &mut rng,
    )?;
    info!("wrote {frames} frames to {}", out.display());
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let ds = load_dataset(&cfg.data)?;
    if ds.is_empty() {
        bail!("dataset {} has no frames", cfg.data.display());
    }
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    let n = match cfg.max_frames {
        0 => ds.len(),
        m => m.min(ds.len()),
    };
    let mut slam = SlamSystem::new(cfg.slam, ds.intr)?;
    let t0 = Instant::now();
    for (i, frame) in ds.frames.iter().take(n).enumerate() {
        let gt = (i == 0).then(|| ds.groundtruth[0].pose);
        slam.process_frame(frame, gt.as_ref())?;
        info!("frame {i}/{n} done at {:.1}s, {} submaps", t0.elapsed().as_secs_f64(), slam.field.manager.len());
    }
    let stamps: Vec<f64> = ds.groundtruth.iter().map(|g| g.timestamp).collect();
    write_trajectory(&cfg.out.join("trajectory.txt"), &slam.timed_trajectory(&stamps))?;
    slam.write_checkpoint(&cfg.out)?;
    slam.write_logs(&cfg.out)?;
    info!("finished {n} frames in {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}

/// Field, trajectory and frames of a finished run.
struct RunState {
    cfg: RunConfig,
    field: SceneField,
    poses: Vec<Pose>,
    ds: Dataset,
}

fn load_run(run: &Path, data: &Path) -> Result<RunState> {
    let cfg = RunConfig::load(&run.join("config.txt"))?;
    let ckpt = read_checkpoint(run)?;
    let field = SceneField::from_checkpoint(&cfg.slam.field, &ckpt)?;
    let poses: Vec<Pose> = read_trajectory(&run.join("trajectory.txt"))?.into_iter().map(|t| t.pose).collect();
    let ds = load_dataset(data)?;
    if poses.len() > ds.len() {
        bail!("run has {} poses but the dataset only {} frames", poses.len(), ds.len());
    }
    Ok(RunState { cfg, field, poses, ds })
}

impl RunState {
    fn frames(&self) -> Vec<&Frame> {
        self.ds.frames.iter().take(self.poses.len()).collect()
    }

    fn culled_mesh(&self, voxel: f64) -> Result<triplane_slam::marching_cubes::TriMesh> {
        let mut mesh = extract_mesh(&self.field, voxel)?;
        let margin = 2.0 * self.cfg.slam.objective.sampling.truncation;
        cull_mesh(&mut mesh, &self.poses, &self.frames(), &self.ds.intr, margin);
        Ok(mesh)
    }
}

fn cmd_eval(gt: &Path, est: &Path, run: Option<&Path>, data: Option<&Path>, voxel: f64) -> Result<()> {
    let gt_poses: Vec<Pose> = read_trajectory(gt)?.into_iter().map(|t| t.pose).collect();
    let est_poses: Vec<Pose> = read_trajectory(est)?.into_iter().map(|t| t.pose).collect();
    let n = est_poses.len().min(gt_poses.len());
    let mut out = serde_json::Map::new();
    out.insert("frames".into(), json!(n));
    out.insert("ate_rmse_cm".into(), json!(100.0 * ate_rmse(&est_poses[..n], &gt_poses[..n])?));
    match (run, data) {
        (Some(run), Some(data)) => {
            let state = load_run(run, data)?;
            let mut rng = ChaCha8Rng::seed_from_u64(state.cfg.slam.seed);
            let sampling = state.cfg.slam.objective.sampling;
            let dl1 = depth_l1(&state.field, &state.poses, &state.frames(), &state.ds.intr, &sampling, 1, &mut rng)?;
            out.insert("depth_l1_cm".into(), json!(100.0 * dl1));
            if let Some(scene) = state.ds.scene.as_deref().and_then(scene_by_name) {
                let mesh = state.culled_mesh(voxel)?;
                let m = mesh_metrics(&mesh, &scene, 20_000, &mut rng)?;
                out.insert("accuracy_cm".into(), json!(100.0 * m.accuracy));
                out.insert("completion_cm".into(), json!(100.0 * m.completion));
                out.insert("completion_ratio".into(), json!(m.completion_ratio));
                out.insert("mesh_voxel_cm".into(), json!(100.0 * voxel));
            }
        }
        (None, None) => {}
        _ => bail!("--run and --data must be given together"),
    }
    println!("{}", serde_json::to_string_pretty(&serde_json::Value::Object(out))?);
    Ok(())
}

fn cmd_mesh(run: &Path, data: &Path, out: &Path, voxel: f64) -> Result<()> {
    let state = load_run(run, data)?;
    let mesh = state.culled_mesh(voxel)?;
    write_ply(out, &mesh)?;
    info!("wrote {} triangles to {}", mesh.triangles.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SLAM_LOG", "warn")).init();
    // Usage errors exit with status 2 inside `parse`.
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate {
            scene,
            frames,
            out,
            seed,
            depth_noise,
        } => cmd_generate(scene, *frames, out, *seed, *depth_noise),
        Command::Run(args) => cmd_run(args),
        Command::Eval { gt, est, run, data, voxel } => cmd_eval(gt, est, run.as_deref(), data.as_deref(), *voxel),
        Command::Mesh { run, data, out, voxel } => cmd_mesh(run, data, out, *voxel),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
