use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use beamtrim::evaluation::{bench_rejectors, relative_error, BenchConfig, NoiseLevel, Variant, DEFAULT_SEGMENT};
use beamtrim::io::{format_config, read_config, read_poses, read_velodyne_bin, write_poses, write_velodyne_bin, PipelineConfig};
use beamtrim::registration::{Odometry, Rejector};
use beamtrim::simulation::{default_sensor_height, motion_poses, simulate_sequence, standard_scene, Motion, Scene};
use beamtrim::svg::{bench_plot, trajectory_plot};
use beamtrim::{RigidTransform, Trajectory, Vec3};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "beamtrim", version, about = "Lidar odometry with normal-covariance filtering and neighbor-beam match rejection")]
struct Cli {
    /// Pipeline settings as `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a trajectory from a directory of Velodyne `.bin` scans.
    Run {
        scans: PathBuf,
        #[arg(long, default_value = "salo")]
        variant: Variant,
        /// Overrides the variant's rejector.
        #[arg(long)]
        rejector: Option<Rejector>,
        /// Output directory for `poses.txt`.
        #[arg(long)]
        out: PathBuf,
        /// Seconds between scans when the directory has no `times.txt`.
        #[arg(long, default_value_t = 0.1)]
        period: f64,
    },
    /// Relative error of an estimated pose file against ground truth.
    Eval {
        estimate: PathBuf,
        ground_truth: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEGMENT)]
        segment: f64,
    },
    /// Compare match rejectors on perturbed simulated scan pairs.
    BenchRejectors {
        #[arg(long, default_value = "street")]
        scene: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `l_t,l_r` in meters and degrees; repeatable. Defaults to the
        /// three standard levels.
        #[arg(long = "level", value_parser = parse_level)]
        levels: Vec<NoiseLevel>,
        /// Rejectors to compare; repeatable. Defaults to `dst` and `geom`.
        #[arg(long = "rejector")]
        rejectors: Vec<Rejector>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a scan sequence with ground truth.
    Simulate {
        #[arg(long, default_value = "corridor")]
        scene: String,
        /// Plain-text scene file instead of a named scene.
        #[arg(long, conflicts_with = "scene")]
        scene_file: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, value_enum, default_value_t = MotionKind::Straight)]
        motion: MotionKind,
        /// Path length of a straight drive, or radius of an orbit, meters.
        #[arg(long, default_value_t = 110.0)]
        length: f64,
        /// Frames over which a straight drive accelerates from rest.
        #[arg(long, default_value_t = 15)]
        ramp_frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        period: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-down SVG of one or more pose files.
    PlotTraj {
        #[arg(required = true)]
        poses: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MotionKind {
    Straight,
    Orbit,
}

fn parse_level(s: &str) -> Result<NoiseLevel, String> {
    let (t, r) = s.split_once(',').ok_or("expected l_t,l_r")?;
    let t: f64 = t.trim().parse().map_err(|e| format!("{e}"))?;
    let r: f64 = r.trim().parse().map_err(|e| format!("{e}"))?;
    if t < 0.0 || r < 0.0 {
        return Err("noise limits must be non-negative".into());
    }
    Ok(NoiseLevel::new(t, r))
}

/// Files and directories created by a command; removed unless committed.
#[derive(Default)]
struct Outputs {
    created: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn dir(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
            self.created.push(path.to_path_buf());
        }
        Ok(())
    }

    fn file(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        self.created.push(path.to_path_buf());
        fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn track(&mut self, path: &Path) {
        self.created.push(path.to_path_buf());
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in self.created.iter().rev() {
            let _ = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => read_config(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn scan_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    if files.len() < 2 {
        bail!("{} holds {} scans; odometry needs at least two", dir.display(), files.len());
    }
    Ok(files)
}

fn read_times(dir: &Path, count: usize, period: f64) -> Result<Vec<f64>> {
    let path = dir.join("times.txt");
    if !path.exists() {
        return Ok((0..count).map(|i| i as f64 * period).collect());
    }
    let text = fs::read_to_string(&path)?;
    let times: Vec<f64> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| l.trim().parse::<f64>().with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect::<Result<_>>()?;
    if times.len() != count {
        bail!("{} has {} timestamps for {count} scans", path.display(), times.len());
    }
    Ok(times)
}

fn run(cfg: PipelineConfig, scans: &Path, variant: Variant, rejector: Option<Rejector>, out: &Path, period: f64) -> Result<()> {
    let mut odo_cfg = variant.configure(&cfg.odometry);
    if let Some(r) = rejector {
        odo_cfg.icp.rejector = r;
    }
    let files = scan_files(scans)?;
    let times = read_times(scans, files.len(), period)?;
    let intrinsics = Arc::new(cfg.intrinsics.clone());
    let mut outputs = Outputs::default();
    outputs.dir(out)?;

    let mut odo = Odometry::new(odo_cfg);
    let mut total = Duration::ZERO;
    println!("frame\tpoints\tfeatures\titerations\tms");
    for (file, &t) in files.iter().zip(&times) {
        let scan = read_velodyne_bin(file, &intrinsics, t).with_context(|| format!("reading {}", file.display()))?;
        let frame = odo.process(&scan);
        total += frame.elapsed;
        println!(
            "{}\t{}\t{}\t{}\t{:.1}{}",
            frame.index,
            scan.len(),
            frame.filtered_points,
            frame.icp.as_ref().map_or(0, |r| r.iterations),
            frame.elapsed.as_secs_f64() * 1e3,
            frame.failure.as_ref().map(|f| format!("\t{f}")).unwrap_or_default()
        );
    }
    println!("mean processing time: {:.1} ms per scan", total.as_secs_f64() * 1e3 / files.len() as f64);
    let poses = out.join("poses.txt");
    outputs.track(&poses);
    write_poses(odo.trajectory(), &poses)?;
    outputs.committed = true;
    info!("wrote {}", poses.display());
    Ok(())
}

fn eval(estimate: &Path, ground_truth: &Path, segment: f64) -> Result<()> {
    let est = read_poses(estimate).with_context(|| format!("reading {}", estimate.display()))?;
    let gt = read_poses(ground_truth).with_context(|| format!("reading {}", ground_truth.display()))?;
    let stats = relative_error(&est, &gt, segment)?;
    let name = estimate.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    println!("sequence\tsegments\tsegment_m\terror");
    println!("{name}\t{}\t{}\tμ {:.3}\tσ {:.3}", stats.per_segment.len(), stats.segment_length, stats.mean, stats.std);
    Ok(())
}

fn load_scene(name: &str, file: Option<&Path>) -> Result<(Scene, f64)> {
    match file {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok((Scene::from_text(&text)?, beamtrim::simulation::SENSOR_HEIGHT))
        }
        None => Ok((standard_scene(name)?, default_sensor_height(name))),
    }
}

fn bench(cfg: PipelineConfig, scene: &str, trials: usize, seed: u64, levels: Vec<NoiseLevel>, rejectors: Vec<Rejector>, out: &Path) -> Result<()> {
    let mut bc = BenchConfig::new(standard_scene(scene)?);
    bc.trials = trials;
    bc.seed = seed;
    if !levels.is_empty() {
        bc.levels = levels;
    }
    if !rejectors.is_empty() {
        bc.rejectors = rejectors;
    }
    bc.intrinsics = Arc::new(cfg.intrinsics);
    bc.filter = cfg.odometry.filter;
    bc.icp = cfg.odometry.icp;

    let mut outputs = Outputs::default();
    outputs.dir(out)?;
    let report = bench_rejectors(&bc);
    let table = report.to_table();
    print!("{table}");
    outputs.file(&out.join("bench.tsv"), &table)?;
    outputs.file(&out.join("bench.svg"), bench_plot(&report))?;
    outputs.committed = true;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(cfg: PipelineConfig, scene: &str, scene_file: Option<&Path>, frames: usize, motion: MotionKind, length: f64, ramp_frames: usize, seed: u64, period: f64, out: &Path) -> Result<()> {
    if frames < 2 {
        bail!("need at least two frames");
    }
    let (scene, height) = load_scene(scene, scene_file)?;
    let start = RigidTransform::from_translation(Vec3::new(0.0, 0.0, height));
    let motion = match motion {
        MotionKind::Straight => Motion::Straight { length, ramp_frames },
        MotionKind::Orbit => Motion::Orbit { radius: length, turns: 1.0 },
    };
    let poses = motion_poses(&motion, &start, frames);
    let intrinsics = Arc::new(cfg.intrinsics.clone());
    let seq = simulate_sequence(&scene, &poses, &intrinsics, seed, period);

    let mut outputs = Outputs::default();
    outputs.dir(out)?;
    for (i, scan) in seq.scans.iter().enumerate() {
        if scan.is_empty() {
            bail!("frame {i} saw nothing; is the sensor inside the scene?");
        }
        let path = out.join(format!("{i:06}.bin"));
        outputs.track(&path);
        write_velodyne_bin(scan, &path)?;
    }
    let gt = seq.ground_truth();
    let gt_path = out.join("ground_truth.txt");
    outputs.track(&gt_path);
    write_poses(&gt, &gt_path)?;
    let times: String = gt.timestamps.iter().map(|t| format!("{t}\n")).collect();
    outputs.file(&out.join("times.txt"), times)?;
    outputs.file(&out.join("sensor.conf"), format_config(&cfg))?;
    outputs.file(&out.join("scene.txt"), scene.to_text())?;
    outputs.committed = true;
    println!("wrote {frames} scans to {}", out.display());
    Ok(())
}

fn plot(files: &[PathBuf], out: &Path) -> Result<()> {
    let trajs: Vec<(String, Trajectory)> = files
        .iter()
        .map(|p| {
            let t = read_poses(p).with_context(|| format!("reading {}", p.display()))?;
            Ok((p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), t))
        })
        .collect::<Result<_>>()?;
    let refs: Vec<(String, &Trajectory)> = trajs.iter().map(|(n, t)| (n.clone(), t)).collect();
    let mut outputs = Outputs::default();
    outputs.file(out, trajectory_plot(&refs))?;
    outputs.committed = true;
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("BEAMTRIM_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("BEAMTRIM_THREADS='{v}' is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Run {
            scans,
            variant,
            rejector,
            out,
            period,
        } => run(cfg, &scans, variant, rejector, &out, period),
        Command::Eval {
            estimate,
            ground_truth,
            segment,
        } => eval(&estimate, &ground_truth, segment),
        Command::BenchRejectors {
            scene,
            trials,
            seed,
            levels,
            rejectors,
            out,
        } => bench(cfg, &scene, trials, seed, levels, rejectors, &out),
        Command::Simulate {
            scene,
            scene_file,
            frames,
            motion,
            length,
            ramp_frames,
            seed,
            period,
            out,
        } => simulate(cfg, &scene, scene_file.as_deref(), frames, motion, length, ramp_frames, seed, period, &out),
        Command::PlotTraj { poses, out } => plot(&poses, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use beamtrim::io::parse_config;

    #[test]
    fn level_parsing() {
        let l = parse_level("0.5, 5").unwrap();
        assert_eq!(l.l_t, 0.5);
        assert!((l.l_r - 5f64.to_radians()).abs() < 1e-15);
        assert!(parse_level("0.5").is_err());
        assert!(parse_level("-1,2").is_err());
    }

    #[test]
    fn uncommitted_outputs_are_removed() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("out");
        {
            let mut o = Outputs::default();
            o.dir(&sub).unwrap();
            o.file(&sub.join("a.txt"), "x").unwrap();
        }
        assert!(!sub.exists());
        {
            let mut o = Outputs::default();
            o.dir(&sub).unwrap();
            o.file(&sub.join("a.txt"), "x").unwrap();
            o.committed = true;
        }
        assert!(sub.join("a.txt").exists());
    }

    #[test]
    fn config_must_parse() {
        assert!(parse_config("k = 3").is_err());
    }
}
