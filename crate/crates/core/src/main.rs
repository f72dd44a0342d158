use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use floorplan_slam::config::Config;
use floorplan_slam::dataset::{
    ate_rmse, correspondences_by_frame, load_matches, load_tum, Trajectory, TumSequence,
};
use floorplan_slam::error::{Error, Result};
use floorplan_slam::export::{layouts_svg, map_svg, write_sequence, SlamReport};
use floorplan_slam::map::build_global_map;
use floorplan_slam::pipeline::{run_slam, sequence_inputs};
use floorplan_slam::scene_parser::{analyze_frame, parse_single_view};
use floorplan_slam::simulator::{self, TrajectorySpec, WorldSpec};

#[derive(Parser)]
#[command(
    name = "floorplan-slam",
    version,
    about = "Floor plans and camera trajectories from RGB-D sequences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic world into a sequence directory.
    Simulate(SimulateArgs),
    /// Run the full pipeline on a sequence directory.
    Slam(SlamArgs),
    /// Print the RMSE of an estimated trajectory against ground truth.
    Eval(EvalArgs),
    /// Parse one frame with and without temporal context.
    ParseFrame(ParseFrameArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set map.merge_distance=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed of the randomized estimators.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Catalog world name or a world JSON file.
    #[arg(long)]
    world: String,
    /// Trajectory JSON file; defaults to the catalog trajectory of the world.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Keep only the first N frames.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Range noise, meters.
    #[arg(long)]
    depth_sigma: Option<f64>,
    /// Per-frame rotation noise, degrees.
    #[arg(long)]
    normal_sigma: Option<f64>,
    /// Per-frame translation noise of the point matches, meters.
    #[arg(long)]
    odometry_sigma: Option<f64>,
    #[arg(long)]
    outlier_rate: Option<f64>,
}

#[derive(Args)]
struct SlamArgs {
    /// Sequence directory (rgb.txt, depth.txt, optional matches.txt,
    /// groundtruth.txt and camera.json).
    sequence: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_loop_closure: bool,
    /// Ground truth for the reported RMSE; defaults to the sequence's
    /// groundtruth.txt when present.
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    estimated: PathBuf,
    groundtruth: PathBuf,
}

#[derive(Args)]
struct ParseFrameArgs {
    sequence: PathBuf,
    /// Frame index within the associated sequence.
    #[arg(long)]
    frame: usize,
    /// Number of preceding frames run through the pipeline to build the
    /// temporal context.
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Directory for frame_<k>.json and frame_<k>.svg; JSON goes to stdout
    /// when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            report_error("usage", &e.to_string(), 1);
            return ExitCode::from(1);
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Slam(args) => slam(args),
        Command::Eval(args) => eval(args),
        Command::ParseFrame(args) => parse_frame(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_input_error() { 1 } else { 2 };
            report_error(e.kind(), &e.to_string(), code);
            ExitCode::from(code)
        }
    }
}

fn report_error(kind: &str, message: &str, code: u8) {
    let body = serde_json::json!({ "error": kind, "message": message.trim(), "exit_code": code });
    eprintln!("{body}");
}

/// Defaults scaled to the sensor, then the config file, then `--set` and
/// `--seed`.
fn build_config(args: &ConfigArgs, pixels: usize) -> Result<Config> {
    let mut config = Config::default().scaled_for_resolution(pixels);
    if let Some(path) = &args.config {
        config.apply_text(&fs::read_to_string(path)?)?;
    }
    for item in &args.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`{item}`: expected KEY=VALUE")))?;
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = args.seed {
        config.ransac.seed = seed;
        config.odometry.seed = seed;
    }
    Ok(config)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let catalog = simulator::WORLD_NAMES.contains(&args.world.as_str());
    let world: WorldSpec = if catalog {
        simulator::world(&args.world)?
    } else if Path::new(&args.world).is_file() {
        read_json(Path::new(&args.world))?
    } else {
        return Err(Error::UnknownWorld(args.world.clone()));
    };
    let mut traj: TrajectorySpec = match &args.trajectory {
        Some(path) => read_json(path)?,
        None if catalog => simulator::standard_trajectory(&args.world)?,
        None => return Err(Error::Config("a world file needs --trajectory".into())),
    };
    if let Some(n) = args.frames {
        traj.poses.truncate(n);
    }
    if let Some(s) = args.seed {
        traj.noise.seed = s;
    }
    if let Some(w) = args.width {
        traj.camera.width = w;
    }
    if let Some(h) = args.height {
        traj.camera.height = h;
    }
    if let Some(v) = args.depth_sigma {
        traj.noise.depth_sigma = v;
    }
    if let Some(v) = args.normal_sigma {
        traj.noise.normal_sigma_deg = v;
    }
    if let Some(v) = args.odometry_sigma {
        traj.noise.odometry_sigma = v;
    }
    if let Some(v) = args.outlier_rate {
        traj.noise.outlier_rate = v;
    }
    write_sequence(&args.out, &world, &traj)?;
    println!(
        "wrote {} frames to {}",
        traj.poses.len(),
        args.out.display()
    );
    Ok(())
}

fn load_sequence(
    dir: &Path,
    config_args: &ConfigArgs,
) -> Result<(
    TumSequence,
    Config,
    Vec<Vec<floorplan_slam::odometry::Correspondence>>,
)> {
    let seq = load_tum(dir)?;
    let first = seq.load_frame(0)?;
    let config = build_config(config_args, first.width * first.height)?;
    let matches_path = dir.join("matches.txt");
    let correspondences = if matches_path.is_file() {
        correspondences_by_frame(&load_matches(&matches_path)?, &seq.timestamps())
    } else {
        vec![Vec::new(); seq.entries.len()]
    };
    Ok((seq, config, correspondences))
}

fn slam(args: SlamArgs) -> Result<()> {
    let (seq, mut config, correspondences) = load_sequence(&args.sequence, &args.config)?;
    if args.no_loop_closure {
        config.slam.loop_closure = false;
    }
    let inputs = sequence_inputs(&seq, &correspondences, &config)?;
    let result = run_slam(&inputs, &config);
    if result.layouts.iter().all(Option::is_none) {
        return Err(Error::NoUsableFrames);
    }
    let map = build_global_map(&result.layouts, &result.poses, &config.map);
    let trajectory = result.trajectory();

    let truth_path = args
        .groundtruth
        .clone()
        .or_else(|| Some(args.sequence.join("groundtruth.txt")).filter(|p| p.is_file()));
    let ate = match truth_path {
        Some(p) => Some(ate_rmse(&trajectory, &Trajectory::load(&p)?)?),
        None => None,
    };

    fs::create_dir_all(&args.out)?;
    trajectory.save(&args.out.join("trajectory.txt"))?;
    fs::write(
        args.out.join("map.json"),
        serde_json::to_string_pretty(&map)?,
    )?;
    let path: Vec<_> = result.poses.iter().map(|p| p.position()).collect();
    fs::write(args.out.join("map.svg"), map_svg(&map, &path))?;
    let report = SlamReport::new(&result, &map, config.slam.loop_closure, ate);
    fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    fs::write(
        args.out.join("layouts.json"),
        serde_json::to_string(&result.layouts)?,
    )?;

    println!(
        "frames {} failed {} walls {} doors {} loop closures {}",
        result.frames.len(),
        report.failed_frames,
        map.walls.len(),
        map.doors.len(),
        result.loop_closures.len()
    );
    if let Some(ate) = ate {
        println!("ate_rmse {ate:.3}");
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let estimated = Trajectory::load(&args.estimated)?;
    let truth = Trajectory::load(&args.groundtruth)?;
    println!("{:.3}", ate_rmse(&estimated, &truth)?);
    Ok(())
}

fn parse_frame(args: ParseFrameArgs) -> Result<()> {
    let (seq, config, correspondences) = load_sequence(&args.sequence, &args.config)?;
    let k = args.frame;
    if k >= seq.entries.len() {
        return Err(Error::Config(format!(
            "frame {k} out of range, the sequence has {} frames",
            seq.entries.len()
        )));
    }
    let frame = seq.load_frame(k)?;
    let analysis = analyze_frame(&frame, &seq.gravity, &config)?;
    let single = parse_single_view(&analysis, &config.parser)?;

    let start = k.saturating_sub(args.window);
    let window = TumSequence {
        entries: seq.entries[start..=k].to_vec(),
        ..seq.clone()
    };
    let mut window_corrs = correspondences[start..=k].to_vec();
    window_corrs[0].clear();
    let inputs = sequence_inputs(&window, &window_corrs, &config)?;
    let result = run_slam(&inputs, &config);
    let temporal = result.layouts.last().cloned().flatten();

    let body = serde_json::json!({
        "frame": k,
        "timestamp": frame.timestamp,
        "single_view": single,
        "temporal": temporal,
    });
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(
                dir.join(format!("frame_{k}.json")),
                serde_json::to_string_pretty(&body)?,
            )?;
            fs::write(
                dir.join(format!("frame_{k}.svg")),
                layouts_svg(&single, temporal.as_ref()),
            )?;
        }
        None => println!("{}", serde_json::to_string_pretty(&body)?),
    }
    Ok(())
}
