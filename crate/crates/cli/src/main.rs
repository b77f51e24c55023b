use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sic_core::analysis::DisparityField;
use sic_core::curve::undistort_points;
use sic_core::io::{
    parse_correspondences, parse_curve, parse_points, save_correspondences, save_curve, write_disparity,
    write_undistorted, CalibrationReport, InputInfo,
};
use sic_core::pipeline::{execute_pipeline, CodInit, Mode, ModelFreeConfig, PipelineConfig, ScaleVariant};
use sic_core::sweep::{run_noise_sweep, SweepConfig, SWEEP_SPACING_PX};
use sic_core::synth::{
    add_noise, generate_dense, generate_pose_set, row_convention_degrees, shipped_pose_set, GridDomain,
    GroundTruthScene, NoiseSpec, POSE1_DENSE_SPACING_PX,
};
use sic_core::{Error, Point2, PoseParams, RadialDistortion, SensorSpec};

#[derive(Parser)]
#[command(name = "sic", version, about = "Single-image camera calibration from dense planar correspondences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Pose1,
    Poses20,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mb,
    Mf,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Center,
    Disparity,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic correspondence files and a ground-truth sidecar.
    Synth {
        #[arg(long, value_enum, default_value = "pose1")]
        preset: Preset,
        /// Ideal-grid spacing in px (pose1 only).
        #[arg(long, allow_negative_numbers = true)]
        spacing: Option<f64>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pose override for pose1: rx,ry,rz in degrees then tx,ty,tz in mm.
        #[arg(long, value_delimiter = ',', num_args = 6, allow_negative_numbers = true)]
        pose: Option<Vec<f64>>,
        /// Distortion override: k1,k2,k3.
        #[arg(long, value_delimiter = ',', num_args = 3, allow_negative_numbers = true)]
        k: Option<Vec<f64>>,
        /// Output file (pose1) or directory (poses20).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the calibration pipeline on a correspondence file.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        /// Sensor size in px, WxH.
        #[arg(long, default_value = "3264x2448")]
        sensor: String,
        #[arg(long, value_enum, default_value = "mb")]
        mode: ModeArg,
        /// Slack of the model-free scale constraint in px; selects the epsilon variant.
        #[arg(long, allow_negative_numbers = true)]
        epsilon: Option<f64>,
        /// Points nearest the center used by the median scale constraint.
        #[arg(long)]
        nprime: Option<usize>,
        #[arg(long, value_enum, default_value = "center")]
        init: InitArg,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        curve_out: Option<PathBuf>,
        #[arg(long)]
        disparity_out: Option<PathBuf>,
    },
    /// Undistort points with a radial curve.
    Undistort {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        /// Center of distortion x,y; overrides the one stored in the curve file.
        #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
        cod: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise sweep on the pose1 scene.
    Sweep {
        /// Noise levels in px; defaults to ten levels over [0, 1].
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        sigmas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        #[arg(long, default_value_t = SWEEP_SPACING_PX, allow_negative_numbers = true)]
        spacing: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Io(String),
    Stage(String),
    Curve(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Stage(_) => 4,
            Failure::Curve(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Stage(m) | Failure::Curve(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e.root() {
            Error::Io(_) | Error::Csv(_) | Error::Parse(_) => Failure::Io(msg),
            Error::NonMonotoneCurve { .. } => Failure::Curve(msg),
            Error::InvalidParameter(_) => Failure::Usage(msg),
            _ => Failure::Stage(msg),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn parse_sensor(s: &str) -> Result<SensorSpec, Failure> {
    let bad = || Failure::Usage(format!("sensor must be WxH, got '{s}'"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: f64 = w.trim().parse().map_err(|_| bad())?;
    let h: f64 = h.trim().parse().map_err(|_| bad())?;
    SensorSpec::new(w, h).map_err(|e| Failure::Usage(e.to_string()))
}

fn truth_sidecar(scene: &GroundTruthScene, noise: &NoiseSpec, spacing: Option<f64>, points: usize) -> String {
    let a = &scene.intrinsics;
    let k = &scene.distortion;
    let t = scene.pose.t;
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
    let mut s = String::new();
    s.push_str("[intrinsics]\n");
    s.push_str(&format!("fx = {:?}\nfy = {:?}\nu0 = {:?}\nv0 = {:?}\n", a.fx, a.fy, a.u0, a.v0));
    s.push_str("\n[pose]\n");
    s.push_str(&format!("theta_deg = [{}]\n", list(&scene.pose.theta_degrees())));
    s.push_str(&format!("theta_row_deg = [{}]\n", list(&row_convention_degrees(&scene.pose))));
    s.push_str(&format!("t_mm = [{}]\n", list(&[t.x, t.y, t.z])));
    s.push_str("\n[distortion]\n");
    s.push_str(&format!("k = [{}]\n", list(&[k.k1, k.k2, k.k3])));
    s.push_str("\n[data]\n");
    s.push_str(&format!(
        "sensor = [{}]\nsigma = {:?}\nseed = {}\npoints = {}\n",
        list(&[scene.sensor.width, scene.sensor.height]),
        noise.sigma,
        noise.seed,
        points
    ));
    if let Some(sp) = spacing {
        s.push_str(&format!("spacing_px = {sp:?}\n"));
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    preset: Preset,
    spacing: Option<f64>,
    sigma: f64,
    seed: u64,
    pose: Option<Vec<f64>>,
    k: Option<Vec<f64>>,
    out: &Path,
) -> Result<(), Failure> {
    let noise = NoiseSpec::new(sigma, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    if noise.out_of_sweep_range() {
        eprintln!("warning: sigma {sigma} px is outside the [0, 1] px reference range");
    }
    let mut scene = GroundTruthScene::pose1();
    if let Some(p) = pose {
        scene = scene.with_pose(PoseParams::from_degrees([p[0], p[1], p[2]], [p[3], p[4], p[5]]));
    }
    if let Some(k) = k {
        scene = scene.with_distortion(RadialDistortion::new(k[0], k[1], k[2]));
    }
    match preset {
        Preset::Pose1 => {
            let spacing = spacing.unwrap_or(POSE1_DENSE_SPACING_PX);
            if !(spacing >= 1.0) || !spacing.is_finite() {
                return Err(Failure::Usage(format!("spacing must be >= 1 px, got {spacing}")));
            }
            let set = generate_dense(&scene, GridDomain::IdealImage { spacing_px: spacing })?;
            let set = add_noise(&set, &noise);
            save_correspondences(out, &set)?;
            let mut sidecar = out.as_os_str().to_owned();
            sidecar.push(".truth.toml");
            fs::write(&sidecar, truth_sidecar(&scene, &noise, Some(spacing), set.len()))
                .map_err(io_err(Path::new(&sidecar)))?;
            println!("wrote {} points to {}", set.len(), out.display());
        }
        Preset::Poses20 => {
            if spacing.is_some() {
                return Err(Failure::Usage("--spacing applies to the pose1 preset only".into()));
            }
            let scenes: Vec<GroundTruthScene> = shipped_pose_set()?
                .into_iter()
                .map(|s| s.with_distortion(scene.distortion))
                .collect();
            let sets = generate_pose_set(&scenes)?;
            fs::create_dir_all(out).map_err(io_err(out))?;
            for (i, (set, sc)) in sets.iter().zip(&scenes).enumerate() {
                let set = add_noise(set, &NoiseSpec::new(sigma, seed + i as u64).map_err(Failure::from)?);
                let path = out.join(format!("pose_{:02}.csv", i + 1));
                save_correspondences(&path, &set)?;
                let side = out.join(format!("pose_{:02}.truth.toml", i + 1));
                fs::write(&side, truth_sidecar(sc, &noise, None, set.len())).map_err(io_err(&side))?;
            }
            println!("wrote {} poses to {}", sets.len(), out.display());
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_calibrate(
    input: &Path,
    sensor: &str,
    mode: ModeArg,
    epsilon: Option<f64>,
    nprime: Option<usize>,
    init: InitArg,
    report: Option<&Path>,
    curve_out: Option<&Path>,
    disparity_out: Option<&Path>,
) -> Result<(), Failure> {
    let sensor = parse_sensor(sensor)?;
    let mode = match mode {
        ModeArg::Mb => Mode::ModelBased,
        ModeArg::Mf => Mode::ModelFree,
        ModeArg::Both => return Err(Failure::Usage("calibrate takes --mode mb or mf".into())),
    };
    let mut config = PipelineConfig::default();
    config.step1.init = match init {
        InitArg::Center => CodInit::SensorCenter,
        InitArg::Disparity => CodInit::DisparityMinimum,
    };
    let mut mf = ModelFreeConfig::default();
    if let Some(eps) = epsilon {
        mf.epsilon = eps;
        mf.variant = ScaleVariant::EpsilonConstraint;
    }
    if let Some(n) = nprime {
        mf.n_prime_p = n;
    }
    mf.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    config.model_free = mf;

    let bytes = fs::read(input).map_err(io_err(input))?;
    let set = parse_correspondences(bytes.as_slice())?;
    let run = execute_pipeline(&set, &sensor, mode, &config);

    if let (Some(path), Some(curve)) = (curve_out, run.curve()) {
        save_curve(path, curve)?;
    }
    if let (Some(path), Some(s1)) = (disparity_out, run.step1.as_ref()) {
        let file = fs::File::create(path).map_err(io_err(path))?;
        write_disparity(file, &set.image, &s1.disparity)?;
    } else if let Some(path) = disparity_out {
        // Step 1 rejected the data before computing disparity; recompute it directly
        if let Ok(field) = DisparityField::from_set(&set) {
            let file = fs::File::create(path).map_err(io_err(path))?;
            write_disparity(file, &field.points, &field.d_tot)?;
        }
    }
    let info = InputInfo::new(&input.display().to_string(), &bytes, set.len(), &sensor);
    let curve_path = curve_out.map(|p| p.display().to_string());
    let doc = CalibrationReport::from_run(&run, info, &config, None, curve_path.as_deref());
    let text = doc.to_toml()?;
    match report {
        Some(path) => fs::write(path, &text).map_err(io_err(path))?,
        None => print!("{text}"),
    }
    if let Some(e) = &run.failure {
        let stage = e.stage().map_or("input", |s| s.as_str());
        return Err(Failure::Stage(format!("stage {stage} failed: {}", e.root())));
    }
    Ok(())
}

fn cmd_undistort(points: &Path, curve: &Path, cod: Option<Vec<f64>>, out: &Path) -> Result<(), Failure> {
    let pts = parse_points(fs::File::open(points).map_err(io_err(points))?)?;
    let cod = cod.map(|c| Point2::new(c[0], c[1]));
    let curve = parse_curve(fs::File::open(curve).map_err(io_err(curve))?, cod)?;
    let und = undistort_points(&pts, &curve)?;
    let file = fs::File::create(out).map_err(io_err(out))?;
    write_undistorted(file, &pts, &und)?;
    let n_ext = und.iter().filter(|u| u.extrapolated).count();
    if n_ext > 0 {
        eprintln!("warning: {n_ext} points lie beyond the curve's radius range");
    }
    Ok(())
}

fn cmd_sweep(
    sigmas: Option<Vec<f64>>,
    trials: usize,
    mode: ModeArg,
    spacing: f64,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    let modes = match mode {
        ModeArg::Mb => vec![Mode::ModelBased],
        ModeArg::Mf => vec![Mode::ModelFree],
        ModeArg::Both => vec![Mode::ModelBased, Mode::ModelFree],
    };
    let mut config = SweepConfig::new(sigmas.unwrap_or_else(SweepConfig::reference_sigmas), trials, modes);
    config.spacing_px = spacing;
    config.base_seed = seed;
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let table = run_noise_sweep(&GroundTruthScene::pose1(), &config)?;
    let file = fs::File::create(out).map_err(io_err(out))?;
    table.write_csv(file)?;
    let failed = table.cells.iter().filter(|c| c.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} cells failed", table.cells.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth {
            preset,
            spacing,
            sigma,
            seed,
            pose,
            k,
            out,
        } => cmd_synth(preset, spacing, sigma, seed, pose, k, &out),
        Command::Calibrate {
            input,
            sensor,
            mode,
            epsilon,
            nprime,
            init,
            report,
            curve_out,
            disparity_out,
        } => cmd_calibrate(
            &input,
            &sensor,
            mode,
            epsilon,
            nprime,
            init,
            report.as_deref(),
            curve_out.as_deref(),
            disparity_out.as_deref(),
        ),
        Command::Undistort { points, curve, cod, out } => cmd_undistort(&points, &curve, cod, &out),
        Command::Sweep {
            sigmas,
            trials,
            mode,
            spacing,
            seed,
            out,
        } => cmd_sweep(sigmas, trials, mode, spacing, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
