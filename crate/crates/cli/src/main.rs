use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use lcalign::io::{load_frame, load_kitti_extrinsic, FrameManifest, LoadedFrame, TransformSpec};
use lcalign::metrics::{empirical_cdf, CDF_ROTATION_CAP_DEG, CDF_TRANSLATION_CAP_M};
use lcalign::overlay::{render_overlay, OverlayColor};
use lcalign::synthetic::{generate_synthetic_scene, write_synthetic_scene, SyntheticSceneSpec};
use lcalign::{
    calibrate, compute_errors, CalibrationErrors, Error, EulerAngles, FramePacket, Objective,
    ObjectiveConfig, Result, RigidTransform, RunReport, SearchConfig,
};
use log::{info, warn};
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "lcalign", version, about = "Targetless camera-LiDAR extrinsic calibration")]
struct Cli {
    /// Worker thread cap. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Calibrate from one or more frame manifests and write a report.
    Calibrate(CalibrateArgs),
    /// Compare report results against ground truth.
    Evaluate(EvaluateArgs),
    /// Draw projected LiDAR points over the camera image.
    Overlay(OverlayArgs),
    /// Write a synthetic frame with known ground truth.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// S = 40
    Kitti,
    /// S = 80
    Waymo,
    /// S = 60
    Tf360,
}

impl Preset {
    fn patch_size(self) -> u32 {
        match self {
            Preset::Kitti => 40,
            Preset::Waymo => 80,
            Preset::Tf360 => 60,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ColorArg {
    InverseDepth,
    Intensity,
}

#[derive(Args)]
struct InitArgs {
    /// Initial rotation as roll,pitch,yaw in degrees.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    init_euler: Option<Vec<f64>>,
    /// Initial translation x,y,z in meters (with --init-euler).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "init_euler")]
    init_translation: Option<Vec<f64>>,
    /// TOML file holding `translation` and either `rotation` or `euler_deg`.
    #[arg(long, conflicts_with = "init_euler")]
    init_file: Option<PathBuf>,
    /// Start from ground truth plus this many degrees on every Euler axis.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["init_euler", "init_file"])]
    init_offset_deg: Option<f64>,
    /// Start from ground truth plus this many meters on every axis.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["init_euler", "init_file"])]
    init_offset_m: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Frame manifests (TOML).
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
    #[arg(short, long, default_value = "report.json")]
    out: PathBuf,
    /// Dataset patch-size preset.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Patch side S in pixels (overrides --preset).
    #[arg(long)]
    patch_size: Option<u32>,
    /// Valid-patch point threshold P.
    #[arg(long)]
    min_points: Option<usize>,
    /// Structure weight λ1.
    #[arg(long)]
    lambda_structure: Option<f64>,
    /// Texture weight λ2.
    #[arg(long)]
    lambda_texture: Option<f64>,
    /// Histogram bins for the texture term.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, conflicts_with = "texture_only")]
    structure_only: bool,
    #[arg(long)]
    texture_only: bool,
    /// Run the rotation grid stage.
    #[arg(long, conflicts_with = "no_grid")]
    grid: bool,
    #[arg(long)]
    no_grid: bool,
    /// Grid half-range A, degrees.
    #[arg(long)]
    grid_range: Option<f64>,
    #[arg(long)]
    grid_stride: Option<f64>,
    /// Translation search half-range B, meters.
    #[arg(long)]
    trans_range: Option<f64>,
    #[arg(long)]
    iters_coarse: Option<usize>,
    #[arg(long)]
    iters_fine: Option<usize>,
    /// Six coarse perturbation angles, degrees.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    coarse_angles: Option<Vec<f64>>,
    /// Six fine perturbation angles, degrees.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    fine_angles: Option<Vec<f64>>,
    /// Search seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use at most this many frames.
    #[arg(long)]
    max_frames: Option<usize>,
    /// Shuffle the frame list before applying --max-frames.
    #[arg(long)]
    shuffle: bool,
    #[arg(long, default_value_t = 0)]
    shuffle_seed: u64,
    #[command(flatten)]
    init: InitArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reports written by `calibrate`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Ground truth: a frame manifest, a KITTI calib file, or a transform
    /// TOML. Defaults to the ground truth stored in each report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also print error CDFs of e_r and e_t-.
    #[arg(long)]
    cdf: bool,
    /// Clamp CDF values at 1 degree and 0.2 m.
    #[arg(long, requires = "cdf")]
    truncate: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OverlayArgs {
    manifest: PathBuf,
    #[arg(short, long, default_value = "overlay.png")]
    out: PathBuf,
    /// Use the result transform of this report.
    #[arg(long, conflicts_with_all = ["euler", "ground_truth"])]
    report: Option<PathBuf>,
    /// Transform as roll,pitch,yaw degrees (with --translation).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "ground_truth")]
    euler: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, requires = "euler")]
    translation: Option<Vec<f64>>,
    /// Use the manifest's ground truth.
    #[arg(long)]
    ground_truth: bool,
    #[arg(long, value_enum, default_value = "inverse-depth")]
    color: ColorArg,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of boxes in the scene.
    #[arg(long, default_value_t = SyntheticSceneSpec::default().boxes)]
    primitives: usize,
    /// Uniform LiDAR range noise half-width, meters.
    #[arg(long, default_value_t = 0.0)]
    range_noise: f64,
    /// Record an initial guess offset from ground truth by this many degrees
    /// per Euler axis.
    #[arg(long, allow_hyphen_values = true)]
    init_offset_deg: Option<f64>,
    /// Translation part of the recorded initial guess offset, meters.
    #[arg(long, allow_hyphen_values = true)]
    init_offset_m: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Overlay(a) => cmd_overlay(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {e}", category.as_str());
            ExitCode::from(category.exit_code() as u8)
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn vec3(v: &[f64]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn offset(t: &RigidTransform, deg: f64, m: f64) -> RigidTransform {
    RigidTransform::from_euler(t.euler().offset([deg; 3]), t.translation + Vector3::repeat(m))
}

fn load_transform_spec(path: &Path) -> Result<RigidTransform> {
    TransformSpec::load(path)?.to_transform()
}

fn check_len(flag: &str, v: &Option<Vec<f64>>, n: usize) -> Result<()> {
    match v {
        Some(v) if v.len() != n => Err(bad(format!("--{flag} takes {n} comma-separated values, got {}", v.len()))),
        _ => Ok(()),
    }
}

fn angles6(v: &Option<Vec<f64>>, default: [f64; 6]) -> [f64; 6] {
    v.as_ref().map_or(default, |v| std::array::from_fn(|i| v[i]))
}

fn objective_config(a: &CalibrateArgs, base: ObjectiveConfig) -> ObjectiveConfig {
    let mut c = base;
    if let Some(p) = a.preset {
        c.patch_size = p.patch_size();
    }
    c.patch_size = a.patch_size.unwrap_or(c.patch_size);
    c.min_points = a.min_points.unwrap_or(c.min_points);
    c.lambda_structure = a.lambda_structure.unwrap_or(c.lambda_structure);
    c.lambda_texture = a.lambda_texture.unwrap_or(c.lambda_texture);
    c.bins = a.bins.unwrap_or(c.bins);
    if a.structure_only {
        c.use_structure = true;
        c.use_texture = false;
    }
    if a.texture_only {
        c.use_structure = false;
        c.use_texture = true;
    }
    c
}

fn search_config(a: &CalibrateArgs, base: SearchConfig) -> SearchConfig {
    let mut c = base;
    c.grid_enabled = if a.grid {
        true
    } else if a.no_grid {
        false
    } else if let Some(d) = a.init.init_offset_deg {
        SearchConfig::for_initial_error(d.abs()).grid_enabled
    } else {
        c.grid_enabled
    };
    c.grid_range_deg = a.grid_range.unwrap_or(c.grid_range_deg);
    c.grid_stride_deg = a.grid_stride.unwrap_or(c.grid_stride_deg);
    c.trans_range_m = a.trans_range.unwrap_or(c.trans_range_m);
    c.coarse_iters = a.iters_coarse.unwrap_or(c.coarse_iters);
    c.fine_iters = a.iters_fine.unwrap_or(c.fine_iters);
    c.coarse_angles = angles6(&a.coarse_angles, c.coarse_angles);
    c.fine_angles = angles6(&a.fine_angles, c.fine_angles);
    c.seed = a.seed.unwrap_or(c.seed);
    c
}

fn initial_guess(init: &InitArgs, first: &LoadedFrame) -> Result<RigidTransform> {
    if let Some(path) = &init.init_file {
        return load_transform_spec(path);
    }
    if let Some(e) = &init.init_euler {
        let t = init.init_translation.as_deref().map_or(Vector3::zeros(), vec3);
        return Ok(RigidTransform::from_euler(EulerAngles::new(e[0], e[1], e[2]), t));
    }
    if init.init_offset_deg.is_some() || init.init_offset_m.is_some() {
        let gt = first
            .ground_truth
            .ok_or_else(|| bad("--init-offset-* needs ground truth in the first manifest"))?;
        return Ok(offset(
            &gt,
            init.init_offset_deg.unwrap_or(0.0),
            init.init_offset_m.unwrap_or(0.0),
        ));
    }
    if let Some(t) = first.initial_guess {
        return Ok(t);
    }
    info!("no initial guess given; using FLU to RDF (roll 90, pitch 0, yaw 90), zero translation");
    Ok(RigidTransform::from_euler(EulerAngles::new(90.0, 0.0, 90.0), Vector3::zeros()))
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    check_len("init-euler", &a.init.init_euler, 3)?;
    check_len("init-translation", &a.init.init_translation, 3)?;
    check_len("coarse-angles", &a.coarse_angles, 6)?;
    check_len("fine-angles", &a.fine_angles, 6)?;
    let mut paths = a.manifests.clone();
    if a.shuffle {
        paths.shuffle(&mut ChaCha8Rng::seed_from_u64(a.shuffle_seed));
    }
    if let Some(k) = a.max_frames {
        if k == 0 {
            return Err(bad("--max-frames must be at least 1"));
        }
        paths.truncate(k);
    }
    let manifests = paths
        .iter()
        .map(|p| FrameManifest::load(p))
        .collect::<Result<Vec<_>>>()?;
    let loaded = manifests.iter().map(load_frame).collect::<Result<Vec<_>>>()?;
    for (p, f) in paths.iter().zip(&loaded) {
        if f.dropped_points > 0 {
            warn!("{}: dropped {} non-finite points", p.display(), f.dropped_points);
        }
    }
    let objective = objective_config(&a, manifests[0].objective.unwrap_or_default());
    let search = search_config(&a, manifests[0].search.clone().unwrap_or_default());
    let t0 = initial_guess(&a.init, &loaded[0])?;
    let ground_truth = loaded[0].ground_truth;

    let frames: Vec<FramePacket> = loaded.into_iter().map(|f| f.packet).collect();
    let cost = Objective::new(&frames, objective)?;
    info!("calibrating on {} frame(s)", frames.len());
    let cal = calibrate(&cost, &t0, &search)?;
    let sources: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    let report = RunReport::new(&sources, &frames, &objective, &search, &cal, ground_truth.as_ref())?;
    report.save(&a.out)?;

    println!("{:<5} {:>9} {:>9} {:>9} {:>9}", "stage", "loss", "e_r", "e_t+", "e_t-");
    for s in &report.stages {
        match s.errors {
            Some(e) => println!(
                "{:<5} {:>9.5} {:>9.4} {:>9.4} {:>9.4}",
                s.name, s.loss, e.e_r, e.e_t_plus, e.e_t_minus
            ),
            None => println!("{:<5} {:>9.5}", s.name, s.loss),
        }
    }
    let r = &report.result;
    println!(
        "result: roll {:.4} pitch {:.4} yaw {:.4} deg, t [{:.4}, {:.4}, {:.4}] m",
        r.euler_deg.roll, r.euler_deg.pitch, r.euler_deg.yaw, r.translation[0], r.translation[1], r.translation[2]
    );
    println!("report written to {}", a.out.display());
    Ok(())
}

fn load_truth(path: &Path) -> Result<RigidTransform> {
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    if !is_toml {
        return load_kitti_extrinsic(&[path]);
    }
    if let Ok(m) = FrameManifest::load(path) {
        if let Some(spec) = &m.ground_truth {
            return spec.to_transform();
        }
        if m.calib.is_empty() {
            return Err(bad(format!("{} has no ground truth", path.display())));
        }
        let calib: Vec<&Path> = m.calib.iter().map(PathBuf::as_path).collect();
        return load_kitti_extrinsic(&calib);
    }
    load_transform_spec(path)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let truth = a.truth.as_deref().map(load_truth).transpose()?;
    let mut rows: Vec<(String, CalibrationErrors)> = Vec::new();
    for path in &a.reports {
        let report = RunReport::load(path)?;
        let gt = match (&truth, &report.ground_truth) {
            (Some(t), _) => *t,
            (None, Some(p)) => p.to_transform(),
            (None, None) => {
                return Err(bad(format!(
                    "{} has no ground truth; pass --truth",
                    path.display()
                )))
            }
        };
        rows.push((path.display().to_string(), compute_errors(&gt, &report.result.to_transform())));
    }
    let errors: Vec<CalibrationErrors> = rows.iter().map(|r| r.1).collect();
    let mean = CalibrationErrors::mean(&errors).expect("at least one report");
    let (rot_cap, trans_cap) = if a.truncate {
        (Some(CDF_ROTATION_CAP_DEG), Some(CDF_TRANSLATION_CAP_M))
    } else {
        (None, None)
    };
    let cdf_r = empirical_cdf(&errors.iter().map(|e| e.e_r).collect::<Vec<_>>(), rot_cap);
    let cdf_t = empirical_cdf(&errors.iter().map(|e| e.e_t_minus).collect::<Vec<_>>(), trans_cap);

    if a.json {
        let runs: Vec<serde_json::Value> = rows
            .iter()
            .map(|(name, e)| serde_json::json!({ "report": name, "errors": e }))
            .collect();
        let mut out = serde_json::json!({ "runs": runs, "mean": mean });
        if a.cdf {
            out["cdf_e_r"] = serde_json::json!(cdf_r);
            out["cdf_e_t_minus"] = serde_json::json!(cdf_t);
        }
        println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
        return Ok(());
    }

    println!(
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "report", "roll", "pitch", "yaw", "x", "y", "z", "e_r", "e_t+", "e_t-"
    );
    let line = |name: &str, e: &CalibrationErrors| {
        let [r, p, y, x, ty, z] = e.table_row();
        println!(
            "{:<24} {r:>8.4} {p:>8.4} {y:>8.4} {x:>8.4} {ty:>8.4} {z:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            name, e.e_r, e.e_t_plus, e.e_t_minus
        );
    };
    for (name, e) in &rows {
        line(name, e);
    }
    if rows.len() > 1 {
        line("mean", &mean);
    }
    if a.cdf {
        println!("\ncdf e_r (deg)");
        for (v, f) in &cdf_r {
            println!("{v:>10.4} {f:>6.3}");
        }
        println!("\ncdf e_t- (m)");
        for (v, f) in &cdf_t {
            println!("{v:>10.4} {f:>6.3}");
        }
    }
    Ok(())
}

fn cmd_overlay(a: OverlayArgs) -> Result<()> {
    check_len("euler", &a.euler, 3)?;
    check_len("translation", &a.translation, 3)?;
    let frame = load_frame(&FrameManifest::load(&a.manifest)?)?;
    let t = if let Some(r) = &a.report {
        RunReport::load(r)?.result.to_transform()
    } else if let Some(e) = &a.euler {
        let t = a.translation.as_deref().map_or(Vector3::zeros(), vec3);
        RigidTransform::from_euler(EulerAngles::new(e[0], e[1], e[2]), t)
    } else if a.ground_truth {
        frame
            .ground_truth
            .ok_or_else(|| bad("manifest has no ground truth"))?
    } else {
        frame.initial_guess.ok_or_else(|| {
            bad("no transform: pass --report, --euler, --ground-truth or set initial_guess")
        })?
    };
    let color = match a.color {
        ColorArg::InverseDepth => OverlayColor::InverseDepth,
        ColorArg::Intensity => OverlayColor::Intensity,
    };
    let img = render_overlay(&frame.image, &frame.raw_cloud, &t, &frame.packet.intrinsics, color)?;
    img.save(&a.out).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io { path: a.out.clone(), source },
        other => bad(other.to_string()),
    })?;
    println!("overlay written to {}", a.out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSceneSpec {
        boxes: a.primitives,
        range_noise_m: a.range_noise,
        ..SyntheticSceneSpec::new(a.seed)
    };
    let scene = generate_synthetic_scene(&spec)?;
    let init = (a.init_offset_deg.is_some() || a.init_offset_m.is_some()).then(|| {
        offset(
            &scene.ground_truth,
            a.init_offset_deg.unwrap_or(0.0),
            a.init_offset_m.unwrap_or(0.0),
        )
    });
    let manifest = write_synthetic_scene(&scene, &a.out, init.as_ref())?;
    println!("{}", manifest.display());
    Ok(())
}
