//! Command-line front end: `attack`, `evaluate`, `defend-eval`,
//! `export-lidar` and `plot`.
//!
//! Every verb writes a manifest into its output directory with the resolved
//! config, seed, tool version and a SHA-256 of each input and artifact.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asset_io::{load_depth, load_image, parse_run_config, save_depth, AssetError, ConfigError, RunConfig};
use crate::assets::{AttackAssets, CameraFile};
use crate::defenses::{defense_eval, Defense, DefenseError, DefenseRow, DefenseSpec};
use crate::mde::{load_backend, predict_depth, DepthModel, MdeError};
use crate::metrics::{placement_sweep, EvalReport, MetricsError, PatchSpec, SweepCell};
use crate::optimizer::{eval_batch_size, evaluation_draws, run_attack, write_artifacts, AttackError, ThetaFile};
use crate::plot::{empirical_cdf, Figure, Series};
use crate::pseudolidar::{depth_to_pointcloud, save_pointcloud, PointCloudError};

/// Tool version: `git describe` at build time, or the crate version.
pub const VERSION: &str = env!("DEPTHPATCH_VERSION");

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSET: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_RUNTIME: i32 = 5;

/// Number of points kept in `error_cdf.csv`.
const CDF_POINTS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error(transparent)]
    Backend(MdeError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Asset(_) => EXIT_ASSET,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<MdeError> for CliError {
    fn from(e: MdeError) -> Self {
        match e {
            MdeError::BackendUnavailable { .. } => CliError::Backend(e),
            other => CliError::runtime(other),
        }
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::Asset(a) => CliError::Asset(a),
            AttackError::Setup(s) => CliError::Usage(s),
            other => CliError::runtime(other),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Depth(d) => d.into(),
            other => CliError::runtime(other),
        }
    }
}

impl From<DefenseError> for CliError {
    fn from(e: DefenseError) -> Self {
        match e {
            DefenseError::Invalid(s) => CliError::Usage(s),
            DefenseError::AutoencoderMissing(_) => CliError::Backend(MdeError::BackendUnavailable {
                name: "autoencoder".into(),
                reason: e.to_string(),
            }),
            DefenseError::Depth(d) => d.into(),
            other => CliError::runtime(other),
        }
    }
}

impl From<PointCloudError> for CliError {
    fn from(e: PointCloudError) -> Self {
        match e {
            PointCloudError::Intrinsics { .. } => CliError::Usage(e.to_string()),
            other => CliError::runtime(other),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "depthpatch", version = VERSION, about = "Adversarial patches against monocular depth estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a patch and its region against a depth model.
    Attack(AttackArgs),
    /// Sweep placements for a finished attack and write per-cell errors.
    Evaluate(RunArgs),
    /// Compare input-transformation defenses on a finished attack.
    DefendEval(DefendArgs),
    /// Back-project a depth map (or a model prediction) to an `.xyz` cloud.
    ExportLidar(LidarArgs),
    /// Render figures from `evaluate` and `defend-eval` outputs.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Dotted `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Output directory of a previous `attack`.
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DefendArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// `jpeg:Q`, `bits:B`, `median:K`, `noise:SIGMA`, `autoencoder[:DIR]` or
    /// `none`; repeatable. Without any, a grid over each family's range runs.
    #[arg(long = "defense", value_name = "SPEC")]
    pub defenses: Vec<String>,
}

#[derive(Debug, Args)]
pub struct LidarArgs {
    /// Depth file written by this tool (with its `.json` sidecar).
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    pub depth: Option<PathBuf>,
    /// Image to run through the configured model instead of a depth file.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Run config naming the model; the toy backend when absent.
    #[arg(long, requires = "image")]
    pub config: Option<PathBuf>,
    /// `camera.json` with `f`, `tan_alpha`, `h_cam` and optional `cx`, `cy`.
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Directory holding `eval.csv` and friends.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    /// Relative to the manifest's directory when inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub verb: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Resolved run config as TOML.
    pub config: Option<String>,
    pub inputs: Vec<ArtifactDigest>,
    pub artifacts: Vec<ArtifactDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| AssetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn digest(path: &Path, base: &Path) -> Result<ArtifactDigest, CliError> {
    let shown = path.strip_prefix(base).unwrap_or(path);
    Ok(ArtifactDigest {
        path: shown.to_string_lossy().replace('\\', "/"),
        sha256: sha256_file(path)?,
    })
}

/// `manifest.json` for `attack`, `manifest_<verb>.json` otherwise, so
/// follow-up verbs sharing a run directory keep the attack manifest intact.
pub fn manifest_name(verb: &str) -> String {
    if verb == "attack" {
        "manifest.json".into()
    } else {
        format!("manifest_{}.json", verb.replace('-', "_"))
    }
}

fn write_manifest(
    out: &Path,
    verb: &str,
    cfg: Option<&RunConfig>,
    inputs: &[PathBuf],
    artifacts: &[PathBuf],
) -> Result<PathBuf, CliError> {
    let mut arts = artifacts
        .iter()
        .map(|p| digest(p, out))
        .collect::<Result<Vec<_>, _>>()?;
    arts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        verb: verb.to_string(),
        version: VERSION.to_string(),
        seed: cfg.and_then(|c| c.seed),
        config: cfg.map(RunConfig::snapshot),
        inputs: inputs.iter().map(|p| digest(p, out)).collect::<Result<_, _>>()?,
        artifacts: arts,
    };
    let path = out.join(manifest_name(verb));
    let text = serde_json::to_string_pretty(&manifest).map_err(CliError::runtime)? + "\n";
    write_file(&path, text)?;
    Ok(path)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| {
        AssetError::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| {
        AssetError::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn load_model(cfg: &RunConfig) -> Result<Box<dyn DepthModel>, CliError> {
    Ok(load_backend(&cfg.model.backend, cfg.model.weights_dir.as_deref(), cfg.model.toy_seed)?)
}

/// Name of the resolved config written next to attack artifacts.
pub const RUN_CONFIG_FILE: &str = "config.toml";

/// A finished attack as read back from its output directory.
pub struct LoadedRun {
    pub cfg: RunConfig,
    pub assets: AttackAssets,
    pub model: Box<dyn DepthModel>,
    pub patch: crate::tensor::Tensor3,
    pub theta: ThetaFile,
    pub inputs: Vec<PathBuf>,
}

impl LoadedRun {
    pub fn open(dir: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let cfg_path = dir.join(RUN_CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(|source| ConfigError::Read {
            path: cfg_path.clone(),
            source,
        })?;
        let cfg = parse_run_config(&text)?.apply_overrides(overrides)?;
        let patch_path = dir.join("patch.png");
        let theta_path = dir.join("theta.json");
        let patch = load_image(&patch_path)?.into_tensor();
        if !theta_path.exists() {
            return Err(AssetError::MissingFile(theta_path).into());
        }
        let theta = ThetaFile::load(&theta_path)?;
        let assets = AttackAssets::from_config(&cfg.assets, cfg.seed())?;
        let model = load_model(&cfg)?;
        Ok(Self {
            cfg,
            assets,
            model,
            patch,
            theta,
            inputs: vec![cfg_path, patch_path, theta_path],
        })
    }

    pub fn patch_spec(&self) -> PatchSpec<'_> {
        PatchSpec {
            patch: &self.patch,
            regions: &self.theta.regions,
            steepness: self.theta.steepness,
            shape: self.assets.shape.as_ref(),
        }
    }
}

pub fn attack(args: &AttackArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = crate::asset_io::load_run_config(&args.config)?.apply_overrides(&args.overrides)?;
    let assets = AttackAssets::from_config(&cfg.assets, cfg.seed())?;
    let model = load_model(&cfg)?;
    create_dir(&args.out)?;
    let outcome = run_attack(&cfg, &assets, model.as_ref())?;
    info!(
        "adversarial loss {:.6} -> {:.6} on the evaluation batch",
        outcome.initial_eval.adv, outcome.final_eval.adv
    );
    let mut files = write_artifacts(&outcome, &cfg, &assets, model.as_ref(), &args.out)?;
    let cfg_path = args.out.join(RUN_CONFIG_FILE);
    write_file(&cfg_path, cfg.snapshot())?;
    files.push(cfg_path);
    files.push(write_manifest(&args.out, "attack", Some(&cfg), std::slice::from_ref(&args.config), &files)?);
    Ok(files)
}

#[derive(Debug, Serialize)]
struct CellRow<'a> {
    cell: usize,
    scene: &'a str,
    distance: f64,
    lateral: f64,
    #[serde(rename = "E_d")]
    e_d: f64,
    #[serde(rename = "R_a")]
    r_a: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::runtime)?;
    let mut any = false;
    for r in rows {
        w.serialize(r).map_err(CliError::runtime)?;
        any = true;
    }
    if !any {
        w.write_record(header).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)
}

fn write_eval(report: &EvalReport, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let csv_path = out.join("eval.csv");
    write_csv(
        &csv_path,
        report.cells.iter().enumerate().map(|(i, c): (usize, &SweepCell)| CellRow {
            cell: i,
            scene: &c.scene,
            distance: c.distance_m,
            lateral: c.lateral_m,
            e_d: c.e_d,
            r_a: c.r_a,
        }),
        &["cell", "scene", "distance", "lateral", "E_d", "R_a"],
    )?;
    let summary = out.join("eval_summary.json");
    write_file(&summary, serde_json::to_string_pretty(report).map_err(CliError::runtime)? + "\n")?;
    let cdf_path = out.join("error_cdf.csv");
    #[derive(Serialize)]
    struct CdfRow {
        error_m: f64,
        fraction: f64,
    }
    write_csv(
        &cdf_path,
        empirical_cdf(&report.pixel_errors, CDF_POINTS)
            .into_iter()
            .map(|(error_m, fraction)| CdfRow { error_m, fraction }),
        &["error_m", "fraction"],
    )?;
    Ok(vec![csv_path, summary, cdf_path])
}

pub fn evaluate(args: &RunArgs) -> Result<(EvalReport, Vec<PathBuf>), CliError> {
    let run = LoadedRun::open(&args.run, &args.overrides)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    create_dir(&out)?;
    let report = placement_sweep(&run.assets, run.patch_spec(), run.model.as_ref(), &run.cfg.eval)?;
    if !report.skipped.is_empty() {
        warn!("{} sweep cells skipped because the object left the frame", report.skipped.len());
    }
    info!("mean E_d {:.4} m, mean R_a {:.4} over {} cells", report.e_d, report.r_a, report.cells.len());
    let mut files = write_eval(&report, &out)?;
    files.push(write_manifest(&out, "evaluate", Some(&run.cfg), &run.inputs, &files)?);
    Ok((report, files))
}

/// A grid covering each family's configured range.
pub fn default_defense_grid() -> Vec<DefenseSpec> {
    let mut v = vec![DefenseSpec::None];
    v.extend([90u8, 70, 50, 30, 20].map(|quality| DefenseSpec::Jpeg { quality }));
    v.extend([5u8, 4, 3, 2].map(|bits| DefenseSpec::BitDepth { bits }));
    v.extend([5usize, 9, 15, 25].map(|kernel| DefenseSpec::MedianBlur { kernel }));
    v.extend([0.01, 0.05, 0.1].map(|sigma| DefenseSpec::GaussianNoise { sigma }));
    v
}

pub fn defend_eval(args: &DefendArgs) -> Result<(Vec<DefenseRow>, Vec<PathBuf>), CliError> {
    let specs = if args.defenses.is_empty() {
        default_defense_grid()
    } else {
        args.defenses
            .iter()
            .map(|s| s.parse::<DefenseSpec>())
            .collect::<Result<_, _>>()?
    };
    let defenses = specs.into_iter().map(Defense::new).collect::<Result<Vec<_>, _>>()?;
    let run = LoadedRun::open(&args.run.run, &args.run.overrides)?;
    let out = args.run.out.clone().unwrap_or_else(|| args.run.run.clone());
    create_dir(&out)?;
    let draws = evaluation_draws(&run.cfg, &run.assets, eval_batch_size(&run.cfg))?;
    let rows = defense_eval(
        &run.assets,
        run.patch_spec(),
        run.model.as_ref(),
        &draws,
        &defenses,
        run.cfg.seed(),
    )?;
    let csv_path = out.join("defense.csv");
    write_csv(&csv_path, &rows, &["family", "param", "benign_E_d", "attack_E_d"])?;
    let files = vec![csv_path.clone(), write_manifest(&out, "defend-eval", Some(&run.cfg), &run.inputs, &[csv_path])?];
    Ok((rows, files))
}

pub fn export_lidar(args: &LidarArgs) -> Result<Vec<PathBuf>, CliError> {
    let cam = CameraFile::load(&args.camera)?;
    let mut inputs = vec![args.camera.clone()];
    let mut cfg_used = None;
    create_dir(&args.out)?;
    let mut files = Vec::new();
    let depth = match (&args.depth, &args.image) {
        (Some(d), _) => {
            inputs.push(d.clone());
            load_depth(d)?
        }
        (None, Some(img)) => {
            let cfg = match &args.config {
                Some(p) => {
                    inputs.push(p.clone());
                    crate::asset_io::load_run_config(p)?
                }
                None => RunConfig::with_seed(0),
            };
            inputs.push(img.clone());
            let model = load_model(&cfg)?;
            let d = predict_depth(model.as_ref(), &load_image(img)?)?;
            let dp = args.out.join("depth.f32");
            save_depth(&d, &dp)?;
            files.push(dp.clone());
            files.push(crate::asset_io::depth_sidecar(&dp));
            cfg_used = Some(cfg);
            d
        }
        (None, None) => return Err(CliError::Usage("either --depth or --image is required".into())),
    };
    let pc = depth_to_pointcloud(&depth, &cam.intrinsics(depth.height(), depth.width()));
    if pc.skipped > 0 {
        warn!("{} pixels with invalid depth were skipped", pc.skipped);
    }
    let xyz = args.out.join("points.xyz");
    save_pointcloud(&pc, &xyz)?;
    files.push(xyz);
    files.push(write_manifest(&args.out, "export-lidar", cfg_used.as_ref(), &inputs, &files)?);
    Ok(files)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    if !path.exists() {
        return Err(AssetError::MissingFile(path.to_path_buf()).into());
    }
    let mut r = csv::Reader::from_path(path).map_err(CliError::runtime)?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| AssetError::Metadata {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
        .map_err(Into::into)
}

#[derive(Debug, Deserialize)]
struct CellIn {
    distance: f64,
    lateral: f64,
    #[serde(rename = "E_d")]
    e_d: f64,
}

#[derive(Debug, Deserialize)]
struct CdfIn {
    error_m: f64,
    fraction: f64,
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<(), CliError> {
    img.save(path).map_err(|e| {
        AssetError::InvalidImage(format!("{}: {e}", path.display())).into()
    })
}

/// Mean of `ys` grouped by `x`, in ascending `x` order.
fn group_mean(pairs: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut groups: Vec<(f64, f64, usize)> = Vec::new();
    for (x, y) in pairs {
        match groups.iter_mut().find(|g| g.0 == x) {
            Some(g) => {
                g.1 += y;
                g.2 += 1;
            }
            None => groups.push((x, y, 1)),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups.into_iter().map(|(x, s, n)| (x, s / n as f64)).collect()
}

/// Renders `distance_error.png` (one line per lateral offset, then the
/// overall mean), `error_cdf.png`, and `defense_<family>.png` (benign then
/// attack error) when `defense.csv` is present.
pub fn plot(args: &PlotArgs) -> Result<Vec<PathBuf>, CliError> {
    let out = args.out.clone().unwrap_or_else(|| args.eval.clone());
    create_dir(&out)?;
    let eval_csv = args.eval.join("eval.csv");
    let cells: Vec<CellIn> = read_csv(&eval_csv)?;
    let mut inputs = vec![eval_csv];
    let mut files = Vec::new();

    let mut laterals: Vec<f64> = cells.iter().map(|c| c.lateral).collect();
    laterals.sort_by(f64::total_cmp);
    laterals.dedup();
    let mut series: Vec<Series> = laterals
        .iter()
        .map(|&l| Series {
            label: format!("lateral {l} m"),
            points: group_mean(cells.iter().filter(|c| c.lateral == l).map(|c| (c.distance, c.e_d))),
        })
        .collect();
    series.push(Series {
        label: "mean".into(),
        points: group_mean(cells.iter().map(|c| (c.distance, c.e_d))),
    });
    let p = out.join("distance_error.png");
    save_png(&Figure::new(series).render(), &p)?;
    files.push(p);

    let cdf_csv = args.eval.join("error_cdf.csv");
    if cdf_csv.exists() {
        let cdf: Vec<CdfIn> = read_csv(&cdf_csv)?;
        let mut fig = Figure::new(vec![Series {
            label: "cdf".into(),
            points: cdf.iter().map(|r| (r.error_m, r.fraction)).collect(),
        }]);
        fig.y_range = Some((0.0, 1.0));
        let p = out.join("error_cdf.png");
        save_png(&fig.render(), &p)?;
        files.push(p);
        inputs.push(cdf_csv);
    }

    let def_csv = args.eval.join("defense.csv");
    if def_csv.exists() {
        let rows: Vec<DefenseRow> = read_csv(&def_csv)?;
        let mut families: Vec<&str> = rows.iter().map(|r| r.family.as_str()).filter(|f| *f != "none").collect();
        families.sort_unstable();
        families.dedup();
        for fam in families {
            let pts = |pick: fn(&DefenseRow) -> f64| -> Vec<(f64, f64)> {
                let mut v: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.family == fam)
                    .filter_map(|r| r.param.parse::<f64>().ok().map(|x| (x, pick(r))))
                    .collect();
                v.sort_by(|a, b| a.0.total_cmp(&b.0));
                v
            };
            let fig = Figure::new(vec![
                Series {
                    label: "benign".into(),
                    points: pts(|r| r.benign_e_d),
                },
                Series {
                    label: "attack".into(),
                    points: pts(|r| r.attack_e_d),
                },
            ]);
            let p = out.join(format!("defense_{fam}.png"));
            save_png(&fig.render(), &p)?;
            files.push(p);
        }
        inputs.push(def_csv);
    }
    files.push(write_manifest(&out, "plot", None, &inputs, &files)?);
    Ok(files)
}

pub fn dispatch_command(cmd: &Command) -> Result<(), CliError> {
    let files = match cmd {
        Command::Attack(a) => attack(a)?,
        Command::Evaluate(a) => evaluate(a)?.1,
        Command::DefendEval(a) => defend_eval(a)?.1,
        Command::ExportLidar(a) => export_lidar(a)?,
        Command::Plot(a) => plot(a)?,
    };
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

/// Parses `argv`, runs the verb and returns the process exit code. Argument
/// errors follow clap's conventions (usage errors exit with 2).
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch_command(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
