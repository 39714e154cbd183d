//! Command implementations behind the `cubepose` binary.

mod evaluate;
mod fit;
mod svg;

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use cubepose::audit::{frustum_audit, CameraIntrinsics};
use cubepose::config::ExperimentConfig;
use cubepose::geometry::{BoundingCube, PointSet};
use cubepose::ingest::{class_priors, parse_ply, read_annotations, AnnotationRecord, MeshModel};
use cubepose::optim::gradient::loss_gradient;
use cubepose::optim::{gradcheck, sign_flipped_gradient};

pub use evaluate::cmd_evaluate;
pub use fit::cmd_fit;

#[derive(Debug, Parser)]
#[command(name = "cubepose", version, about = "Bounding-cube pose metrics, losses and fitting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predictions against ground truth with ADD / ADD-S.
    Evaluate(EvaluateArgs),
    /// Fit a pose (and optionally scale) to one ground-truth record.
    Fit(FitArgs),
    /// Compare analytic and finite-difference loss gradients.
    Gradcheck(GradcheckArgs),
    /// Flag ground-truth cubes that cannot be seen by the camera.
    Audit(AuditArgs),
    /// Build class-average cube priors from annotations.
    Prior(PriorArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// PLY model or priors JSON written by `prior`.
    #[arg(long)]
    pub prior: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Why a command failed; each kind has its own exit code.
#[derive(Debug)]
pub enum Failure {
    /// A verification ran and did not pass.
    Check(String),
    /// Unreadable or invalid input.
    Input(anyhow::Error),
    /// The optimizer produced a non-finite loss.
    Diverged(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Check(_) => 1,
            Failure::Input(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Check(m) => write!(f, "check failed: {m}"),
            Failure::Input(e) => write!(f, "input error: {e:#}"),
            Failure::Diverged(m) => write!(f, "diverged: {m}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<cubepose::Error>() {
            Some(cubepose::Error::Diverged { .. }) => Failure::Diverged(format!("{e:#}")),
            _ => Failure::Input(e),
        }
    }
}

impl From<cubepose::Error> for Failure {
    fn from(e: cubepose::Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn run(cli: Cli, stdout: &mut dyn Write) -> CmdResult {
    match cli.command {
        Command::Evaluate(a) => cmd_evaluate(&a, stdout),
        Command::Fit(a) => cmd_fit(&a, stdout),
        Command::Gradcheck(a) => cmd_gradcheck(&a, stdout),
        Command::Audit(a) => cmd_audit(&a, stdout),
        Command::Prior(a) => cmd_prior(&a, stdout),
    }
}

pub(crate) fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display())).map_err(Failure::from),
        None => Ok(ExperimentConfig::default()),
    }
}

pub(crate) fn load_records(path: &Path) -> Result<Vec<AnnotationRecord>, Failure> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_annotations(BufReader::new(f))
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::from)
}

pub(crate) fn load_mesh(path: &Path, cfg: &ExperimentConfig) -> Result<MeshModel, Failure> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mesh = parse_ply(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    let s = cfg.model_units.to_mm();
    if s == 1.0 {
        return Ok(mesh);
    }
    let pts = mesh.vertices.points().iter().map(|p| p * s).collect();
    Ok(MeshModel::new(PointSet::new(pts)?, mesh.faces)?)
}

/// Model points for a class: `<model_dir>/<class_id>.ply` when configured and
/// present, otherwise the corners of the record's own cube.
pub(crate) fn model_points(
    cfg: &ExperimentConfig,
    class_id: &str,
    cube: &BoundingCube,
) -> Result<PointSet, Failure> {
    if let Some(dir) = &cfg.model_dir {
        let path = Path::new(dir).join(format!("{class_id}.ply"));
        if path.exists() {
            return Ok(load_mesh(&path, cfg)?.vertices);
        }
    }
    Ok(cube.points())
}

pub(crate) fn create_out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// A CSV document: `# key = value` config lines, a header, and rows.
pub(crate) fn csv_with_echo(cfg: &ExperimentConfig, header: &[&str], rows: &[Vec<String>]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Failure::Input(e.into()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Failure::Input(e.into()))?;
    }
    let body = w.into_inner().map_err(|e| Failure::Input(anyhow!("{e}")))?;
    Ok(cfg.echo_lines("# ") + &String::from_utf8(body).expect("csv output is UTF-8"))
}

pub fn cmd_gradcheck(args: &GradcheckArgs, stdout: &mut dyn Write) -> CmdResult {
    let cfg = load_config(args.config.as_deref())?;
    let gc = cfg.gradcheck_config();
    let report = if cfg.inject_sign_flip {
        gradcheck(&gc, sign_flipped_gradient)?
    } else {
        gradcheck(&gc, loss_gradient)?
    };
    write!(stdout, "{}", cfg.echo_lines("# "))?;
    writeln!(stdout, "instances {}", report.checks.len())?;
    writeln!(stdout, "max_rel_error {:e}", report.max_rel_error)?;
    writeln!(stdout, "worst_instance {}", report.worst)?;
    writeln!(stdout, "convergence_order {:.4}", report.order)?;
    if report.passed() {
        writeln!(stdout, "PASS")?;
        return Ok(());
    }
    let worst = &report.checks[report.worst];
    writeln!(stdout, "FAIL")?;
    writeln!(stdout, "worst instance: seed {} index {}", gc.seed, worst.index)?;
    writeln!(stdout, "analytic {:?}", worst.analytic)?;
    writeln!(stdout, "numeric  {:?}", worst.numeric)?;
    Err(Failure::Check(format!(
        "max relative error {:e} (tolerance {:e}), convergence order {:.3}",
        report.max_rel_error, report.tolerance, report.order
    )))
}

pub fn cmd_audit(args: &AuditArgs, stdout: &mut dyn Write) -> CmdResult {
    let cfg = load_config(args.config.as_deref())?;
    let records = load_records(&args.gt)?;
    let text = fs::read_to_string(&args.intrinsics)
        .with_context(|| format!("reading {}", args.intrinsics.display()))?;
    let k = CameraIntrinsics::parse(&text).with_context(|| format!("parsing {}", args.intrinsics.display()))?;
    let flags = frustum_audit(&records, &k, cfg.min_area_px);
    let rows: Vec<Vec<String>> = flags
        .iter()
        .map(|f| vec![f.image_id.clone(), f.class_id.clone(), f.reason.to_string()])
        .collect();
    create_out_dir(&args.out)?;
    write_file(&args.out.join("audit.csv"), csv_with_echo(&cfg, &["image_id", "class_id", "reason"], &rows)?)?;
    let count = |r: &str| flags.iter().filter(|f| f.reason.as_str() == r).count();
    writeln!(
        stdout,
        "audited {} records: {} flagged (BehindCamera {}, OutOfFrame {}, TinyProjection {})",
        records.len(),
        flags.len(),
        count("BehindCamera"),
        count("OutOfFrame"),
        count("TinyProjection")
    )?;
    Ok(())
}

pub fn cmd_prior(args: &PriorArgs, stdout: &mut dyn Write) -> CmdResult {
    let cfg = load_config(args.config.as_deref())?;
    let records = load_records(&args.gt)?;
    if records.is_empty() {
        return Err(Failure::Input(anyhow!("{} has no records to average", args.gt.display())));
    }
    let mut priors = class_priors(&records)?;
    if let Some(d) = cfg.avg_diameter_override {
        priors = priors.into_iter().map(|p| p.with_diameter(d)).collect::<Result<_, _>>()?;
    }
    let config: serde_json::Map<String, serde_json::Value> = cfg
        .echo()
        .into_iter()
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v)))
        .collect();
    let doc = serde_json::json!({ "config": config, "priors": priors });
    create_out_dir(&args.out)?;
    let text = serde_json::to_string_pretty(&doc).expect("priors serialize") + "\n";
    write_file(&args.out.join("priors.json"), text)?;
    for p in &priors {
        writeln!(stdout, "{}: {} cubes, avg diameter {:.3} mm", p.class_id, p.count, p.avg_diameter)?;
    }
    Ok(())
}
