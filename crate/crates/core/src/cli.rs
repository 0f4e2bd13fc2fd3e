//! Command-line front end. `run` returns the process exit code:
//! 0 success, 1 I/O or internal error, 2 invalid input or failed
//! precondition, 3 failed check or baseline regression.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::besov::{energy_report, BesovParams};
use crate::deform::{self, TransformKind, TransformOptions, DEFAULT_MAX_KAPPA};
use crate::error::{DeformError, VerifyError};
use crate::generators::{self, Family, FieldKind, GeneratorSpec, MassPolicy};
use crate::io::{read_space, space_to_json};
use crate::space::Space;
use crate::verify::{self, ComparabilityReport, DualityDirection, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_REGRESSION: i32 = 3;

pub const THREADS_ENV: &str = "METRICDEFORM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "metricdeform", version, about = "Radial deformations of finite metric measure spaces")]
pub struct Cli {
    /// Worker threads (overrides METRICDEFORM_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a test space.
    Generate(GenerateArgs),
    /// Sphericalize, flatten or invert a space.
    Transform(TransformArgs),
    /// Besov energy and norm of a test field.
    Energy(EnergyArgs),
    /// Run one statement checker, or all of them.
    Verify(VerifyArgs),
    /// Compose flattening and sphericalization.
    Duality(DualityArgs),
    /// Verify a refinement family level by level.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Grid,
    Cantor,
    WeightedHalfLine,
    Grid2d,
    Cluster,
    AccumulatingGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MassArg {
    Uniform,
    Profile,
}

#[derive(Debug, Args)]
pub struct FamilyParams {
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Point count (grid, weighted-half-line, accumulating-grid).
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub depth: u32,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub ratio: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w: f64,
    #[arg(long, default_value_t = 8)]
    pub side: usize,
    #[arg(long, default_value_t = 100.0)]
    pub gap: f64,
    #[arg(long, default_value_t = 6)]
    pub levels: u32,
    #[arg(long, value_enum, default_value_t = MassArg::Profile)]
    pub mass: MassArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl FamilyParams {
    fn family(&self, family: FamilyArg, level: Option<f64>) -> Family {
        let n = level.map_or(self.n, |l| l as usize);
        match family {
            FamilyArg::Grid => Family::GridSegment { n, spacing: self.spacing },
            FamilyArg::Cantor => Family::Cantor { depth: level.map_or(self.depth, |l| l as u32), ratio: self.ratio },
            FamilyArg::WeightedHalfLine => Family::WeightedHalfLine { n, w: self.w },
            FamilyArg::Grid2d => Family::GridPatch2D { side: level.map_or(self.side, |l| l as usize) },
            FamilyArg::Cluster => Family::ClusterCounterexample { gap: level.unwrap_or(self.gap) },
            FamilyArg::AccumulatingGrid => {
                Family::AccumulatingGrid { n: self.n, levels: level.map_or(self.levels, |l| l as u32) }
            }
        }
    }

    fn spec(&self, family: FamilyArg, level: Option<f64>) -> GeneratorSpec {
        GeneratorSpec {
            family: self.family(family, level),
            mass: match self.mass {
                MassArg::Uniform => MassPolicy::Uniform,
                MassArg::Profile => MassPolicy::Profile,
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub params: FamilyParams,
    /// Generator spec JSON, instead of the family flags.
    #[arg(long, conflicts_with = "family")]
    pub spec: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Sphericalize,
    Flatten,
    Invert,
}

impl From<KindArg> for TransformKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Sphericalize => TransformKind::Sphericalize,
            KindArg::Flatten => TransformKind::Flatten,
            KindArg::Invert => TransformKind::Invert,
        }
    }
}

#[derive(Debug, Args)]
pub struct TransformFlags {
    #[arg(long, default_value_t = DEFAULT_MAX_KAPPA)]
    pub max_kappa: f64,
    /// Fail instead of warning when sphericalizing a space that is not
    /// uniformly perfect at large scales.
    #[arg(long)]
    pub strict: bool,
}

impl TransformFlags {
    fn options(&self) -> TransformOptions {
        TransformOptions { max_kappa: self.max_kappa, strict_large_scales: self.strict, ..Default::default() }
    }
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TransformFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldArg {
    Constant,
    Radius,
    CappedRadius,
    HalfIndicator,
    RandomLipschitz,
}

#[derive(Debug, Args)]
pub struct EnergyArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, value_enum, default_value_t = FieldArg::Radius)]
    pub field: FieldArg,
    /// Cap for `capped-radius`, value for `constant`.
    #[arg(long, default_value_t = 1.0)]
    pub value: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON array of field values, instead of `--field`.
    #[arg(long)]
    pub values: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    /// Transform to verify; defaults to sphericalize for unbounded inputs
    /// and flatten otherwise.
    #[arg(long, value_enum)]
    pub transform: Option<KindArg>,
    /// Permit `sigma != p*theta` (negative controls).
    #[arg(long)]
    pub allow_sigma_mismatch: bool,
    #[arg(long)]
    pub no_duality: bool,
    /// Seed of the random Lipschitz test field.
    #[arg(long, default_value_t = 0)]
    pub field_seed: u64,
    #[command(flatten)]
    pub flags: TransformFlags,
}

impl CheckArgs {
    fn config(&self) -> Result<VerifyConfig, VerifyError> {
        let params = BesovParams::new(self.p, self.theta)?;
        Ok(VerifyConfig {
            params,
            allow_sigma_mismatch: self.allow_sigma_mismatch,
            fields: None,
            seed: self.field_seed,
            duality: !self.no_duality,
        })
    }

    fn kind_for(&self, space: &Space) -> TransformKind {
        match self.transform {
            Some(k) => k.into(),
            None if space.flags().unbounded => TransformKind::Sphericalize,
            None => TransformKind::Flatten,
        }
    }

    /// The deformation sigma must equal `p*theta` unless mismatches are allowed.
    fn check_sigma(&self) -> Result<(), VerifyError> {
        let pt = self.p * self.theta;
        if !self.allow_sigma_mismatch && (pt - self.sigma).abs() > 1e-12 * self.sigma {
            return Err(VerifyError::SigmaMismatch { expected: pt, got: self.sigma });
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Compare against a stored baseline; exit 3 on any ratio outside it.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Write the current windows as a new baseline.
    #[arg(long)]
    pub bless: Option<PathBuf>,
    /// Relative window half-width used by `--bless`.
    #[arg(long, default_value_t = 0.25)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Statement id or `all`.
    pub statement: String,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub check: CheckArgs,
    #[command(flatten)]
    pub baseline: BaselineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    SphereThenFlatten,
    FlattenThenSphere,
}

#[derive(Debug, Args)]
pub struct DualityArgs {
    #[arg(long, value_enum)]
    pub direction: DirectionArg,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub baseline: BaselineArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub params: FamilyParams,
    /// Refinement levels (depths or sizes), comma separated.
    #[arg(long = "at", value_delimiter = ',', required = true)]
    pub at: Vec<f64>,
    #[command(flatten)]
    pub check: CheckArgs,
    /// Write `family,depth,statement,min_ratio,max_ratio` rows here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Stored per-statement windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub tolerance: f64,
    pub statements: BTreeMap<String, BaselineWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineWindow {
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl Baseline {
    pub fn bless(reports: &[ComparabilityReport], tolerance: f64) -> Self {
        let statements = reports
            .iter()
            .filter(|r| r.evaluated > 0)
            .map(|r| {
                (r.statement.clone(), BaselineWindow { min_ratio: r.min_ratio, max_ratio: r.max_ratio })
            })
            .collect();
        Baseline { tolerance, statements }
    }

    /// Statements whose window left the stored one widened by `tolerance`.
    pub fn regressions(&self, reports: &[ComparabilityReport]) -> Vec<String> {
        let t = self.tolerance;
        let mut out = Vec::new();
        for r in reports {
            let Some(b) = self.statements.get(&r.statement) else { continue };
            let (lo, hi) = (b.min_ratio * (1.0 - t), b.max_ratio * (1.0 + t));
            if !(r.min_ratio >= lo && r.max_ratio <= hi) {
                out.push(format!(
                    "{}: [{}, {}] outside baseline [{}, {}]",
                    r.statement, r.min_ratio, r.max_ratio, lo, hi
                ));
            }
        }
        out
    }
}

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Io(_) => EXIT_ERROR,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

fn invalid<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Invalid(e.to_string())
}

fn io_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Io(e.to_string())
}

fn load(path: &Path) -> Result<Space, CliError> {
    if !path.exists() {
        return Err(CliError::Io(format!("{}: no such file", path.display())));
    }
    read_space(path).map_err(invalid)
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

#[derive(Serialize)]
struct ReportBody<'a> {
    reports: &'a [ComparabilityReport],
    passed: bool,
}

/// Writes reports, blesses or compares baselines, and picks the exit code.
fn finish_reports(
    reports: &[ComparabilityReport],
    output: Option<&Path>,
    baseline: &BaselineArgs,
) -> Result<i32, CliError> {
    let passed = reports.iter().all(|r| r.passed);
    emit(output, &to_json(&ReportBody { reports, passed }))?;
    if let Some(path) = &baseline.bless {
        emit(Some(path), &to_json(&Baseline::bless(reports, baseline.tolerance)))?;
    }
    let mut code = if passed { EXIT_OK } else { EXIT_REGRESSION };
    for r in reports.iter().filter(|r| !r.passed) {
        log::warn!("{} failed: [{}, {}], {} violations", r.statement, r.min_ratio, r.max_ratio, r.violations);
    }
    if let Some(path) = &baseline.baseline {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
        let stored: Baseline = serde_json::from_str(&text).map_err(invalid)?;
        let regressions = stored.regressions(reports);
        for r in &regressions {
            eprintln!("regression: {r}");
        }
        if !regressions.is_empty() {
            code = EXIT_REGRESSION;
        }
    }
    Ok(code)
}

fn deform_error(e: DeformError) -> CliError {
    invalid(e)
}

fn verify_error(e: VerifyError) -> CliError {
    invalid(e)
}

fn generate_cmd(args: &GenerateArgs) -> Result<i32, CliError> {
    let spec = match (&args.spec, args.params.family) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<GeneratorSpec>(&text).map_err(invalid)?
        }
        (None, Some(f)) => args.params.spec(f, None),
        (None, None) => return Err(CliError::Invalid("give --family or --spec".into())),
    };
    let space = generators::generate(&spec).map_err(invalid)?;
    emit(args.output.as_deref(), &space_to_json(&space))?;
    Ok(EXIT_OK)
}

fn transform_cmd(args: &TransformArgs) -> Result<i32, CliError> {
    let space = load(&args.input)?;
    let opts = args.flags.options();
    let deformed = match args.kind {
        KindArg::Sphericalize => deform::sphericalize(&space, args.sigma, opts),
        KindArg::Flatten => deform::flatten(&space, args.sigma, opts),
        KindArg::Invert => deform::invert(&space, args.sigma, opts),
    }
    .map_err(deform_error)?;
    let text = serde_json::to_string(&deformed.to_file()).expect("space serializes");
    emit(args.output.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn energy_cmd(args: &EnergyArgs) -> Result<i32, CliError> {
    let space = load(&args.input)?;
    let params = BesovParams::new(args.p, args.theta).map_err(invalid)?;
    let values = match &args.values {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<Vec<f64>>(&text).map_err(invalid)?
        }
        None => {
            let kind = match args.field {
                FieldArg::Constant => FieldKind::Constant { value: args.value },
                FieldArg::Radius => FieldKind::Radius,
                FieldArg::CappedRadius => FieldKind::CappedRadius { cap: args.value },
                FieldArg::HalfIndicator => FieldKind::HalfIndicator,
                FieldArg::RandomLipschitz => FieldKind::RandomLipschitz { seed: args.seed },
            };
            generators::test_field(&space, kind)
        }
    };
    let report = energy_report(&space, &values, params).map_err(invalid)?;
    emit(args.output.as_deref(), &to_json(&report))?;
    Ok(EXIT_OK)
}

fn verify_cmd(args: &VerifyArgs) -> Result<i32, CliError> {
    let space = load(&args.input)?;
    args.check.check_sigma().map_err(verify_error)?;
    let config = args.check.config().map_err(verify_error)?;
    let kind = args.check.kind_for(&space);
    let m0 = kind.gauge().unwrap_or(1.0);
    let deformed =
        deform::transform(&space, kind, m0, args.check.sigma, args.check.flags.options()).map_err(deform_error)?;
    let reports = verify::verify_statement(&deformed, &config, &args.statement).map_err(verify_error)?;
    finish_reports(&reports, args.output.as_deref(), &args.baseline)
}

fn duality_cmd(args: &DualityArgs) -> Result<i32, CliError> {
    let space = load(&args.input)?;
    let direction = match args.direction {
        DirectionArg::SphereThenFlatten => DualityDirection::SphereThenFlatten,
        DirectionArg::FlattenThenSphere => DualityDirection::FlattenThenSphere,
    };
    let reports = verify::duality_report(&space, args.sigma, direction).map_err(verify_error)?;
    finish_reports(&reports, args.output.as_deref(), &args.baseline)
}

fn sweep_cmd(args: &SweepArgs) -> Result<i32, CliError> {
    let family = args.params.family.ok_or_else(|| CliError::Invalid("sweep needs --family".into()))?;
    args.check.check_sigma().map_err(verify_error)?;
    let config = args.check.config().map_err(verify_error)?;
    let specs: Vec<GeneratorSpec> = args.at.iter().map(|&l| args.params.spec(family, Some(l))).collect();
    let first = generators::generate(&specs[0]).map_err(invalid)?;
    let kind = args.check.kind_for(&first);
    let rows = verify::run_sweep(&specs, kind, args.check.sigma, &config).map_err(verify_error)?;
    if let Some(path) = &args.csv {
        emit(Some(path), &verify::sweep_csv(&rows))?;
    }
    emit(args.output.as_deref(), &to_json(&rows))?;
    Ok(if rows.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_REGRESSION })
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::Invalid(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Generate(a) => generate_cmd(a),
        Command::Transform(a) => transform_cmd(a),
        Command::Energy(a) => energy_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Duality(a) => duality_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
    }
}

/// Parses `argv` and runs the command on a pool of the configured size.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return e.code();
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
