//! `pstarmax` command-line front end. Every subcommand reads files, calls the library
//! once and writes the result; errors leave as JSON on stderr with a classified exit code.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use pstarmax::estimate::FitConfig;
use pstarmax::forecast::{metrics, rolling_forecast};
use pstarmax::inference::{single_param_test, wald_test};
use pstarmax::io::{read_counts, read_covariates, write_counts, write_panel};
use pstarmax::study::{run_study, StudyPlan};
use pstarmax::{
    fit, simulate_path, AdjacencyList, CopulaSpec, CountPanel, CovariatePanel, FitResult, GridSpec, InitStrategy,
    ModelSpec, ParameterVector, SimulationConfig, StationarityCriterion, WeightMatrixSet,
};
use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Environment variable holding the `env_logger` filter (e.g. `info`, `pstarmax=debug`).
const LOG_ENV: &str = "PSTARMAX_LOG";

#[derive(Parser)]
#[command(name = "pstarmax", version, about = "Poisson space-time ARMA models with covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or check spatial weight sets.
    #[command(subcommand)]
    Weights(WeightsCmd),
    /// Simulate a count panel.
    Simulate(SimulateArgs),
    /// Quasi-maximum-likelihood fit.
    Fit(FitArgs),
    /// Wald test on a fitted model.
    Test(TestArgs),
    /// Rolling one-step predictions and forecast metrics.
    Forecast(ForecastArgs),
    /// Monte Carlo studies.
    #[command(subcommand)]
    Study(StudyCmd),
}

#[derive(Subcommand)]
enum WeightsCmd {
    Build(BuildArgs),
    /// Exit 0 when the set passes every check, 1 otherwise; the report goes to stdout.
    Validate {
        file: PathBuf,
        /// Downgrade neighbourless rows to warnings.
        #[arg(long)]
        allow_empty_rows: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsKind {
    Grid4nn,
    GridDirectional,
    Adjacency,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    kind: WeightsKind,
    /// Grid side length (grid kinds).
    #[arg(long)]
    n: Option<usize>,
    /// Edge list CSV `from,to` with 0-based locations (adjacency).
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Number of locations (adjacency); defaults to the largest index + 1.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = 1)]
    max_order: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CopulaArg {
    Independent,
    Clayton,
    Frank,
    Joe,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    theta: PathBuf,
    /// Last time index; the panel covers t = 0..=T.
    #[arg(long = "T")]
    n_time: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CopulaArg::Independent)]
    copula: CopulaArg,
    #[arg(long, default_value_t = 0.0)]
    copula_param: f64,
    #[arg(long, default_value_t = 100)]
    burn_in: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    intensity_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    FirstObs,
    GlobalMean,
    Zero,
}

impl From<InitArg> for InitStrategy {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::FirstObs => InitStrategy::FirstObs,
            InitArg::GlobalMean => InitStrategy::GlobalMean,
            InitArg::Zero => InitStrategy::Zero,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    CoefficientSum,
    TauAdjusted,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = InitArg::FirstObs)]
    init: InitArg,
    #[arg(long, value_enum, default_value_t = CriterionArg::CoefficientSum)]
    criterion: CriterionArg,
    #[arg(long, default_value_t = 1)]
    multistart: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    fit: PathBuf,
    /// 0-based index into the packed parameter vector.
    #[arg(long, conflicts_with = "contrast", required_unless_present = "contrast")]
    param: Option<usize>,
    /// Contrast matrix C and target c0, both headerless numeric CSV.
    #[arg(long, num_args = 2, value_names = ["C_CSV", "C0_CSV"])]
    contrast: Option<Vec<PathBuf>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// The fit file records no weights, so they are passed again.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// First predicted time point; defaults to the first time the recursion defines.
    #[arg(long)]
    test_split: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Metrics JSON destination; stdout when absent.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum StudyCmd {
    /// Writes report.json, replicates.csv and summary.json into the output directory.
    Run {
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Master seed; replaces the plan's.
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(pstarmax::Error::from)
        .with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_weights(path: &Path) -> Result<WeightMatrixSet> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let w = WeightMatrixSet::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    let rep = w.validate();
    if !rep.is_ok() {
        return Err(pstarmax::Error::Validation(rep.to_string())).with_context(|| format!("checking {}", path.display()));
    }
    Ok(w)
}

fn load_counts(path: &Path) -> Result<CountPanel> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_counts(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load_covariates(path: Option<&PathBuf>) -> Result<Option<CovariatePanel>> {
    path.map(|p| {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        read_covariates(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))
    })
    .transpose()
}

/// Headerless numeric CSV as rows.
fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(pstarmax::Error::from)?;
            rec.iter()
                .map(|s| s.parse::<f64>().map_err(|e| anyhow!(pstarmax::Error::InvalidInput(format!("{}: {e}: {s:?}", path.display())))))
                .collect()
        })
        .collect()
}

fn weights_build(a: &BuildArgs) -> Result<()> {
    let grid = || -> Result<GridSpec> {
        Ok(GridSpec::new(a.n.ok_or_else(|| usage("--n is required for grid weights"))?)?)
    };
    let set = match a.kind {
        WeightsKind::Grid4nn => WeightMatrixSet::grid_4nn(grid()?)?,
        WeightsKind::GridDirectional => WeightMatrixSet::grid_directional(grid()?)?,
        WeightsKind::Adjacency => {
            let path = a.edges.as_ref().ok_or_else(|| usage("--edges is required for adjacency weights"))?;
            let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
            let edges: Vec<(usize, usize)> =
                rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(pstarmax::Error::from)?;
            let p = a.p.unwrap_or_else(|| edges.iter().map(|e| e.0.max(e.1) + 1).max().unwrap_or(0));
            WeightMatrixSet::from_adjacency(&AdjacencyList::from_edges(p, &edges)?, a.max_order)?
        }
    };
    let mut out = create(&a.out)?;
    set.write_csv(&mut out)?;
    out.flush()?;
    log::info!("wrote {} matrices over {} locations", set.len(), set.p());
    Ok(())
}

fn weights_validate(file: &Path, allow_empty_rows: bool) -> Result<ExitCode> {
    let f = File::open(file).with_context(|| format!("opening {}", file.display()))?;
    let rep = match WeightMatrixSet::read_csv(BufReader::new(f)) {
        Ok(w) => w.validate_with(allow_empty_rows),
        Err(e) => {
            let mut rep = pstarmax::ValidationReport::new();
            rep.error("unreadable", None, None, e.to_string());
            rep
        }
    };
    write_json(None, &rep)?;
    Ok(if rep.is_ok() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let spec: ModelSpec = read_json(&a.model)?;
    let theta: ParameterVector = read_json(&a.theta)?;
    let w = load_weights(&a.weights)?;
    let x = load_covariates(a.covariates.as_ref())?;
    let copula = match a.copula {
        CopulaArg::Independent => CopulaSpec::independent(),
        CopulaArg::Clayton => CopulaSpec::clayton(a.copula_param),
        CopulaArg::Frank => CopulaSpec::frank(a.copula_param),
        CopulaArg::Joe => CopulaSpec::joe(a.copula_param),
    };
    let cfg = SimulationConfig { burn_in: a.burn_in, ..SimulationConfig::new(a.n_time, a.seed, copula) };
    let path = simulate_path(&theta, &spec, &w, x.as_ref(), &cfg)?;
    let mut out = create(&a.out)?;
    write_counts(&mut out, &path.counts)?;
    out.flush()?;
    if let Some(p) = &a.intensity_out {
        let mut out = create(p)?;
        write_panel(&mut out, path.p(), &path.intensity)?;
        out.flush()?;
    }
    Ok(())
}

fn fit_cmd(a: &FitArgs) -> Result<()> {
    let spec: ModelSpec = read_json(&a.model)?;
    let w = load_weights(&a.weights)?;
    let y = load_counts(&a.data)?;
    let x = load_covariates(a.covariates.as_ref())?;
    let cfg = FitConfig {
        init: a.init.into(),
        criterion: match a.criterion {
            CriterionArg::CoefficientSum => StationarityCriterion::CoefficientSum,
            CriterionArg::TauAdjusted => StationarityCriterion::TauAdjusted,
        },
        multistart: a.multistart,
        ..FitConfig::default()
    };
    let res = fit(&spec, &w, &y, x.as_ref(), &cfg)?;
    fs::write(&a.out, res.to_json()?).with_context(|| format!("writing {}", a.out.display()))?;
    if !res.converged {
        // the estimate is still written so that it can be inspected
        return Err(pstarmax::Error::Numerical(format!(
            "optimizer stopped after {} iterations with gradient norm {:e}",
            res.iterations, res.gradient_norm
        ))
        .into());
    }
    log::info!("converged in {} iterations, loglik {}", res.iterations, res.loglik);
    Ok(())
}

fn load_fit(path: &Path) -> Result<FitResult> {
    let text = fs::read_to_string(path).with_context(|| format!("opening {}", path.display()))?;
    FitResult::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn test_cmd(a: &TestArgs) -> Result<()> {
    let f = load_fit(&a.fit)?;
    let res = match (&a.param, &a.contrast) {
        (Some(k), _) => single_param_test(&f, *k)?,
        (None, Some(files)) => {
            let rows = read_matrix(&files[0])?;
            let c0: Vec<f64> = read_matrix(&files[1])?.into_iter().flatten().collect();
            let ncol = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncol) {
                return Err(pstarmax::Error::Dimension("contrast rows differ in length".into()).into());
            }
            let c = DMatrix::from_row_iterator(rows.len(), ncol, rows.into_iter().flatten());
            wald_test(&f, &c, &DVector::from_vec(c0))?
        }
        (None, None) => bail!(usage("either --param or --contrast is required")),
    };
    write_json(a.out.as_deref(), &res)
}

fn forecast_cmd(a: &ForecastArgs) -> Result<()> {
    let f = load_fit(&a.fit)?;
    let w = load_weights(&a.weights)?;
    let y = load_counts(&a.data)?;
    let x = load_covariates(a.covariates.as_ref())?;
    let split = a.test_split.unwrap_or_else(|| f.spec.first_time());
    let lambda = rolling_forecast(&f, &w, &y, x.as_ref(), split)?;
    let p = y.p();
    let mut out = csv::Writer::from_writer(create(&a.out)?);
    out.write_record(["t", "location", "y", "lambda_hat"])?;
    for (idx, l) in lambda.iter().enumerate() {
        let t = split + idx / p;
        let loc = idx % p;
        out.serialize((t, loc + 1, y.row(t)[loc], l))?;
    }
    out.flush()?;
    let held_out = y.slice(split..y.len())?;
    write_json(a.metrics_out.as_deref(), &metrics(&held_out, &lambda)?)
}

fn study_run(plan_path: &Path, out: &Path, seed: u64, jobs: usize) -> Result<()> {
    let mut plan: StudyPlan = read_json(plan_path)?;
    plan.master_seed = seed;
    plan.validate()?;
    let report = run_study(&plan, jobs)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(Some(&out.join("report.json")), &report)?;
    write_json(Some(&out.join("summary.json")), &report.aggregates)?;
    let mut csv_out = create(&out.join("replicates.csv"))?;
    report.write_csv(&mut csv_out)?;
    csv_out.flush()?;
    log::info!("{} replicates in {:.1}s", report.rows.len(), report.elapsed_seconds);
    Ok(())
}

fn usage(msg: &str) -> anyhow::Error {
    anyhow!(UsageError(msg.to_string()))
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit code and error kind: 1 validation, 2 usage or precondition, 3 numerical.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    use pstarmax::Error as E;
    if let Some(e) = err.downcast_ref::<E>() {
        return match e {
            E::Validation(_) => (1, "validation"),
            E::InsufficientObservations { .. } => (2, "insufficient_observations"),
            E::InvalidInput(_) | E::Dimension(_) | E::Unsupported(_) => (2, "precondition"),
            E::Io(_) | E::Csv(_) | E::Json(_) => (2, "malformed_input"),
            E::Singular { .. } | E::Explosive { .. } | E::Numerical(_) => (3, "numerical"),
        };
    }
    if err.downcast_ref::<csv::Error>().is_some() || err.downcast_ref::<serde_json::Error>().is_some() {
        return (2, "malformed_input");
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return (2, "io");
    }
    (2, "usage")
}

fn report(code: u8, kind: &str, message: String) -> ExitCode {
    let body = serde_json::json!({ "error": kind, "exit_code": code, "message": message });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Weights(WeightsCmd::Build(a)) => weights_build(a)?,
        Command::Weights(WeightsCmd::Validate { file, allow_empty_rows }) => return weights_validate(file, *allow_empty_rows),
        Command::Simulate(a) => simulate(a)?,
        Command::Fit(a) => fit_cmd(a)?,
        Command::Test(a) => test_cmd(a)?,
        Command::Forecast(a) => forecast_cmd(a)?,
        Command::Study(StudyCmd::Run { plan, out, seed, jobs }) => study_run(plan, out, *seed, *jobs)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(2, "usage", e.render().to_string().trim_end().to_string()),
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let (code, kind) = classify(&e);
            report(code, kind, format!("{e:#}"))
        }
    }
}
