use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use regimeswitch::bayes::{lemma1_bound, BoundExponent, BoundMode, BoundOptions, Priors};
use regimeswitch::estimator::{fit_best, Algorithm, FitResult, SaemConfig};
use regimeswitch::io::{read_series, write_selection, write_series, write_trajectory};
use regimeswitch::selection::{lrt_test, select_states_with, DimFormula};
use regimeswitch::{simulate, Error, HiddenPath, InitialLaw, ModelSpec, ObservationSeries, RegimeKind};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "regimeswitch", version, about = "Fit, select and test autoregressive models with Markov regime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a series from a model file
    Simulate(SimulateArgs),
    /// Estimate a model with a fixed number of states
    Fit(FitArgs),
    /// Choose the number of states by penalized likelihood
    Select(SelectArgs),
    /// Likelihood-ratio test of zero slopes
    Lrt(LrtArgs),
    /// Evaluate both sides of the marginal-likelihood bound
    Bound(BoundArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Hmm,
    Ar,
}

impl From<KindArg> for RegimeKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Hmm => RegimeKind::Hmm,
            KindArg::Ar => RegimeKind::LinearAr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Saem,
    Em,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Saem => Algorithm::Saem,
            AlgoArg::Em => Algorithm::Em,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DimArg {
    Stated,
    Table2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Marginal,
    Pathwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExponentArg {
    /// (N + v0)/2
    NPlusV0,
    /// (1 + v0)/2
    OnePlusV0,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model JSON
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    y0: f64,
    /// Initial state (1-based); drawn from the stationary law when omitted
    #[arg(long)]
    x1: Option<usize>,
    /// Omit the hidden-state column
    #[arg(long)]
    no_states: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitOptions {
    /// Series CSV
    #[arg(long)]
    series: PathBuf,
    /// Fit configuration JSON; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration count; burn-in becomes half of it
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: FitOptions,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_enum, default_value = "saem")]
    algo: AlgoArg,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Fit result JSON
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration parameter CSV
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    common: FitOptions,
    #[arg(long)]
    m_max: usize,
    #[arg(long, value_enum, default_value = "saem")]
    algo: AlgoArg,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, value_enum, default_value = "stated")]
    dim_formula: DimArg,
    /// Criterion table CSV
    #[arg(long)]
    out: PathBuf,
    /// JSON of the selected model
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct LrtArgs {
    #[command(flatten)]
    common: FitOptions,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    /// Series CSVs, one instance each; the `x` column supplies the path
    #[arg(long, required = true, num_args = 1..)]
    series: Vec<PathBuf>,
    /// Model JSON supplying ψ
    #[arg(long)]
    model: PathBuf,
    /// Design used for the marginal (defaults to the model's kind)
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long, value_enum, default_value = "marginal")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "n-plus-v0")]
    exponent: ExponentArg,
    /// Initial state (1-based) when a series has no `x` column
    #[arg(long, default_value_t = 1)]
    x1: usize,
    /// Prior covariance scale (Σ = scale · I)
    #[arg(long, default_value_t = 10.0)]
    sigma_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    u0: f64,
    #[arg(long, default_value_t = 1.0)]
    v0: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Lib(Error),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_input_error() => EXIT_DATA,
            CliError::Lib(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_DATA,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Lib(Error::InvalidInput(_)) => "invalid_input",
            CliError::Lib(Error::Format(_)) => "format",
            CliError::Lib(Error::Domain(_)) => "domain",
            CliError::Lib(Error::SizeLimit { .. }) => "size_limit",
            CliError::Lib(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Lib(e) => e.to_string(),
            CliError::Io(s) => s.clone(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Writes through a temporary file in the target directory and renames it
/// into place only after the writer succeeds.
fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        f(&mut w)?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::io(path, e))?;
        writeln!(w).map_err(|e| CliError::io(path, e))
    })
}

fn load_series(path: &Path) -> CliResult<(ObservationSeries, Option<HiddenPath>)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_series(file)?)
}

fn load_model(path: &Path) -> CliResult<ModelSpec> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| CliError::Lib(Error::Format(format!("{}: {e}", path.display()))))
}

fn load_config(opts: &FitOptions) -> CliResult<SaemConfig> {
    let mut cfg = match &opts.config {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_reader(std::io::BufReader::new(file))
                .map_err(|e| CliError::Lib(Error::Format(format!("{}: {e}", path.display()))))?
        }
        None => SaemConfig::default(),
    };
    if let Some(k) = opts.kind {
        cfg.kind = k.into();
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(t) = opts.iterations {
        cfg = cfg.with_iterations(t);
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct FitReport<'a> {
    schema: u32,
    algo: Algorithm,
    restarts: usize,
    #[serde(flatten)]
    fit: &'a FitResult,
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let spec = load_model(&a.model)?;
    let law = match a.x1 {
        None => InitialLaw::Stationary,
        Some(0) => return Err(Error::InvalidInput("states are numbered from 1".into()).into()),
        Some(i) => InitialLaw::Fixed(i - 1),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (path, series) = simulate(&spec, a.n, a.y0, law, &mut rng)?;
    let states = (!a.no_states).then_some(&path);
    write_atomic(&a.out, |w| Ok(write_series(w, &series, states)?))
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let (series, _) = load_series(&a.common.series)?;
    let mut cfg = load_config(&a.common)?;
    if let Some(m) = a.m {
        cfg.m = m;
    }
    let fit = fit_best(&series, &cfg, a.restarts, a.algo.into())?;
    if let Some(path) = &a.trajectory {
        write_atomic(path, |w| Ok(write_trajectory(w, cfg.m, &fit.trajectory)?))?;
    }
    write_json(
        &a.out,
        &FitReport {
            schema: 1,
            algo: a.algo.into(),
            restarts: a.restarts.max(1),
            fit: &fit,
        },
    )
}

fn cmd_select(a: SelectArgs) -> CliResult<()> {
    let (series, _) = load_series(&a.common.series)?;
    let cfg = load_config(&a.common)?;
    let formula = match a.dim_formula {
        DimArg::Stated => DimFormula::Stated,
        DimArg::Table2 => DimFormula::Table2,
    };
    let result = select_states_with(&series, a.m_max, &cfg, a.restarts, formula, a.algo.into())?;
    if let Some(path) = &a.model_out {
        let chosen = result
            .chosen()
            .ok_or_else(|| Error::InvalidInput("selected candidate has no fit".into()))?;
        write_json(path, &chosen.spec_hat)?;
    }
    write_atomic(&a.out, |w| Ok(write_selection(w, &result)?))
}

fn cmd_lrt(a: LrtArgs) -> CliResult<()> {
    let (series, _) = load_series(&a.common.series)?;
    let cfg = load_config(&a.common)?;
    let outcome = lrt_test(&series, a.m, a.alpha, &cfg, a.restarts)?;
    write_json(&a.out, &outcome.result)
}

fn cmd_bound(a: BoundArgs) -> CliResult<()> {
    let spec = load_model(&a.model)?;
    let m = spec.num_states();
    let kind = a.kind.map(RegimeKind::from).unwrap_or(spec.kind());
    let mut priors = Priors::with_scale(m, kind, a.sigma_scale);
    priors.u0 = a.u0;
    priors.v0 = a.v0;
    let opts = BoundOptions {
        mode: match a.mode {
            ModeArg::Marginal => BoundMode::Marginal,
            ModeArg::Pathwise => BoundMode::PathWise,
        },
        exponent: match a.exponent {
            ExponentArg::NPlusV0 => BoundExponent::NPlusV0,
            ExponentArg::OnePlusV0 => BoundExponent::OnePlusV0,
        },
    };
    if a.x1 == 0 || a.x1 > m {
        return Err(Error::InvalidInput(format!("x1 must be in 1..={m}")).into());
    }
    let mut rows = Vec::with_capacity(a.series.len());
    for file in &a.series {
        let (series, path) = load_series(file)?;
        let path = match (path, opts.mode) {
            (Some(p), _) => p,
            (None, BoundMode::Marginal) => HiddenPath(vec![a.x1 - 1; series.len()]),
            (None, BoundMode::PathWise) => {
                return Err(Error::Format(format!("{}: path-wise mode needs an `x` column", file.display())).into())
            }
        };
        rows.push((series.len(), lemma1_bound(&series, &path, &priors, &spec, kind, opts)?));
    }
    write_atomic(&a.out, |w| {
        let err = |e: std::io::Error| CliError::io(&a.out, e);
        writeln!(w, "instance,n,lhs,rhs,holds").map_err(err)?;
        for (k, (n, b)) in rows.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", k + 1, n, b.lhs, b.rhs, b.holds()).map_err(err)?;
        }
        Ok(())
    })
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("REGIMESWITCH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Lib(Error::InvalidInput(format!("REGIMESWITCH_THREADS={raw:?} is not a count"))))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Select(a) => cmd_select(a),
        Command::Lrt(a) => cmd_lrt(a),
        Command::Bound(a) => cmd_bound(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({
                "error": e.kind(),
                "message": e.message(),
                "exit_code": e.code(),
            });
            eprintln!("{body}");
            ExitCode::from(e.code())
        }
    }
}
