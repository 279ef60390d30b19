//! Command-line front end: writes plot-ready CSV tables and JSON reports.
//!
//! Exit codes: 0 on success, 2 on invalid configuration, 3 on numerical failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use wshrink::estimator::{weighted_sample_cov, write_matrix_csv};
use wshrink::shrinkage::intensity_table;
use wshrink::simulate::{
    delta_histogram, esd_report, run_prial, sample_noise, true_cov_from_h, ExperimentConfig,
    HistogramTarget, NoiseKind, NoiseSpec,
};
use wshrink::{
    bai_silverstein_h, finite_weights, five_dirac_weight_law, support_bounds, DiracMixture,
    ModelConfig, SolverOptions, WeightLaw,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Lib(#[from] wshrink::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "wshrink", version, about = "Nonlinear shrinkage for weighted sample covariance matrices")]
struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Asymptotic shrinkage intensities and densities on a λ grid
    Intensities(IntensitiesArgs),
    /// Monte Carlo PRIAL of the sample, oracle and asymptotic estimators over N
    Prial(PrialArgs),
    /// Histogram of oracle-weighted sample eigenvalues against the limiting density
    Histogram(HistogramArgs),
    /// Sample eigenvalues of one draw with the limiting spectral density
    Esd(EsdArgs),
    /// Writes one simulated data matrix Y (n × N) or its weighted covariance
    Gen(GenArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model JSON: {"h": {...}, "d": {"kind": ...}, "c": x}
    #[arg(long, conflicts_with_all = ["h", "d", "alpha"])]
    config: Option<PathBuf>,
    /// Population spectrum: bai-silverstein or "loc:mass,loc:mass,..."
    #[arg(long, default_value = "bai-silverstein")]
    h: String,
    /// Weight law: standard, ewma, 5dirac or "loc:mass,..."
    #[arg(long, default_value = "standard")]
    d: String,
    /// EWMA decay α for --d ewma
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Concentration c = n/N (overrides the config file)
    #[arg(long)]
    c: Option<f64>,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Fixed-point residual tolerance
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Fixed-point iteration cap
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// CSV output path (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full report as JSON to this path
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum NoiseArg {
    Gaussian,
    T,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    noise: NoiseArg,
    /// Degrees of freedom for t noise (must exceed 2)
    #[arg(long, default_value_t = 4.0)]
    nu: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    Covariance,
    Precision,
}

#[derive(Args, Debug)]
struct IntensitiesArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[arg(long, default_value_t = 512)]
    grid_size: usize,
    /// Lower end of the λ grid (default: half the lower support bound)
    #[arg(long)]
    lambda_min: Option<f64>,
    /// Upper end of the λ grid (default: 1.1 × the upper support bound)
    #[arg(long)]
    lambda_max: Option<f64>,
}

#[derive(Args, Debug)]
struct PrialArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Comma-separated sample counts N
    #[arg(long = "N", value_delimiter = ',', required = true)]
    big_n: Vec<usize>,
    /// Monte Carlo draws (default 50 for Gaussian noise, 400 for t noise)
    #[arg(long)]
    nmc: Option<usize>,
}

#[derive(Args, Debug)]
struct HistogramArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 60)]
    bins: usize,
    #[arg(long, value_enum, default_value = "covariance")]
    target: TargetArg,
}

#[derive(Args, Debug)]
struct EsdArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 512)]
    grid_size: usize,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Matrix CSV output path (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Write the weighted sample covariance B instead of Y
    #[arg(long)]
    weighted_cov: bool,
}

fn parse_atoms(spec: &str) -> CliResult<DiracMixture> {
    let mut locations = Vec::new();
    let mut masses = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (l, m) = part
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("expected loc:mass, got {part:?}")))?;
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad number {s:?}: {e}")))
        };
        locations.push(num(l)?);
        masses.push(num(m)?);
    }
    Ok(DiracMixture::new(locations, masses)?)
}

fn parse_h(spec: &str) -> CliResult<DiracMixture> {
    match spec {
        "bai-silverstein" => Ok(bai_silverstein_h()),
        _ => parse_atoms(spec),
    }
}

fn parse_d(spec: &str, alpha: f64) -> CliResult<WeightLaw> {
    match spec {
        "standard" => Ok(WeightLaw::Standard),
        "ewma" => Ok(WeightLaw::ewma(alpha)?),
        "5dirac" => Ok(five_dirac_weight_law()),
        _ => Ok(WeightLaw::Mixture(parse_atoms(spec)?)),
    }
}

impl ModelArgs {
    fn model(&self) -> CliResult<ModelConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let model: ModelConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            return Ok(match self.c {
                Some(c) => model.with_c(c)?,
                None => model,
            });
        }
        let c = self
            .c
            .ok_or_else(|| CliError::Config("--c is required without --config".into()))?;
        Ok(ModelConfig::new(parse_h(&self.h)?, parse_d(&self.d, self.alpha)?, c)?)
    }
}

impl SolverArgs {
    fn options(&self) -> CliResult<SolverOptions> {
        let opts = SolverOptions {
            tolerance: self.tol,
            max_iterations: self.max_iter,
            ..SolverOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

impl NoiseArgs {
    fn spec(&self) -> CliResult<NoiseSpec> {
        Ok(match self.noise {
            NoiseArg::Gaussian => NoiseSpec::gaussian(self.seed),
            NoiseArg::T => NoiseSpec::student_t(self.nu, self.seed)?,
        })
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn with_output<F>(out: Option<&Path>, body: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> CliResult<()>,
{
    let io_err = |path: &str, source| CliError::Io {
        path: path.to_string(),
        source,
    };
    match out {
        Some(path) => {
            let mut w = create(path)?;
            body(&mut w)?;
            w.flush().map_err(|e| io_err(&path.display().to_string(), e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            body(&mut w)?;
            w.flush().map_err(|e| io_err("stdout", e))
        }
    }
}

fn write_rows<T: Serialize>(out: Option<&Path>, rows: &[T]) -> CliResult<()> {
    with_output(out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for row in rows {
            csv.serialize(row).map_err(wshrink::Error::from)?;
        }
        csv.flush().map_err(|e| CliError::Io {
            path: "csv output".into(),
            source: e,
        })
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    if let Some(path) = path {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w).and_then(|_| w.flush()).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct IntensityCsvRow {
    lambda: f64,
    f_density: f64,
    h: f64,
    t: f64,
    delta_density: f64,
    psi_density: f64,
    flagged: bool,
    lambda_over_h: f64,
}

fn cmd_intensities(args: &IntensitiesArgs) -> CliResult<()> {
    let model = args.model.model()?;
    model.require_subunit()?;
    let opts = args.solver.options()?;
    if args.grid_size < 2 {
        return Err(CliError::Config("--grid-size must be at least 2".into()));
    }
    let (lo, hi) = support_bounds(&model);
    let a = args.lambda_min.unwrap_or(0.5 * lo);
    let b = args.lambda_max.unwrap_or(1.1 * hi);
    if !(a > 0.0 && b > a) {
        return Err(CliError::Config(format!("invalid λ range [{a}, {b}]")));
    }
    let k = args.grid_size;
    let lambdas: Vec<f64> = (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect();
    let table = intensity_table(&model, &lambdas, &opts)?;
    let rows: Vec<IntensityCsvRow> = table
        .rows()
        .into_iter()
        .map(|r| IntensityCsvRow {
            lambda: r.lambda,
            f_density: r.f_density,
            h: r.h,
            t: r.t,
            delta_density: r.delta_density,
            psi_density: r.psi_density,
            flagged: r.flagged,
            lambda_over_h: r.lambda / r.h,
        })
        .collect();
    write_rows(args.output.out.as_deref(), &rows)?;
    write_json(args.output.json.as_deref(), &table)
}

#[derive(Serialize)]
struct PrialCsvRow {
    big_n: usize,
    n: usize,
    c: f64,
    n_mc: usize,
    cov_sample: f64,
    cov_oracle: f64,
    cov_asymptotic: f64,
    prec_sample: f64,
    prec_oracle: f64,
    prec_asymptotic: f64,
}

fn cmd_prial(args: &PrialArgs) -> CliResult<()> {
    let model = args.model.model()?;
    model.require_subunit()?;
    let opts = args.solver.options()?;
    let noise = args.noise.spec()?;
    let n_mc = args.nmc.unwrap_or(match noise.kind {
        NoiseKind::Gaussian => 50,
        NoiseKind::StudentT { .. } => 400,
    });
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for &big_n in &args.big_n {
        let n = (model.c * big_n as f64).round() as usize;
        let config = ExperimentConfig {
            model: model.clone(),
            n,
            noise,
            n_mc,
            lambda_grid_size: 1,
        };
        let report = run_prial(&config, &opts)?;
        eprintln!("N = {}: {:.2} s", report.big_n, report.seconds);
        rows.push(PrialCsvRow {
            big_n: report.big_n,
            n,
            c: report.c_effective,
            n_mc,
            cov_sample: report.prial_covariance.sample,
            cov_oracle: report.prial_covariance.oracle,
            cov_asymptotic: report.prial_covariance.asymptotic,
            prec_sample: report.prial_precision.sample,
            prec_oracle: report.prial_precision.oracle,
            prec_asymptotic: report.prial_precision.asymptotic,
        });
        reports.push(report);
    }
    write_rows(args.output.out.as_deref(), &rows)?;
    write_json(args.output.json.as_deref(), &reports)
}

fn experiment(model: ModelConfig, n: usize, noise: NoiseSpec, grid: usize) -> ExperimentConfig {
    ExperimentConfig {
        model,
        n,
        noise,
        n_mc: 1,
        lambda_grid_size: grid,
    }
}

fn cmd_histogram(args: &HistogramArgs) -> CliResult<()> {
    let model = args.model.model()?;
    let opts = args.solver.options()?;
    let config = experiment(model, args.n, args.noise.spec()?, 1);
    let target = match args.target {
        TargetArg::Covariance => HistogramTarget::Covariance,
        TargetArg::Precision => HistogramTarget::Precision,
    };
    let report = delta_histogram(&config, args.bins, target, &opts)?;
    eprintln!(
        "relative sup deviation {:.4}, weight outside support {:.4}",
        report.relative_deviation(),
        report.out_of_support_mass
    );
    write_rows(args.output.out.as_deref(), &report.bins)?;
    write_json(args.output.json.as_deref(), &report)
}

#[derive(Serialize)]
struct EsdCsvRow {
    kind: &'static str,
    lambda: f64,
    f_density: Option<f64>,
}

fn cmd_esd(args: &EsdArgs) -> CliResult<()> {
    let model = args.model.model()?;
    let opts = args.solver.options()?;
    let config = experiment(model, args.n, args.noise.spec()?, args.grid_size);
    let report = esd_report(&config, &opts)?;
    eprintln!("Kolmogorov distance {:.4}", report.ks_distance);
    let rows: Vec<EsdCsvRow> = report
        .eigenvalues
        .iter()
        .map(|&lambda| EsdCsvRow {
            kind: "sample",
            lambda,
            f_density: None,
        })
        .chain(report.grid.iter().map(|p| EsdCsvRow {
            kind: "theory",
            lambda: p.lambda,
            f_density: Some(p.f_density),
        }))
        .collect();
    write_rows(args.output.out.as_deref(), &rows)?;
    write_json(args.output.json.as_deref(), &report)
}

fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    let model = args.model.model()?;
    let config = experiment(model, args.n, args.noise.spec()?, 1);
    config.validate()?;
    let big_n = config.big_n();
    let tau = true_cov_from_h(&config.model.h, config.n);
    let z = sample_noise(&config.noise, config.n, big_n)?;
    let y = faer::Mat::from_fn(config.n, big_n, |i, j| tau[i].sqrt() * z[(i, j)]);
    let out = if args.weighted_cov {
        let w = finite_weights(&config.model.d, big_n)?;
        weighted_sample_cov(y.as_ref(), &w)?.into_inner()
    } else {
        y
    };
    with_output(args.out.as_deref(), |w| Ok(write_matrix_csv(out.as_ref(), w)?))
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Intensities(a) => cmd_intensities(a),
        Command::Prial(a) => cmd_prial(a),
        Command::Histogram(a) => cmd_histogram(a),
        Command::Esd(a) => cmd_esd(a),
        Command::Gen(a) => cmd_gen(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
