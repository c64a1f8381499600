mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use pyeb::experiments::verify_suite;
use pyeb::inference::posterior_mean_and_interval;
use pyeb::sampler::{sample_iid, sample_py_sequence};
use pyeb::{
    forensic_lr, mle_sigma, posterior_sigma, profile_mle, Boundary, EstimateOptions,
    EstimateResult, ExperimentConfig, GridOptions, MPrior, PartitionStats, Population,
    PopulationSpec, PriorSpec, RngStream, SigmaPrior,
};
use serde::Serialize;
use serde_json::json;

use crate::io::{
    emit, envelope, read_bytes, read_labels, read_stats, runtime, stats_path, write_file, Meta,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments: exit status 2.
    Usage(String),
    /// Unreadable or malformed input, failed checks, I/O: exit status 1.
    Runtime(String),
}

#[derive(Parser)]
#[command(
    name = "pyeb",
    version,
    about = "Estimate the Pitman-Yor type parameter from species samples"
)]
struct Cli {
    /// Worker threads for parallel work (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a sample and write it as CSV plus a stats JSON next to it
    Simulate(SimulateArgs),
    /// Maximum likelihood estimate of sigma, at fixed M or profiled over M
    Fit(FitArgs),
    /// Grid posterior of sigma
    Posterior(PosteriorArgs),
    /// Likelihood ratio for a crime-scene profile absent from a database
    Lr(LrArgs),
    /// Run the invariant suite and print one line per check
    Verify(VerifyArgs),
    /// Run a Monte Carlo experiment from a JSON config
    Experiment(ExperimentArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["py", "population"])))]
struct SimulateArgs {
    /// Sample from the Pitman-Yor prediction rule with parameters SIGMA,M
    #[arg(long, value_name = "SIGMA,M", value_parser = parse_pair)]
    py: Option<(f64, f64)>,
    /// Sample iid from a population: inline JSON such as {"kind":"power_law","alpha":2} or a path to a JSON file
    #[arg(long, value_name = "SPEC")]
    population: Option<String>,
    /// Sample size
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sample CSV to write; the stats JSON goes to <stem>.stats.json beside it
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing output files
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Sample CSV, occupancy CSV or stats JSON
    #[arg(long)]
    input: PathBuf,
    /// Fixed precision M
    #[arg(long, default_value_t = 1.0, conflicts_with = "profile")]
    m: f64,
    /// Maximize over M in [0, --m-max] as well
    #[arg(long)]
    profile: bool,
    #[arg(long, default_value_t = 50.0)]
    m_max: f64,
    /// Also report the sandwich standard error
    #[arg(long)]
    sandwich: bool,
    /// Output JSON path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct PriorArgs {
    /// Prior on sigma: `uniform` or `beta:A,B` with A, B >= 1
    #[arg(long, default_value = "uniform", value_parser = parse_sigma_prior)]
    prior: SigmaPrior,
    /// Fixed precision M
    #[arg(long, default_value_t = 1.0, conflicts_with = "m_max")]
    m: f64,
    /// Integrate M over a uniform prior on [0, M_MAX] instead of fixing it
    #[arg(long)]
    m_max: Option<f64>,
}

impl PriorArgs {
    fn spec(&self) -> Result<PriorSpec, CliError> {
        let m_prior = match self.m_max {
            Some(m_max) if m_max > 0.0 && m_max.is_finite() => MPrior::UniformInterval { m_max },
            Some(m_max) => {
                return Err(CliError::Usage(format!(
                    "--m-max must be positive, got {m_max}"
                )))
            }
            None => {
                check_m(self.m)?;
                MPrior::Fixed { value: self.m }
            }
        };
        let spec = PriorSpec {
            sigma_prior: self.prior,
            m_prior,
        };
        spec.validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Args)]
struct PosteriorArgs {
    /// Sample CSV, occupancy CSV or stats JSON
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    prior: PriorArgs,
    /// Credible level of the equal-tailed interval
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Also write the grid as CSV
    #[arg(long)]
    grid_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct LrArgs {
    /// Database of profiles: sample CSV or occupancy CSV
    #[arg(long)]
    db: PathBuf,
    /// Label of the crime-scene profile; it must not occur in the database
    #[arg(long, value_name = "P")]
    crime_profile: String,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Smaller parameter grids; finishes in seconds
    #[arg(long)]
    fast: bool,
    /// Also write the results as JSON
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config replication count
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or("expected two comma-separated numbers")?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_sigma_prior(s: &str) -> Result<SigmaPrior, String> {
    if s == "uniform" {
        return Ok(SigmaPrior::Uniform01);
    }
    match s.strip_prefix("beta:").map(parse_pair) {
        Some(Ok((a, b))) if a >= 1.0 && b >= 1.0 => Ok(SigmaPrior::Beta { a, b }),
        Some(Ok(_)) => Err("beta parameters must both be at least 1".into()),
        Some(Err(e)) => Err(e),
        None => Err("expected `uniform` or `beta:A,B`".into()),
    }
}

fn check_m(m: f64) -> Result<(), CliError> {
    if m >= 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "M must be finite and >= 0, got {m}"
        )))
    }
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let stats_out = stats_path(&a.out);
    io::check_writable(&a.out, a.force)?;
    io::check_writable(&stats_out, a.force)?;
    let mut rng = RngStream::new(a.seed, 0).rng();
    let (labels, config) = match (&a.py, &a.population) {
        (Some((sigma, m)), _) => {
            let (sigma, m) = (*sigma, *m);
            if !(sigma > 0.0 && sigma < 1.0) {
                return Err(CliError::Usage(format!(
                    "sigma must lie in (0,1), got {sigma}"
                )));
            }
            check_m(m)?;
            let seq = sample_py_sequence(sigma, m, a.n, &mut rng).map_err(runtime)?;
            let labels: Vec<String> = seq.iter().map(|b| b.to_string()).collect();
            (
                labels,
                json!({"source": "py", "sigma": sigma, "M": m, "n": a.n}),
            )
        }
        (None, Some(text)) => {
            let raw = if text.trim_start().starts_with('{') {
                text.clone()
            } else {
                std::fs::read_to_string(text)
                    .map_err(|e| CliError::Runtime(format!("cannot read {text}: {e}")))?
            };
            let spec: PopulationSpec = serde_json::from_str(&raw)
                .map_err(|e| CliError::Usage(format!("bad population spec: {e}")))?;
            let pop = Population::from_spec(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
            let counts = sample_iid(&pop, a.n, &mut rng);
            let mut labels = Vec::with_capacity(a.n as usize);
            for (species, c) in counts.rows() {
                labels.extend(std::iter::repeat_n(species, c as usize));
            }
            (
                labels,
                json!({"source": "population", "population": spec, "n": a.n}),
            )
        }
        (None, None) => unreachable!("clap enforces one source"),
    };
    let stats = PartitionStats::from_observations(&labels).map_err(runtime)?;
    let mut csv = Vec::new();
    pyeb::partition::write_sample_csv(&mut csv, &labels).map_err(runtime)?;
    write_file(&a.out, &csv, a.force)?;
    let meta = Meta::new("simulate", config, Some(a.seed));
    write_file(&stats_out, envelope(&meta, &stats).as_bytes(), a.force)?;
    println!(
        "n={} K={} singletons={} largest_block={} ties={}",
        stats.n(),
        stats.k(),
        stats.singletons(),
        stats.sizes()[0],
        stats.has_ties()
    );
    Ok(())
}

#[derive(Serialize)]
struct FitOutput {
    #[serde(flatten)]
    estimate: EstimateResult,
    warnings: Vec<String>,
}

fn boundary_warning(what: &str, b: Boundary) -> Option<String> {
    let msg = match b {
        Boundary::Interior => return None,
        Boundary::LowerSigma => "sigma estimate at 0: the score is negative on the whole interval",
        Boundary::UpperSigma => {
            "sigma estimate at 1: no ties, the likelihood increases up to sigma = 1"
        }
        Boundary::LowerM => "M estimate at 0",
        Boundary::UpperM => "M estimate at the upper limit --m-max",
    };
    Some(format!("{what}: {msg}"))
}

fn fit(a: &FitArgs) -> Result<(), CliError> {
    check_m(a.m)?;
    if !(a.m_max > 0.0 && a.m_max.is_finite()) {
        return Err(CliError::Usage(format!(
            "--m-max must be positive, got {}",
            a.m_max
        )));
    }
    let config = json!({
        "input": a.input, "M": (!a.profile).then_some(a.m), "profile": a.profile,
        "M_max": a.profile.then_some(a.m_max), "sandwich": a.sandwich,
    });
    let mut meta = Meta::new("fit", config, None);
    let stats = read_stats(&a.input, &mut meta)?;
    let opts = EstimateOptions {
        sandwich: a.sandwich,
        ..EstimateOptions::default()
    };
    let estimate = if a.profile {
        profile_mle(&stats, a.m_max, &opts)
    } else {
        mle_sigma(&stats, a.m, &opts)
    }
    .map_err(runtime)?;
    let mut warnings: Vec<String> = boundary_warning("boundary", estimate.boundary)
        .into_iter()
        .collect();
    if let Some(b) = estimate.m_boundary.filter(|&b| b != estimate.boundary) {
        warnings.extend(boundary_warning("M_boundary", b));
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    emit(
        a.out.as_ref(),
        &envelope(&meta, &FitOutput { estimate, warnings }),
        a.force,
    )
}

#[derive(Serialize)]
struct PosteriorOutput {
    n: u64,
    #[serde(rename = "K")]
    k: u64,
    mean: f64,
    sd: f64,
    mode: f64,
    level: f64,
    lower: f64,
    upper: f64,
    #[serde(rename = "M_fixed")]
    m_fixed: Option<f64>,
    grid_nodes: usize,
    degenerate: bool,
    edge_mass: (f64, f64),
}

fn posterior(a: &PosteriorArgs) -> Result<(), CliError> {
    let prior = a.prior.spec()?;
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::Usage(format!(
            "--level must lie in (0,1), got {}",
            a.level
        )));
    }
    let config =
        json!({"input": a.input, "prior": prior, "level": a.level, "grid": GridOptions::default()});
    let mut meta = Meta::new("posterior", config, None);
    let stats = read_stats(&a.input, &mut meta)?;
    let post = posterior_sigma(&stats, &prior, &GridOptions::default()).map_err(runtime)?;
    let summary = posterior_mean_and_interval(&post, a.level).map_err(runtime)?;
    if let Some(p) = &a.grid_out {
        let mut buf = Vec::new();
        post.write_csv(&mut buf).map_err(runtime)?;
        write_file(p, &buf, a.force)?;
    }
    if post.degenerate {
        eprintln!("warning: posterior mass is concentrated in an edge cell of the grid");
    }
    let out = PosteriorOutput {
        n: stats.n(),
        k: stats.k(),
        mean: summary.mean,
        sd: summary.sd,
        mode: post.mode(),
        level: summary.level,
        lower: summary.lower,
        upper: summary.upper,
        m_fixed: post.m_fixed,
        grid_nodes: post.sigma_nodes.len(),
        degenerate: post.degenerate,
        edge_mass: post.edge_mass,
    };
    emit(a.out.as_ref(), &envelope(&meta, &out), a.force)
}

fn lr(a: &LrArgs) -> Result<(), CliError> {
    let prior = a.prior.spec()?;
    let config = json!({"db": a.db, "crime_profile": a.crime_profile, "prior": prior, "grid": GridOptions::default()});
    let mut meta = Meta::new("lr", config, None);
    let mut labels = read_labels(&a.db, &mut meta)?;
    if labels.contains(&a.crime_profile) {
        return Err(CliError::Runtime(format!(
            "profile {:?} already occurs in the database; the ratio is defined for new profiles only",
            a.crime_profile
        )));
    }
    labels.push(a.crime_profile.clone());
    let stats = PartitionStats::from_observations(&labels).map_err(runtime)?;
    let res = forensic_lr(&stats, &prior, &GridOptions::default()).map_err(runtime)?;
    emit(a.out.as_ref(), &envelope(&meta, &res), a.force)
}

fn verify(a: &VerifyArgs) -> Result<bool, CliError> {
    let checks = verify_suite(a.fast).map_err(runtime)?;
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        println!(
            "{:<width$}  {}  worst {:.3e}  bound {:.3e}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.worst,
            c.bound
        );
    }
    let ok = checks.iter().all(|c| c.passed);
    println!(
        "{} of {} checks passed",
        checks.iter().filter(|c| c.passed).count(),
        checks.len()
    );
    if let Some(p) = &a.out {
        let meta = Meta::new("verify", json!({"fast": a.fast}), None);
        write_file(p, envelope(&meta, &checks).as_bytes(), a.force)?;
    }
    Ok(ok)
}

fn experiment(a: &ExperimentArgs) -> Result<bool, CliError> {
    let mut meta = Meta::new("experiment", serde_json::Value::Null, None);
    let bytes = read_bytes(&a.config, &mut meta)?;
    let mut cfg: ExperimentConfig = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Runtime(format!(
            "{}: bad experiment config: {e}",
            a.config.display()
        ))
    })?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    cfg.validate().map_err(runtime)?;
    meta.config = serde_json::to_value(&cfg).map_err(runtime)?;
    meta.seed = Some(cfg.seed);
    let started = std::time::Instant::now();
    let report = pyeb::run_experiment(&cfg).map_err(runtime)?;
    eprintln!(
        "experiment finished in {:.1} s",
        started.elapsed().as_secs_f64()
    );
    for c in &report.checks {
        eprintln!("{:?}: {}", c.check, if c.passed { "PASS" } else { "FAIL" });
    }
    emit(a.out.as_ref(), &envelope(&meta, &report), a.force)?;
    Ok(report.passed)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t as usize)
            .build_global()
            .map_err(runtime)?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Fit(a) => fit(a).map(|_| true),
        Command::Posterior(a) => posterior(a).map(|_| true),
        Command::Lr(a) => lr(a).map(|_| true),
        Command::Verify(a) => verify(a),
        Command::Experiment(a) => experiment(a),
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
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_parsing() {
        assert_eq!(parse_pair("0.5,1").unwrap(), (0.5, 1.0));
        assert_eq!(parse_pair(" 0.25 , 10 ").unwrap(), (0.25, 10.0));
        assert!(parse_pair("0.5").is_err());
        assert!(parse_pair("a,1").is_err());
    }

    #[test]
    fn prior_parsing() {
        assert_eq!(parse_sigma_prior("uniform").unwrap(), SigmaPrior::Uniform01);
        assert_eq!(
            parse_sigma_prior("beta:2,3").unwrap(),
            SigmaPrior::Beta { a: 2.0, b: 3.0 }
        );
        assert!(parse_sigma_prior("beta:0.5,3").is_err());
        assert!(parse_sigma_prior("jeffreys").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
