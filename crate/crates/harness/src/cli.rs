//! `seg` command line: `generate`, `run`, `verify`, `constants`.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad config, failed
//! verification), 2 runtime failure (I/O, divergence, singular systems).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use seg_core::operators::ROOT_TOL;
use seg_core::par::{self, Execution};
use seg_core::quadgame::{generate_game, GameGenConfig, QuadraticGame};
use seg_core::sampling::{ConditionReport, SchemeAnalysis, SchemeConstants, SchemeSpec};
use seg_core::theory::{self, CertConfig, CertMethod, CertificateReport, FiniteSumNoise, IsegProblem};

use crate::config::{resolve, FileConfig, GenerateArgs, Preset};
use crate::experiment::run_experiment;
use crate::output::write_all;

#[derive(Parser, Debug)]
#[command(name = "seg", version, about = "Stochastic extragradient experiments on quadratic games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a quadratic game and write it as a `.qgame` file.
    Generate(GenerateCmd),
    /// Run an experiment preset or a config file; writes one CSV per series.
    Run(RunCmd),
    /// Check the sampling conditions and certify the unified assumption; prints JSON.
    Verify(VerifyCmd),
    /// Print the theory constants for a game and scheme as JSON.
    Constants(ConstantsCmd),
}

#[derive(Args, Debug, Default)]
pub struct GenFlags {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Lower spectrum bound of A and C.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Upper spectrum bound of A and C.
    #[arg(long = "L")]
    pub l: Option<f64>,
    #[arg(long)]
    pub mu_b: Option<f64>,
    #[arg(long = "L-b")]
    pub l_b: Option<f64>,
    /// Game seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bias_scale: Option<f64>,
    /// Rescale so one component has this Lipschitz constant and the rest 1.
    #[arg(long)]
    pub lmax: Option<f64>,
    #[arg(long)]
    pub lmax_index: Option<usize>,
    /// Make this component non-monotone.
    #[arg(long)]
    pub negative_mu: Option<usize>,
}

impl GenFlags {
    fn to_args(&self) -> GenerateArgs {
        GenerateArgs {
            n: self.n,
            d: self.d,
            p: self.p,
            mu: self.mu,
            l: self.l,
            mu_b: self.mu_b,
            l_b: self.l_b,
            seed: self.seed,
            bias_scale: self.bias_scale,
            lmax: self.lmax,
            lmax_index: self.lmax_index,
            negative_mu: self.negative_mu,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenerateCmd {
    #[command(flatten)]
    pub gen: GenFlags,
    /// Start from the small configuration (n = 20, d = p = 10).
    #[arg(long)]
    pub desk: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct RunCmd {
    /// TOML file; flags given here override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Output directory for the CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// n = 20, d = p = 10 and 20 seeds.
    #[arg(long)]
    pub desk: bool,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Standard deviation of the Gaussian initial point.
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Use this `.qgame` file instead of generating.
    #[arg(long)]
    pub game: Option<PathBuf>,
    #[command(flatten)]
    pub gen: GenFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum VerifyMethod {
    Sseg,
    Iseg,
}

#[derive(Args, Debug)]
pub struct VerifyCmd {
    #[arg(long)]
    pub game: PathBuf,
    #[arg(long, default_value = "us:b=1")]
    pub scheme: SchemeSpec,
    #[arg(long, value_enum, default_value = "sseg")]
    pub method: VerifyMethod,
    /// I-SEG batch size.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Base stepsize (defaults to the method's cap).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConstantsCmd {
    #[arg(long)]
    pub game: PathBuf,
    #[arg(long, default_value = "us:b=1")]
    pub scheme: SchemeSpec,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    /// I-SEG batch size for the independent-sample constants.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Initial squared distance for the decreasing-schedule bound.
    #[arg(long)]
    pub r0_sq: Option<f64>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn classify(e: anyhow::Error) -> Failure {
    use seg_core::Error as E;
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<E>() {
            return match core {
                E::Io(_) | E::Diverged { .. } | E::Singular | E::RootTolerance { .. } | E::NotARoot(_) => Failure::Runtime(e),
                _ => Failure::Validation(e),
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return Failure::Validation(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return Failure::Runtime(e);
        }
    }
    Failure::Validation(e)
}

/// Parses `argv` and runs the command, returning the exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(f) => {
            let (Failure::Validation(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            f.code()
        }
    }
}

fn execute(cli: Cli) -> std::result::Result<i32, Failure> {
    match cli.command {
        Command::Generate(c) => generate(c).map_err(classify),
        Command::Run(c) => run(c).map_err(classify),
        Command::Verify(c) => verify(c).map_err(classify),
        Command::Constants(c) => constants(c).map_err(classify),
    }
}

fn generate(c: GenerateCmd) -> Result<i32> {
    let base = if c.desk { GameGenConfig::desk(0) } else { GameGenConfig::default() };
    let cfg = c.gen.to_args().apply(base);
    let game = generate_game(&cfg)?;
    game.save(&c.out)?;
    eprintln!("wrote {} (n = {}, d = {}, p = {})", c.out.display(), game.n, game.d, game.p);
    Ok(0)
}

pub fn run_file_config(c: &RunCmd) -> Result<FileConfig> {
    let file = match &c.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let flags = FileConfig {
        preset: c.preset,
        iterations: c.iterations,
        seeds: c.seeds,
        base_seed: c.base_seed,
        out: c.out.clone(),
        jobs: c.jobs,
        desk: c.desk.then_some(true),
        record_every: c.record_every,
        init_scale: c.init_scale,
        game: c.game.clone(),
        generate: c.gen.to_args(),
        methods: Vec::new(),
    };
    Ok(file.overridden_by(flags))
}

fn run(c: RunCmd) -> Result<i32> {
    let cfg = resolve(&run_file_config(&c)?)?;
    let series = run_experiment(&cfg)?;
    let paths = write_all(&series, &cfg.out)?;
    for p in &paths {
        println!("{}", p.display());
    }
    Ok(0)
}

#[derive(Serialize)]
struct VerifyReport {
    game: String,
    method: String,
    gamma: f64,
    alpha: f64,
    scheme_constants: Option<SchemeConstants>,
    conditions: Option<ConditionReport>,
    iseg_noise: Option<FiniteSumNoise>,
    certificate: CertificateReport,
    passed: bool,
}

fn emit_json<T: Serialize>(value: &T, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut so = std::io::stdout().lock();
            writeln!(so, "{text}")?;
        }
    }
    Ok(())
}

fn verify(c: VerifyCmd) -> Result<i32> {
    let op = QuadraticGame::load(&c.game)?.to_operator()?;
    let x_star = op.solve_root(ROOT_TOL)?;
    let points = theory::probe_points(&x_star, c.points, c.seed);
    let cert_cfg = CertConfig {
        samples: c.samples,
        z: 3.0,
        seed: c.seed,
        exec: Execution::Parallel,
    };
    let report = par::with_jobs(c.jobs, || -> Result<VerifyReport> {
        match c.method {
            VerifyMethod::Sseg => {
                let scheme = c.scheme.build(&op)?;
                let an = SchemeAnalysis::new(&scheme, &op)?;
                let consts = an.constants(&x_star)?;
                let conditions = an.verify_conditions(&x_star)?;
                let gamma = c.gamma.unwrap_or(consts.cap);
                let params = theory::sseg_params(&consts, gamma, c.alpha)?;
                let certificate = theory::certify_unified(&op, &x_star, &CertMethod::Sseg(&an), &params, gamma, c.alpha, &points, &cert_cfg)?;
                Ok(VerifyReport {
                    game: c.game.display().to_string(),
                    method: format!("sseg-{}", c.scheme),
                    gamma,
                    alpha: c.alpha,
                    passed: conditions.all_hold() && certificate.passed(),
                    scheme_constants: Some(consts),
                    conditions: Some(conditions),
                    iseg_noise: None,
                    certificate,
                })
            }
            VerifyMethod::Iseg => {
                let (l, mu) = op.full_constants()?;
                let noise = theory::finite_sum_noise(&op, &x_star)?;
                let prob = IsegProblem {
                    mu: mu.max(0.0),
                    l,
                    delta: noise.delta,
                    sigma_sq: noise.sigma_sq,
                    batch: c.batch,
                };
                let gamma = c.gamma.unwrap_or_else(|| theory::iseg_cap(&prob));
                let params = theory::iseg_params(&prob, gamma, c.alpha)?;
                let certificate = theory::certify_unified(&op, &x_star, &CertMethod::Iseg { batch: c.batch }, &params, gamma, c.alpha, &points, &cert_cfg)?;
                Ok(VerifyReport {
                    game: c.game.display().to_string(),
                    method: format!("iseg(b={})", c.batch),
                    gamma,
                    alpha: c.alpha,
                    passed: certificate.passed(),
                    scheme_constants: None,
                    conditions: None,
                    iseg_noise: Some(noise),
                    certificate,
                })
            }
        }
    })?;
    emit_json(&report, c.out.as_ref())?;
    if report.passed {
        Ok(0)
    } else {
        eprintln!("verification failed");
        Ok(1)
    }
}

fn constants(c: ConstantsCmd) -> Result<i32> {
    let op = QuadraticGame::load(&c.game)?.to_operator()?;
    let x_star = op.solve_root(ROOT_TOL)?;
    let scheme = c.scheme.build(&op)?;
    let an = SchemeAnalysis::new(&scheme, &op)?;
    let report = theory::theory_report(&op, &x_star, &an, c.gamma, c.alpha, c.r0_sq, c.batch)?;
    emit_json(&report, None)?;
    Ok(0)
}
