//! Command-line front end.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::impute::{impute, Strategy};
use crate::io;
use crate::metrics::build_table;
use crate::pooling::{analysis_fits, complete_case_fit, pool_fits, pooled_fit, PooledEstimate};
use crate::simgen::{run_study, Method, StudyDiagnostics};
use crate::tabular::ModelFormula;

/// Environment variable naming the worker-thread count.
pub const THREADS_ENV: &str = "INTERACTION_MI_THREADS";

#[derive(Debug, Parser)]
#[command(name = "interaction-mi", version, about = "Multiple imputation with a partially observed interaction")]
pub struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the simulation study and write replicate and performance tables.
    Simulate(SimulateArgs),
    /// Write m completed copies of a CSV.
    Impute(ImputeArgs),
    /// Impute, fit and pool a CSV with several methods.
    Analyze(AnalyzeArgs),
    /// Pool analysis fits over already completed CSVs.
    Pool(PoolArgs),
    /// Recompute performance tables from a replicates file.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long = "iter")]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub sia_groups: Option<usize>,
    #[arg(long)]
    pub moderator: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Comma-separated mechanisms: null,1,...,6.
    #[arg(long, value_delimiter = ',')]
    pub dgm: Vec<String>,
    #[arg(long)]
    pub n_sim: Option<usize>,
    #[arg(long)]
    pub n_obs: Option<usize>,
    /// Comma-separated: passive,jav,sia,smcfcs,cc.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Rows in the calibration probe sample.
    #[arg(long)]
    pub n_probe: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub formula: Option<String>,
    #[arg(long, default_value = "smcfcs")]
    pub method: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub formula: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Completed CSV files, one per imputation.
    #[arg(long, num_args = 1.., required = true)]
    pub imputed: Vec<PathBuf>,
    #[arg(long)]
    pub formula: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub replicates: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure class, mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit 2.
    Usage(Error),
    /// Computation or IO failure: exit 1.
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "usage error: {e}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

/// Successful run; `partial` lists per-cell failures that still produced output.
#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub partial: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        u8::from(!self.partial.is_empty())
    }
}

fn usage<T>(r: Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(CliError::Usage)
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, CliError> {
    r.map_err(CliError::Runtime)
}

fn env_threads() -> std::result::Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            CliError::Usage(Error::Config {
                key: THREADS_ENV.into(),
                message: format!("not a count: `{v}`"),
            })
        }),
        Err(_) => Ok(None),
    }
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = c.m {
        cfg.m = v;
    }
    if let Some(v) = c.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = c.threads {
        cfg.threads = Some(v);
    }
    if let Some(v) = c.sia_groups {
        cfg.sia_groups = v;
    }
    if let Some(v) = &c.moderator {
        cfg.moderator = Some(v.clone());
    }
}

/// Settings after layering defaults, the config file, the environment and flags.
pub fn effective_config(cli: &Cli) -> std::result::Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => usage(RunConfig::load(p))?,
        None => RunConfig::default(),
    };
    if cfg.threads.is_none() {
        cfg.threads = env_threads()?;
    }
    match &cli.command {
        Command::Simulate(a) => {
            if !a.dgm.is_empty() {
                cfg.dgms = a.dgm.clone();
            }
            if !a.methods.is_empty() {
                cfg.methods = a.methods.clone();
            }
            if let Some(v) = a.n_sim {
                cfg.n_sim = v;
            }
            if let Some(v) = a.n_obs {
                cfg.n_obs = v;
            }
            if let Some(v) = a.n_probe {
                cfg.n_probe = v;
            }
            apply_common(&mut cfg, &a.common);
        }
        Command::Impute(a) => {
            cfg.data = a.data.clone().or(cfg.data);
            cfg.formula = a.formula.clone().or(cfg.formula);
            cfg.methods = vec![a.method.clone()];
            apply_common(&mut cfg, &a.common);
        }
        Command::Analyze(a) => {
            cfg.data = a.data.clone().or(cfg.data);
            cfg.formula = a.formula.clone().or(cfg.formula);
            if !a.methods.is_empty() {
                cfg.methods = a.methods.clone();
            }
            apply_common(&mut cfg, &a.common);
        }
        Command::Pool(a) => {
            cfg.formula = a.formula.clone().or(cfg.formula);
            if let Some(o) = &a.out {
                cfg.out = o.clone();
            }
        }
        Command::Report(a) => {
            if let Some(o) = &a.out {
                cfg.out = o.clone();
            }
        }
    }
    usage(cfg.validate())?;
    Ok(cfg)
}

fn required<'a, T>(v: &'a Option<T>, key: &str) -> std::result::Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| {
        CliError::Usage(Error::Config {
            key: key.into(),
            message: "required".into(),
        })
    })
}

fn formula_of(cfg: &RunConfig) -> std::result::Result<ModelFormula, CliError> {
    usage(ModelFormula::parse(required(&cfg.formula, "formula")?))
}

fn create(path: &Path, out: &mut Outcome) -> std::result::Result<File, CliError> {
    out.written.push(path.to_path_buf());
    runtime(File::create(path).map_err(Error::from))
}

fn echo_config(cfg: &RunConfig, out: &mut Outcome) -> std::result::Result<(), CliError> {
    runtime(fs::create_dir_all(&cfg.out).map_err(Error::from))?;
    let path = cfg.out.join("config.toml");
    runtime(fs::write(&path, cfg.to_toml()).map_err(Error::from))?;
    out.written.push(path);
    Ok(())
}

fn diagnostics_text(d: &StudyDiagnostics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "max_converged_score = {:e}", d.max_converged_score);
    let _ = writeln!(s, "converged_fits = {}", d.converged_fits);
    let _ = writeln!(s, "nonconverged_fits = {}", d.nonconverged_fits);
    let _ = writeln!(s, "separation_flags = {}", d.separation_flags);
    let _ = writeln!(s, "rejection_fallbacks = {}", d.rejection_fallbacks);
    let _ = writeln!(s, "skipped_iterations = {}", d.skipped_iterations);
    let _ = writeln!(s, "method_failures = {}", d.failures.len());
    for (dgm, a0) in &d.alpha0 {
        let _ = writeln!(s, "alpha0_dgm_{dgm} = {a0}");
    }
    s
}

fn write_report_files(
    records: &[crate::simgen::ReplicateRecord],
    dir: &Path,
    out: &mut Outcome,
) -> std::result::Result<(), CliError> {
    let rows = runtime(build_table(records))?;
    runtime(io::write_performance(&rows, create(&dir.join("performance.csv"), out)?))?;
    runtime(io::write_wide_table(&rows, create(&dir.join("summary_wide.csv"), out)?))?;
    for (name, term, measure) in io::figure_series() {
        runtime(io::write_figure(&rows, term, measure, create(&dir.join(name), out)?))?;
    }
    Ok(())
}

fn simulate(cfg: &RunConfig) -> std::result::Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let study = usage(cfg.study())?;
    echo_config(cfg, &mut out)?;
    let res = runtime(run_study::<f64>(&study))?;
    runtime(io::write_replicates(&res.records, create(&cfg.out.join("replicates.csv"), &mut out)?))?;
    write_report_files(&res.records, &cfg.out, &mut out)?;
    let diag_path = cfg.out.join("diagnostics.txt");
    runtime(fs::write(&diag_path, diagnostics_text(&res.diagnostics)).map_err(Error::from))?;
    out.written.push(diag_path);
    if !res.diagnostics.failures.is_empty() {
        let mut log = String::from("dgm,replicate,method,message\n");
        for f in &res.diagnostics.failures {
            let _ = writeln!(log, "{},{},{},\"{}\"", f.dgm, f.replicate, f.method, f.message.replace('"', "'"));
            out.partial.push(format!("dgm {} replicate {} method {}: {}", f.dgm, f.replicate, f.method, f.message));
        }
        let p = cfg.out.join("failures.csv");
        runtime(fs::write(&p, log).map_err(Error::from))?;
        out.written.push(p);
    }
    Ok(out)
}

fn single_strategy(cfg: &RunConfig) -> std::result::Result<Strategy, CliError> {
    match usage(cfg.parsed_methods())?.as_slice() {
        [m] => m.strategy().ok_or_else(|| {
            CliError::Usage(Error::Config {
                key: "method".into(),
                message: "complete-case analysis does not impute".into(),
            })
        }),
        _ => Err(CliError::Usage(Error::Config {
            key: "method".into(),
            message: "exactly one method is required".into(),
        })),
    }
}

fn impute_cmd(cfg: &RunConfig) -> std::result::Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let formula = formula_of(cfg)?;
    let strategy = single_strategy(cfg)?;
    let data = runtime(io::read_csv::<f64>(required(&cfg.data, "data")?, &formula))?;
    echo_config(cfg, &mut out)?;
    let set = runtime(impute(&data, &formula, &cfg.imputation(strategy)))?;
    for (l, d) in set.datasets.iter().enumerate() {
        let p = cfg.out.join(format!("imputed_{:02}.csv", l + 1));
        runtime(io::write_csv(d, create(&p, &mut out)?))?;
    }
    Ok(out)
}

fn analyze(cfg: &RunConfig) -> std::result::Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let formula = formula_of(cfg)?;
    let methods = usage(cfg.parsed_methods())?;
    let data = runtime(io::read_csv::<f64>(required(&cfg.data, "data")?, &formula))?;
    if let Ok(j) = data.index_of(&formula.outcome) {
        if !data.missing_rows(j).is_empty() {
            return Err(CliError::Runtime(Error::InvalidDataset(format!(
                "outcome `{}` has missing values",
                formula.outcome
            ))));
        }
    }
    echo_config(cfg, &mut out)?;
    let mut rows: Vec<(String, Vec<PooledEstimate<f64>>)> = Vec::new();
    for m in methods {
        let est = match m.strategy() {
            None => complete_case_fit(&data, &formula),
            Some(s) => impute(&data, &formula, &cfg.imputation(s)).and_then(|set| pooled_fit(&set, &formula)),
        };
        match est {
            Ok(e) => rows.push((m.to_string(), e)),
            Err(e) => out.partial.push(format!("{m}: {e}")),
        }
    }
    runtime(io::write_pooled(&rows, create(&cfg.out.join("analysis.csv"), &mut out)?))?;
    Ok(out)
}

fn pool_cmd(cfg: &RunConfig, files: &[PathBuf]) -> std::result::Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let formula = formula_of(cfg)?;
    let datasets = files
        .iter()
        .map(|p| io::read_csv::<f64>(p, &formula))
        .collect::<Result<Vec<_>>>();
    let datasets = runtime(datasets)?;
    if let Some((k, _)) = datasets.iter().enumerate().find(|(_, d)| !d.is_fully_observed()) {
        return Err(CliError::Runtime(Error::InvalidDataset(format!(
            "{} has missing values",
            files[k].display()
        ))));
    }
    echo_config(cfg, &mut out)?;
    let pooled = runtime(analysis_fits(&datasets, &formula).and_then(|f| pool_fits(&f, &formula.term_names())))?;
    runtime(io::write_pooled(&[("pooled".to_string(), pooled)], create(&cfg.out.join("pooled.csv"), &mut out)?))?;
    Ok(out)
}

fn report(cfg: &RunConfig, replicates: &Path) -> std::result::Result<Outcome, CliError> {
    let mut out = Outcome::default();
    let records = runtime(File::open(replicates).map_err(Error::from).and_then(io::read_replicates))?;
    runtime(fs::create_dir_all(&cfg.out).map_err(Error::from))?;
    write_report_files(&records, &cfg.out, &mut out)?;
    Ok(out)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> std::result::Result<Outcome, CliError> {
    let cfg = effective_config(cli)?;
    let go = || match &cli.command {
        Command::Simulate(_) => simulate(&cfg),
        Command::Impute(_) => impute_cmd(&cfg),
        Command::Analyze(_) => analyze(&cfg),
        Command::Pool(a) => pool_cmd(&cfg, &a.imputed),
        Command::Report(a) => report(&cfg, &a.replicates),
    };
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Usage(Error::InvalidConfig(e.to_string())))?
            .install(go),
        None => go(),
    }
}

/// All method names accepted on the command line.
pub fn method_names() -> Vec<&'static str> {
    Method::ALL.iter().map(|m| m.as_str()).collect()
}
