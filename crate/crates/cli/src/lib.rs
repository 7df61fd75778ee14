//! The `gos` command line.
//!
//! Exit codes: 0 when everything ran and every primary test passed, 1 when a
//! test failed or a run could not complete, 2 for usage and configuration
//! errors. Output files are written to a temporary file in the target
//! directory and renamed into place.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gos_core::config::ExperimentConfig;
use gos_core::engine::simulate_replicate;
use gos_core::export::{
    read_trajectory_csv, replicate_plot_rows, trajectory_plot_rows, write_plot_csv,
    write_replicates_csv, write_trajectory_csv, CidFile, ResultsFile, SCHEMA_VERSION,
};
use gos_core::montecarlo::{cid_test, run_experiment};
use gos_core::stats::{limit_constants, StatSeries};
use gos_core::{FamilySpec, GosError, TestKind};
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_OUT_DIR: &str = "gos-out";
const DEFAULT_HORIZON: usize = 1000;
const DEFAULT_TEST_REPLICATES: usize = 500;
const DEFAULT_SEED: u64 = 0;

#[derive(Parser, Debug)]
#[command(name = "gos", version, about = "Simulate species sampling sequences and test their limit theorems")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Print errors to stderr as a JSON object.
    #[arg(long, global = true)]
    json_errors: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate trajectories and write them as CSV.
    Simulate(RunArgs),
    /// Check the CID identity on all partitions up to --nmax.
    VerifyCid(RunArgs),
    /// Law of large numbers for the number of blocks.
    Lln(RunArgs),
    /// Central limit theorem for the number of blocks.
    CltT(RunArgs),
    /// Central limit theorem for the empirical minus predictive mean.
    CltS(RunArgs),
    /// Central limit theorem for the predictive mean around its limit.
    CltW(RunArgs),
    /// Rebuild the summary table from a results directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short = 'n')]
    horizon: Option<usize>,
    #[arg(long, short = 'R')]
    replicates: Option<usize>,
    /// Output directory.
    #[arg(long, env = "GOS_OUT_DIR")]
    out: Option<PathBuf>,
    /// Family name; replaces the config's family.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    b: Option<u32>,
    #[arg(long)]
    r: Option<u32>,
    /// Weight law, e.g. `uniform:1,3` or `shifted_exp:0.5,2`.
    #[arg(long)]
    weights: Option<String>,
    /// Deterministic r sequence, e.g. `power_decay:1,0.5`.
    #[arg(long)]
    sequence: Option<String>,
    /// Test function id; repeat for several.
    #[arg(long = "function")]
    functions: Vec<String>,
    /// Growth sequence for the block count, `pow:<a>` or `log`.
    #[arg(long)]
    growth: Option<String>,
    /// N, the truncation horizon for the predictive-mean limit.
    #[arg(long)]
    truncation: Option<usize>,
    /// Largest n for verify-cid.
    #[arg(long)]
    nmax: Option<usize>,
    /// Minimum KS / chi-square p-value.
    #[arg(long)]
    ks_threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding results.json.
    #[arg(long, env = "GOS_OUT_DIR")]
    out: Option<PathBuf>,
    /// Same as --out.
    dir: Option<PathBuf>,
}

/// Run the CLI on `argv` (including the program name) and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let json_errors = argv.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            if json_errors {
                emit_json_error("usage", &e.to_string(), EXIT_USAGE);
            } else {
                eprint!("{e}");
            }
            return EXIT_USAGE;
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            if cli.json_errors {
                emit_json_error(e.kind(), &e.to_string(), code);
            } else {
                eprintln!("gos: {e}");
            }
            code
        }
    }
}

fn exit_code(e: &GosError) -> i32 {
    match e {
        GosError::Config(_) | GosError::Parse(_) | GosError::Domain(_) => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

fn emit_json_error(kind: &str, message: &str, code: i32) {
    let v = json!({ "error": { "kind": kind, "message": message.trim_end(), "exit_code": code } });
    eprintln!("{v}");
}

fn canonical_family(name: &str) -> &str {
    match name {
        "two_param_pd" | "pitman_yor" => "two_param_pd_generalized",
        "bm" => "blackwell_macqueen",
        other => other,
    }
}

fn family_overrides(args: &RunArgs) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            m.insert(k.to_string(), v);
        }
    };
    put("theta", args.theta.map(|x| x.to_string()));
    put("alpha", args.alpha.map(|x| x.to_string()));
    put("b", args.b.map(|x| x.to_string()));
    put("r", args.r.map(|x| x.to_string()));
    put("weights", args.weights.clone());
    put("sequence", args.sequence.clone());
    m
}

/// Merge the config file (if any) with command-line overrides.
fn resolve(args: &RunArgs, kind: Option<TestKind>) -> Result<(ExperimentConfig, PathBuf), GosError> {
    let overrides = family_overrides(args);
    let mut config = match (&args.config, &args.family) {
        (Some(path), _) => ExperimentConfig::from_file(path)?,
        (None, Some(_)) => {
            let replicates = match kind {
                Some(k) if k.is_distributional() || k == TestKind::Lln => DEFAULT_TEST_REPLICATES,
                _ => 1,
            };
            let mut c = ExperimentConfig::new(FamilySpec::MarkovChainY, DEFAULT_HORIZON, replicates, DEFAULT_SEED);
            c.seed = None;
            c
        }
        (None, None) => {
            return Err(GosError::Config("either --config or --family is required".into()));
        }
    };
    if let Some(name) = &args.family {
        config.family = FamilySpec::from_params(canonical_family(name), &overrides)?;
    } else if !overrides.is_empty() {
        let mut params = config.family.params();
        params.extend(overrides);
        config.family = FamilySpec::from_params(config.family.name(), &params)?;
    }
    if let Some(s) = args.seed {
        config.seed = Some(s);
    }
    if config.seed.is_none() {
        config.seed = Some(DEFAULT_SEED);
    }
    if let Some(n) = args.horizon {
        config.horizon = n;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if !args.functions.is_empty() {
        config.functions = args.functions.clone();
    }
    if args.growth.is_some() {
        config.growth = args.growth.clone();
    }
    if args.truncation.is_some() {
        config.truncation = args.truncation;
    }
    if let Some(n) = args.nmax {
        config.tests.cid_nmax = n;
    }
    if let Some(t) = args.ks_threshold {
        config.tests.ks_threshold = t;
    }
    if let Some(k) = kind {
        config.tests.run = vec![k];
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    config.validate()?;
    Ok((config, out))
}

/// Write `bytes` to `dir/name` through a temporary file and rename.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, GosError> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| GosError::Io(e.error))?;
    Ok(path)
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut Vec<u8>) -> gos_core::Result<()>) -> Result<PathBuf, GosError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(dir, name, &buf)
}

fn finish(dir: &Path, file: &ResultsFile) -> Result<i32, GosError> {
    write_atomic(dir, "results.json", file.to_json()?.as_bytes())?;
    let table = file.summary_table();
    write_atomic(dir, "summary.txt", table.as_bytes())?;
    print!("{table}");
    Ok(if file.passed { EXIT_OK } else { EXIT_FAILED })
}

fn dispatch(command: &Command) -> Result<i32, GosError> {
    match command {
        Command::Simulate(args) => simulate_cmd(args),
        Command::VerifyCid(args) => verify_cid_cmd(args),
        Command::Lln(args) => experiment_cmd(args, TestKind::Lln, "lln"),
        Command::CltT(args) => experiment_cmd(args, TestKind::CltT, "clt-t"),
        Command::CltS(args) => experiment_cmd(args, TestKind::CltS, "clt-s"),
        Command::CltW(args) => experiment_cmd(args, TestKind::CltW, "clt-w"),
        Command::Report(args) => report_cmd(args),
    }
}

fn simulate_cmd(args: &RunArgs) -> Result<i32, GosError> {
    let (config, dir) = resolve(args, None)?;
    let seed = config.require_seed()?;
    let model = config.family.build()?;
    let functions = config.test_functions()?;
    let growth = config.growth_seq()?;
    let width = config.replicates.saturating_sub(1).to_string().len();
    let mut plot = Vec::new();
    for i in 0..config.replicates as u64 {
        let traj = simulate_replicate(&model, config.horizon, seed, i)?;
        let name = if config.replicates == 1 {
            "trajectory.csv".to_string()
        } else {
            format!("trajectory_{i:0width$}.csv")
        };
        write_with(&dir, &name, |buf| write_trajectory_csv(buf, &traj, &model, &functions))?;
        let series = StatSeries::compute(&traj, &model, &functions, growth.as_ref())?;
        plot.extend(trajectory_plot_rows(&series, i));
    }
    write_with(&dir, "plot.csv", |buf| write_plot_csv(buf, &plot))?;
    let constants: Vec<_> = functions.iter().map(|f| limit_constants(&config.family, f)).collect();
    let doc = json!({ "schema_version": SCHEMA_VERSION, "limit_constants": constants });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_atomic(&dir, "limit_constants.json", text.as_bytes())?;
    let file = ResultsFile::new("simulate", &config, None, Vec::new(), None);
    finish(&dir, &file)
}

fn verify_cid_cmd(args: &RunArgs) -> Result<i32, GosError> {
    let (config, dir) = resolve(args, Some(TestKind::Cid))?;
    let (results, report) = cid_test(&config)?;
    let cid = CidFile {
        schema_version: SCHEMA_VERSION,
        report: report.clone(),
    };
    let mut text = serde_json::to_string_pretty(&cid)?;
    text.push('\n');
    write_atomic(&dir, "cid_report.json", text.as_bytes())?;
    let file = ResultsFile::new("verify-cid", &config, None, results, Some(report));
    finish(&dir, &file)
}

fn experiment_cmd(args: &RunArgs, kind: TestKind, name: &str) -> Result<i32, GosError> {
    let (config, dir) = resolve(args, Some(kind))?;
    let outcome = run_experiment(&config)?;
    for f in &outcome.run.failures {
        eprintln!("gos: replicate {} failed: {}", f.index, f.message);
    }
    write_with(&dir, "replicates.csv", |buf| write_replicates_csv(buf, &outcome.run))?;
    write_with(&dir, "plot.csv", |buf| write_plot_csv(buf, &replicate_plot_rows(&outcome.run)))?;
    let file = ResultsFile::new(name, &config, Some(&outcome.run), outcome.results, outcome.cid_report);
    finish(&dir, &file)
}

fn report_cmd(args: &ReportArgs) -> Result<i32, GosError> {
    let dir = args
        .dir
        .clone()
        .or_else(|| args.out.clone())
        .ok_or_else(|| GosError::Config("report needs a directory (positional or --out)".into()))?;
    let text = std::fs::read_to_string(dir.join("results.json"))
        .map_err(|e| GosError::Config(format!("cannot read {}: {e}", dir.join("results.json").display())))?;
    let file = ResultsFile::from_json(&text)?;
    let table = file.summary_table();
    print!("{table}");
    // trajectories written by `simulate` must still parse
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trajectory") && n.ends_with(".csv"))
        })
        .collect();
    entries.sort();
    for p in entries {
        read_trajectory_csv(&std::fs::read_to_string(&p)?)
            .map_err(|e| GosError::Parse(format!("{}: {e}", p.display())))?;
    }
    match std::fs::read_to_string(dir.join("summary.txt")) {
        Ok(existing) if existing != table => {
            eprintln!("gos: summary.txt differs from the table rebuilt from results.json");
            Ok(EXIT_FAILED)
        }
        _ => Ok(if file.passed { EXIT_OK } else { EXIT_FAILED }),
    }
}
