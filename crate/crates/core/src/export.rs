//! File formats for trajectories, replicate summaries, plot data and test
//! results.
//!
//! Every file starts with a schema line (`# <kind> v<version>` for CSV, a
//! `schema_version` field for JSON). Floats in CSV use `{:.16e}`, which is
//! 17 significant digits and round-trips `f64` exactly.
//!
//! Trajectory CSV, one row per step `k = 1..=n`:
//!
//! | column   | value                                            |
//! |----------|--------------------------------------------------|
//! | step     | `k`                                              |
//! | tag      | `X_k`                                            |
//! | y        | `Y_k`                                            |
//! | L        | blocks after step `k`                            |
//! | r        | `r_{k-1}`, the probability that step `k` is new  |
//! | p_diag   | `p_{k,k}` (GOS rules; `NaN` otherwise)            |
//! | U        | 1 if step `k` opened a block                     |
//! | M_<f>    | `M_k^f` for each test function, then            |
//! | V_<f>    | `V_k^f`                                          |

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cid::CidReport;
use crate::config::ExperimentConfig;
use crate::engine::{Model, Trajectory};
use crate::error::{GosError, Result};
use crate::measure::TestFunction;
use crate::montecarlo::{ReplicateFailure, ReplicateRun, Role, Status, TestResult};
use crate::stats::{empirical_mean, predictive_mean, StatSeries};

pub const SCHEMA_VERSION: u32 = 1;
pub const TRAJECTORY_SCHEMA: &str = "# gos-trajectory v1";
pub const REPLICATES_SCHEMA: &str = "# gos-replicates v1";
pub const PLOT_SCHEMA: &str = "# gos-plot v1";
pub const SUMMARY_SCHEMA: &str = "# gos-summary v1";

/// Fixed leading columns of the trajectory CSV.
pub const TRAJECTORY_COLUMNS: [&str; 7] = ["step", "tag", "y", "L", "r", "p_diag", "U"];

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn io(e: std::io::Error) -> GosError {
    GosError::Io(e)
}

pub fn write_trajectory_csv<W: Write>(
    out: &mut W,
    traj: &Trajectory,
    model: &Model,
    functions: &[TestFunction],
) -> Result<()> {
    let mut series = Vec::with_capacity(functions.len());
    for f in functions {
        series.push((empirical_mean(traj, f)?, predictive_mean(traj, model, f)?));
    }
    let gos = model.gos().is_some();
    let mut header = TRAJECTORY_COLUMNS.join(",");
    for f in functions {
        write!(header, ",M_{}", f.id()).unwrap();
    }
    for f in functions {
        write!(header, ",V_{}", f.id()).unwrap();
    }
    writeln!(out, "{TRAJECTORY_SCHEMA}").map_err(io)?;
    writeln!(out, "{header}").map_err(io)?;
    let mut blocks = 0usize;
    let mut line = String::new();
    for k in 1..=traj.len() {
        let new = traj.new_species()[k - 1];
        blocks += new as usize;
        line.clear();
        let p_diag = if gos { traj.p_diag(k) } else { f64::NAN };
        write!(
            line,
            "{k},{},{},{blocks},{},{},{}",
            num(traj.tags()[k - 1]),
            num(traj.weights()[k - 1]),
            num(traj.r(k - 1)),
            num(p_diag),
            new as u8
        )
        .unwrap();
        for (m, _) in &series {
            write!(line, ",{}", num(m[k - 1])).unwrap();
        }
        for (_, v) in &series {
            write!(line, ",{}", num(v[k])).unwrap();
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

/// A trajectory CSV read back as a numeric table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Test-function ids, from the `M_<id>` columns.
    pub fn function_ids(&self) -> Vec<&str> {
        self.columns.iter().filter_map(|c| c.strip_prefix("M_")).collect()
    }
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> GosError {
    GosError::parse(format!("line {line}: {msg}"))
}

/// Parse and validate a trajectory CSV.
pub fn read_trajectory_csv(text: &str) -> Result<TrajectoryTable> {
    let mut lines = text.lines();
    if lines.next() != Some(TRAJECTORY_SCHEMA) {
        return Err(parse_err(1, format!("expected schema line '{TRAJECTORY_SCHEMA}'")));
    }
    let header = lines.next().ok_or_else(|| parse_err(2, "missing header"))?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    if columns.len() < TRAJECTORY_COLUMNS.len() || columns[..TRAJECTORY_COLUMNS.len()] != TRAJECTORY_COLUMNS {
        return Err(parse_err(2, format!("header must start with {}", TRAJECTORY_COLUMNS.join(","))));
    }
    let extra = &columns[TRAJECTORY_COLUMNS.len()..];
    let half = extra.len() / 2;
    if !extra.len().is_multiple_of(2)
        || !extra[..half].iter().all(|c| c.starts_with("M_"))
        || extra[..half]
            .iter()
            .zip(&extra[half..])
            .any(|(m, v)| v.strip_prefix("V_") != m.strip_prefix("M_"))
    {
        return Err(parse_err(2, "function columns must be M_<id>... then matching V_<id>..."));
    }
    let mut rows = Vec::new();
    let mut prev_blocks = 0.0;
    for (i, l) in lines.enumerate() {
        let lineno = i + 3;
        let row: Vec<f64> = l
            .split(',')
            .map(|c| c.parse::<f64>().map_err(|e| parse_err(lineno, format!("'{c}': {e}"))))
            .collect::<Result<_>>()?;
        if row.len() != columns.len() {
            return Err(parse_err(lineno, format!("{} fields, expected {}", row.len(), columns.len())));
        }
        if row[0] != (i + 1) as f64 {
            return Err(parse_err(lineno, format!("step {} out of sequence", row[0])));
        }
        let u = row[6];
        if u != 0.0 && u != 1.0 {
            return Err(parse_err(lineno, "U must be 0 or 1"));
        }
        if row[3] != prev_blocks + u {
            return Err(parse_err(lineno, "L is not the running count of U"));
        }
        if !(row[4] > 0.0 && row[4] <= 1.0) {
            return Err(parse_err(lineno, "r must lie in (0, 1]"));
        }
        prev_blocks = row[3];
        rows.push(row);
    }
    Ok(TrajectoryTable { columns, rows })
}

/// Checkpoints `1, 2, 4, …` up to `n`, with `n` always included.
pub fn checkpoints(n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |k| k.checked_mul(2))
        .take_while(|&k| k < n)
        .collect();
    out.push(n);
    out
}

/// Tidy plot rows `(statistic, n, replicate, value)` for one trajectory at
/// the [`checkpoints`].
pub fn trajectory_plot_rows(
    series: &StatSeries,
    replicate: u64,
) -> Vec<(String, usize, u64, f64)> {
    let mut rows = Vec::new();
    for n in checkpoints(series.n) {
        rows.push(("L".into(), n, replicate, series.blocks[n - 1] as f64));
        if let Some(p) = &series.partition {
            rows.push(("L_over_h".into(), n, replicate, p.l_over_h[n - 1]));
            rows.push(("T".into(), n, replicate, p.t[n - 1]));
            rows.push(("sigma2".into(), n, replicate, p.sigma2[n - 1]));
        }
        for f in &series.functions {
            rows.push((format!("M:{}", f.id), n, replicate, f.m[n - 1]));
            rows.push((format!("V:{}", f.id), n, replicate, f.v[n]));
            rows.push((format!("S:{}", f.id), n, replicate, f.s[n - 1]));
            rows.push((format!("U:{}", f.id), n, replicate, f.u[n - 1]));
        }
    }
    rows
}

/// Tidy plot rows of the terminal replicate statistics.
pub fn replicate_plot_rows(run: &ReplicateRun) -> Vec<(String, usize, u64, f64)> {
    let mut rows = Vec::new();
    for s in &run.summaries {
        let n = s.horizon;
        rows.push(("L".into(), n, s.index, s.blocks as f64));
        if let Some(p) = &s.partition {
            rows.push(("L_over_h".into(), n, s.index, p.l_over_h[2]));
            rows.push(("T".into(), n, s.index, p.t));
            rows.push(("sigma2".into(), n, s.index, p.sigma2));
        }
        for f in &s.functions {
            let mut push = |name: &str, v: Option<f64>| {
                if let Some(v) = v {
                    rows.push((format!("{name}:{}", f.id), n, s.index, v));
                }
            };
            push("M", Some(f.m));
            push("V", Some(f.v));
            push("S", f.s);
            push("U", f.u);
            push("W", f.w);
            push("H", f.h);
        }
    }
    rows
}

pub fn write_plot_csv<W: Write>(out: &mut W, rows: &[(String, usize, u64, f64)]) -> Result<()> {
    writeln!(out, "{PLOT_SCHEMA}").map_err(io)?;
    writeln!(out, "statistic,n,replicate,value").map_err(io)?;
    for (stat, n, rep, v) in rows {
        writeln!(out, "{stat},{n},{rep},{}", num(*v)).map_err(io)?;
    }
    Ok(())
}

/// One row per successful replicate; optional values are left empty.
pub fn write_replicates_csv<W: Write>(out: &mut W, run: &ReplicateRun) -> Result<()> {
    writeln!(out, "{REPLICATES_SCHEMA}").map_err(io)?;
    let mut header = String::from("replicate,n,L,ln_r,h_n,L_over_h,sigma2,T,T_compensated");
    if let Some(first) = run.summaries.first() {
        for f in &first.functions {
            for c in ["M", "M2", "V", "S", "U", "W", "H"] {
                write!(header, ",{c}_{}", f.id).unwrap();
            }
        }
    }
    writeln!(out, "{header}").map_err(io)?;
    for s in &run.summaries {
        let p = s.partition.as_ref();
        let mut line = format!(
            "{},{},{},{},{},{},{},{},{}",
            s.index,
            s.horizon,
            s.blocks,
            num(s.ln_r),
            opt(p.map(|p| p.h_n)),
            opt(p.map(|p| p.l_over_h[2])),
            opt(p.map(|p| p.sigma2)),
            opt(p.map(|p| p.t)),
            opt(p.map(|p| p.t_compensated)),
        );
        for f in &s.functions {
            for v in [Some(f.m), Some(f.m2), Some(f.v), f.s, f.u, f.w, f.h] {
                write!(line, ",{}", opt(v)).unwrap();
            }
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

/// Everything `report` needs to rebuild the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub schema_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
    pub replicates_ok: usize,
    pub failures: Vec<ReplicateFailure>,
    pub results: Vec<TestResult>,
    pub cid_report: Option<CidReport>,
    pub passed: bool,
}

impl ResultsFile {
    pub fn new(
        command: &str,
        config: &ExperimentConfig,
        run: Option<&ReplicateRun>,
        results: Vec<TestResult>,
        cid_report: Option<CidReport>,
    ) -> Self {
        let mut config = config.clone();
        // the output location is not part of the experiment
        config.output.dir = None;
        let passed = results.iter().all(|r| r.role != Role::Primary || r.passed());
        ResultsFile {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config,
            replicates_ok: run.map_or(0, |r| r.summaries.len()),
            failures: run.map(|r| r.failures.clone()).unwrap_or_default(),
            results,
            cid_report,
            passed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ResultsFile = serde_json::from_str(text)
            .map_err(|e| GosError::parse(format!("results file: {e}")))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(GosError::parse(format!(
                "results schema version {} is not supported (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        Ok(file)
    }

    /// Fixed-width summary, a pure function of the file's contents.
    pub fn summary_table(&self) -> String {
        let cell = |x: f64| {
            if x.is_finite() {
                format!("{x:.6e}")
            } else {
                "-".into()
            }
        };
        let mut s = String::new();
        writeln!(s, "{SUMMARY_SCHEMA}").unwrap();
        let c = &self.config;
        writeln!(
            s,
            "command={} family={} horizon={} replicates={} seed={} ok={} failed={}",
            self.command,
            c.family.name(),
            c.horizon,
            c.replicates,
            c.seed.map_or("-".into(), |x| x.to_string()),
            self.replicates_ok,
            self.failures.len()
        )
        .unwrap();
        writeln!(
            s,
            "{:<28} {:<10} {:<7} {:<14} {:>13} {:>13} {:>13} {:>7} {:>8}",
            "test", "role", "status", "statistic", "value", "p_value", "threshold", "n", "excluded"
        )
        .unwrap();
        for r in &self.results {
            let role = match r.role {
                Role::Primary => "primary",
                Role::Diagnostic => "diagnostic",
            };
            let status = match r.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skipped => "SKIP",
            };
            writeln!(
                s,
                "{:<28} {:<10} {:<7} {:<14} {:>13} {:>13} {:>13} {:>7} {:>8}",
                r.test,
                role,
                status,
                r.statistic_name,
                cell(r.statistic),
                r.p_value.map_or("-".into(), cell),
                cell(r.threshold),
                r.sample_size,
                r.excluded
            )
            .unwrap();
        }
        writeln!(s, "overall={}", if self.passed { "PASS" } else { "FAIL" }).unwrap();
        s
    }
}

/// A standalone [`CidReport`] file for `verify-cid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CidFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub report: CidReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::simulate_replicate;
    use crate::families::FamilySpec;
    use crate::montecarlo::run_experiment;
    use crate::config::TestKind;

    fn csv_for(seed: u64) -> (String, Trajectory, Model) {
        let model = FamilySpec::BlackwellMacqueen { theta: 2.0 }.build().unwrap();
        let traj = simulate_replicate(&model, 300, seed, 0).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, &model, &TestFunction::defaults()).unwrap();
        (String::from_utf8(buf).unwrap(), traj, model)
    }

    #[test]
    fn trajectory_csv_round_trips_exactly() {
        let (text, traj, _) = csv_for(4);
        let table = read_trajectory_csv(&text).unwrap();
        assert_eq!(table.rows.len(), 300);
        assert_eq!(table.column("tag").unwrap(), traj.tags());
        assert_eq!(table.column("y").unwrap(), traj.weights());
        let r = table.column("r").unwrap();
        for k in 1..=300 {
            assert_eq!(r[k - 1], traj.r(k - 1));
        }
        assert_eq!(*table.column("L").unwrap().last().unwrap(), traj.num_blocks() as f64);
        assert_eq!(table.function_ids().len(), 3);
    }

    #[test]
    fn trajectory_csv_is_deterministic() {
        assert_eq!(csv_for(8).0, csv_for(8).0);
        assert_ne!(csv_for(8).0, csv_for(9).0);
    }

    #[test]
    fn malformed_trajectories_are_rejected() {
        let (text, _, _) = csv_for(1);
        assert!(read_trajectory_csv(&text.replacen("# gos-trajectory v1", "# other", 1)).is_err());
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(2, 3);
        assert!(read_trajectory_csv(&lines.join("\n")).is_err());
        let truncated: String = text.lines().take(5).map(|l| format!("{l},1\n")).collect();
        assert!(read_trajectory_csv(&truncated).is_err());
        assert!(read_trajectory_csv("").is_err());
    }

    #[test]
    fn checkpoint_grid() {
        assert_eq!(checkpoints(1), vec![1]);
        assert_eq!(checkpoints(10), vec![1, 2, 4, 8, 10]);
        assert_eq!(checkpoints(8), vec![1, 2, 4, 8]);
    }

    #[test]
    fn results_round_trip_and_regenerate_the_same_table() {
        let mut c = ExperimentConfig::new(FamilySpec::PowerDecay { theta: 1.0, alpha: 0.5 }, 200, 100, 3);
        c.tests.run = vec![TestKind::CltT, TestKind::Lln, TestKind::Bernoulli];
        let out = run_experiment(&c).unwrap();
        let file = ResultsFile::new("clt-t", &c, Some(&out.run), out.results, None);
        assert!(file.results.iter().any(|r| r.status == Status::Skipped || r.statistic.is_finite()));
        let json = file.to_json().unwrap();
        let back = ResultsFile::from_json(&json).unwrap();
        assert_eq!(back.summary_table(), file.summary_table());
        assert_eq!(back.to_json().unwrap(), json);
        assert!(ResultsFile::from_json(&json.replace("\"schema_version\": 1", "\"schema_version\": 9")).is_err());
    }

    #[test]
    fn replicate_and_plot_csv_have_schema_lines() {
        let mut c = ExperimentConfig::new(FamilySpec::BlackwellMacqueen { theta: 1.0 }, 50, 4, 1);
        c.tests.run = vec![];
        let out = run_experiment(&c).unwrap();
        let mut buf = Vec::new();
        write_replicates_csv(&mut buf, &out.run).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(REPLICATES_SCHEMA));
        assert_eq!(text.lines().count(), 2 + 4);
        let mut buf = Vec::new();
        write_plot_csv(&mut buf, &replicate_plot_rows(&out.run)).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(PLOT_SCHEMA));
    }
}
