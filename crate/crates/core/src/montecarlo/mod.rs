//! Replicated experiments and the goodness-of-fit tests run on them.
//!
//! Every replicate `i` is simulated from its own stream
//! `rng_for_replicate(seed, i)` and reduced to a [`ReplicateSummary`] of
//! terminal statistics. Tests consume the summaries in index order, so
//! results do not depend on the thread pool.

pub mod ks;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cid::{check_cid_condition, martingale_audit, CidReport, ScaledNewSpecies};
use crate::config::{ExperimentConfig, TestKind};
use crate::engine::{simulate_replicate, Model, Trajectory};
use crate::error::{GosError, Result};
use crate::measure::TestFunction;
use crate::rng::rng_for_replicate;
use crate::stats::{limit_constants, predictive_mean, GrowthSeq, LimitConstants};
use crate::weights::WeightProcess;

pub use ks::{ks_p_value, ks_statistic, ks_test, KsOutcome, NormalTarget, MIN_KS_SAMPLES};

/// Replicate failures tolerated before the whole run is abandoned.
pub const FAILURE_BUDGET: f64 = 0.01;

/// Stream index reserved for the CID check, away from replicate indices.
const CID_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSummary {
    pub id: String,
    /// `M_n^f`
    pub m: f64,
    /// `M_n^{f²}`
    pub m2: f64,
    /// `V_n^f`
    pub v: f64,
    /// `S_n^f` and `U_n^f` (GOS only)
    pub s: Option<f64>,
    pub u: Option<f64>,
    /// `W_n^f = √n (V_n^f - M_N^f)`, `H_n`, `M_N^f`, `M_N^{f²}` (when `W` is requested)
    pub w: Option<f64>,
    pub h: Option<f64>,
    pub m_horizon: Option<f64>,
    pub m2_horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub h_n: f64,
    /// `L_k / h_k` at `k = n/4, n/2, n`
    pub l_over_h: [f64; 3],
    /// `R_{n-1}`
    pub r_sum_prev: f64,
    pub sigma2: f64,
    pub t: f64,
    pub t_compensated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub index: u64,
    pub horizon: usize,
    /// `L_n`
    pub blocks: usize,
    pub ln_r: f64,
    pub partition: Option<PartitionSummary>,
    /// `U_{k+1}, …, U_{k+w}` for the configured Bernoulli window
    pub window: Vec<bool>,
    /// `r_k, …, r_{k+w-1}` for the same window
    pub window_r: Vec<f64>,
    pub functions: Vec<FunctionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRun {
    pub replicates: usize,
    pub summaries: Vec<ReplicateSummary>,
    pub failures: Vec<ReplicateFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Counts toward the verdict.
    Primary,
    /// Reported only.
    Diagnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub role: Role,
    pub status: Status,
    /// Name of the statistic: `ks_d`, `chi_square`, `mean_abs_error`, …
    pub statistic_name: String,
    #[serde(with = "finite_or_null")]
    pub statistic: f64,
    pub p_value: Option<f64>,
    /// Minimum p-value, or maximum error for point targets.
    #[serde(with = "finite_or_null")]
    pub threshold: f64,
    pub target: String,
    pub sample_size: usize,
    pub excluded: usize,
    #[serde(with = "finite_or_null::map")]
    pub diagnostics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

/// JSON has no NaN or infinity: non-finite values are written as `null` and
/// read back as NaN.
mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }

    pub mod map {
        use std::collections::BTreeMap;

        use serde::ser::SerializeMap;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
            let mut out = s.serialize_map(Some(m.len()))?;
            for (k, v) in m {
                out.serialize_entry(k, &v.is_finite().then_some(*v))?;
            }
            out.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
            let m = BTreeMap::<String, Option<f64>>::deserialize(d)?;
            Ok(m.into_iter().map(|(k, v)| (k, v.unwrap_or(f64::NAN))).collect())
        }
    }
}

impl TestResult {
    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }

    fn skipped(test: String, role: Role, target: String, total: usize, reason: String) -> Self {
        TestResult {
            test,
            role,
            status: Status::Skipped,
            statistic_name: "none".into(),
            statistic: f64::NAN,
            p_value: None,
            threshold: f64::NAN,
            target,
            sample_size: 0,
            excluded: total,
            diagnostics: BTreeMap::new(),
            notes: vec![reason],
        }
    }

    /// KS test of `samples` against `target`, with `total - samples.len()`
    /// replicates reported as excluded.
    fn ks(
        test: String,
        role: Role,
        samples: &[f64],
        target: NormalTarget,
        threshold: f64,
        total: usize,
    ) -> Result<Self> {
        if samples.len() < MIN_KS_SAMPLES {
            return Ok(Self::skipped(
                test,
                role,
                target.label(),
                total,
                format!("degenerate: only {} usable replicates", samples.len()),
            ));
        }
        let out = ks_test(samples, target)?;
        let (mean, var) = mean_var(samples);
        let mut diagnostics = BTreeMap::new();
        diagnostics.insert("mean".into(), mean);
        diagnostics.insert("variance".into(), var);
        Ok(TestResult {
            test,
            role,
            status: if out.p_value >= threshold { Status::Pass } else { Status::Fail },
            statistic_name: "ks_d".into(),
            statistic: out.statistic,
            p_value: Some(out.p_value),
            threshold,
            target: target.label(),
            sample_size: samples.len(),
            excluded: total - samples.len(),
            diagnostics,
            notes: vec![
                "marginal / self-normalized consequence only; stable convergence itself is not testable at finite R"
                    .into(),
            ],
        })
    }

    fn point(test: String, name: &str, error: f64, tolerance: f64, target: String, n: usize, total: usize) -> Self {
        TestResult {
            test,
            role: Role::Primary,
            status: if error.abs() <= tolerance { Status::Pass } else { Status::Fail },
            statistic_name: name.into(),
            statistic: error,
            p_value: None,
            threshold: tolerance,
            target,
            sample_size: n,
            excluded: total - n,
            diagnostics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

struct Plan {
    model: Model,
    functions: Vec<TestFunction>,
    growth: Option<GrowthSeq>,
    want_w: bool,
    /// Per-function statistics are skipped when no configured test reads them.
    want_functions: bool,
}

impl Plan {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(Plan {
            model: config.family.build()?,
            functions: config.test_functions()?,
            growth: config.growth_seq()?,
            want_w: config.tests.run.contains(&TestKind::CltW),
            want_functions: config.tests.run.is_empty()
                || config.tests.run.iter().any(|k| matches!(k, TestKind::CltS | TestKind::CltW)),
        })
    }
}

fn summarise(traj: &Trajectory, plan: &Plan, config: &ExperimentConfig, index: u64) -> Result<ReplicateSummary> {
    let n = config.horizon;
    let model = &plan.model;
    let gos = model.gos().is_some();
    let big_n = config.truncation_horizon();

    let wanted = if plan.want_functions { &plan.functions[..] } else { &[] };
    let mut functions = Vec::with_capacity(wanted.len());
    for f in wanted {
        let v = predictive_mean(traj, model, f)?;
        let fx: Vec<f64> = traj.tags().iter().map(|&x| f.eval(x)).collect();
        let (s1, s2) = fx[..n].iter().fold((0.0, 0.0), |(a, b), x| (a + x, b + x * x));
        let m = s1 / n as f64;
        let (s, u) = if gos {
            let mut zz = 0.0;
            for j in 1..=n {
                let z = fx[j - 1] - j as f64 * v[j] + (j - 1) as f64 * v[j - 1];
                zz += z * z;
            }
            (Some((n as f64).sqrt() * (m - v[n])), Some(zz / n as f64))
        } else {
            (None, None)
        };
        let (mut w, mut h, mut m_horizon, mut m2_horizon) = (None, None, None, None);
        if plan.want_w && gos && traj.len() >= big_n {
            let (t1, t2) = fx[..big_n].iter().fold((0.0, 0.0), |(a, b), x| (a + x, b + x * x));
            let mh = t1 / big_n as f64;
            w = Some((n as f64).sqrt() * (v[n] - mh));
            h = Some(n as f64 * (n..big_n).map(|k| traj.p_diag(k + 1).powi(2)).sum::<f64>());
            m_horizon = Some(mh);
            m2_horizon = Some(t2 / big_n as f64);
        }
        functions.push(FunctionSummary {
            id: f.id().to_string(),
            m,
            m2: s2 / n as f64,
            v: v[n],
            s,
            u,
            w,
            h,
            m_horizon,
            m2_horizon,
        });
    }

    let blocks_at = |k: usize| traj.new_species()[..k].iter().filter(|&&b| b).count();
    let blocks = blocks_at(n);
    let partition = match &plan.growth {
        Some(g) if model.base.is_diffuse() => {
            let (mut r_sum_prev, mut var_sum) = (0.0, 0.0);
            for j in 1..=n {
                let r = traj.r(j);
                if j < n {
                    r_sum_prev += r;
                }
                var_sum += r * (1.0 - r);
            }
            let h_n = g.value(n);
            let ratio = |k: usize| {
                let k = k.max(1);
                blocks_at(k) as f64 / g.value(k)
            };
            Some(PartitionSummary {
                h_n,
                l_over_h: [ratio(n / 4), ratio(n / 2), ratio(n)],
                r_sum_prev,
                sigma2: var_sum / h_n,
                t: (blocks as f64 - r_sum_prev) / h_n.sqrt(),
                t_compensated: (blocks as f64 - 1.0 - r_sum_prev) / h_n.sqrt(),
            })
        }
        _ => None,
    };

    let (window, window_r) = if config.tests.run.contains(&TestKind::Bernoulli) {
        let k = config.tests.bernoulli_start;
        let w = config.tests.bernoulli_window;
        (
            traj.new_species()[k..k + w].to_vec(),
            (k..k + w).map(|j| traj.r(j)).collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };

    Ok(ReplicateSummary {
        index,
        horizon: n,
        blocks,
        ln_r: traj.ln_r()[n],
        partition,
        window,
        window_r,
        functions,
    })
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Simulate and summarise all replicates in parallel.
///
/// A failing or panicking replicate is recorded and skipped; more than 1%
/// failures abort the run.
pub fn run_replicates(config: &ExperimentConfig) -> Result<ReplicateRun> {
    config.validate()?;
    let seed = config.require_seed()?;
    let plan = Plan::new(config)?;
    let steps = config.simulated_steps();
    let outcomes: Vec<std::result::Result<ReplicateSummary, ReplicateFailure>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|i| {
            let attempt = catch_unwind(AssertUnwindSafe(|| {
                let traj = simulate_replicate(&plan.model, steps, seed, i)?;
                summarise(&traj, &plan, config, i)
            }));
            match attempt {
                Ok(Ok(s)) => Ok(s),
                Ok(Err(e)) => Err(ReplicateFailure {
                    index: i,
                    message: e.to_string(),
                }),
                Err(p) => Err(ReplicateFailure {
                    index: i,
                    message: panic_message(p),
                }),
            }
        })
        .collect();
    let mut summaries = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(s) => summaries.push(s),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() as f64 > FAILURE_BUDGET * config.replicates as f64 {
        return Err(GosError::Harness(format!(
            "{} of {} replicates failed (budget {}%); first: replicate {}: {}",
            failures.len(),
            config.replicates,
            FAILURE_BUDGET * 100.0,
            failures[0].index,
            failures[0].message
        )));
    }
    Ok(ReplicateRun {
        replicates: config.replicates,
        summaries,
        failures,
    })
}

fn constants(config: &ExperimentConfig, f: &TestFunction) -> LimitConstants {
    limit_constants(&config.family, f)
}

/// Mean of `|L_n / h_n - L|` against the tolerance; checkpoint errors at
/// `n/4`, `n/2` are reported as diagnostics.
pub fn lln_test(config: &ExperimentConfig, run: &ReplicateRun) -> Result<TestResult> {
    let c = constants(config, &TestFunction::identity());
    let limit = config.tests.lln_limit.or(c.l).ok_or_else(|| {
        GosError::config(format!(
            "family '{}' has no analytic limit L; set tests.lln_limit",
            config.family.name()
        ))
    })?;
    let parts: Vec<&PartitionSummary> = run.summaries.iter().filter_map(|s| s.partition.as_ref()).collect();
    if parts.is_empty() {
        return Err(GosError::config("the LLN test needs a diffuse base measure and a growth sequence"));
    }
    let mean_err = |i: usize| parts.iter().map(|p| (p.l_over_h[i] - limit).abs()).sum::<f64>() / parts.len() as f64;
    let errs = [mean_err(0), mean_err(1), mean_err(2)];
    let growth = config.growth_seq()?.map(|g| g.to_string()).unwrap_or_default();
    let mut r = TestResult::point(
        "lln".into(),
        "mean_abs_error",
        errs[2],
        config.tests.lln_tolerance,
        format!("L_n/h_n -> {limit} (h = {growth})"),
        parts.len(),
        run.replicates,
    );
    r.diagnostics.insert("mean_abs_error_n/4".into(), errs[0]);
    r.diagnostics.insert("mean_abs_error_n/2".into(), errs[1]);
    r.diagnostics.insert(
        "mean_l_over_h".into(),
        parts.iter().map(|p| p.l_over_h[2]).sum::<f64>() / parts.len() as f64,
    );
    r.diagnostics.insert("limit".into(), limit);
    let monotone = errs[0] >= errs[1] && errs[1] >= errs[2];
    r.diagnostics.insert("trend_monotone".into(), if monotone { 1.0 } else { 0.0 });
    if !monotone {
        r.notes.push("checkpoint errors are not monotone (diagnostic only)".into());
    }
    Ok(r)
}

/// `T_n / σ_n` against `N(0,1)` (primary) plus diagnostic variants.
pub fn clt_t_test(config: &ExperimentConfig, run: &ReplicateRun) -> Result<Vec<TestResult>> {
    let c = constants(config, &TestFunction::identity());
    let total = run.replicates;
    let threshold = config.tests.ks_threshold;
    let floor = config.tests.variance_floor;
    let parts: Vec<&PartitionSummary> = run.summaries.iter().filter_map(|s| s.partition.as_ref()).collect();
    if parts.is_empty() {
        return Err(GosError::config("the partition CLT needs a diffuse base measure and a growth sequence"));
    }
    if c.sigma2 == Some(0.0) {
        return Ok(vec![TestResult::skipped(
            "clt_t".into(),
            Role::Primary,
            "N(0,1)".into(),
            total,
            "not applicable: limiting variance is 0".into(),
        )]);
    }
    let usable: Vec<&&PartitionSummary> = parts.iter().filter(|p| p.sigma2 > floor && p.sigma2.is_finite()).collect();
    let normalized: Vec<f64> = usable.iter().map(|p| p.t / p.sigma2.sqrt()).collect();
    let mut out = vec![TestResult::ks(
        "clt_t".into(),
        Role::Primary,
        &normalized,
        NormalTarget::STANDARD,
        threshold,
        total,
    )?];
    out[0].notes.push("centering R_{n-1}; σ_n from realized r_j".into());

    let compensated: Vec<f64> = usable.iter().map(|p| p.t_compensated / p.sigma2.sqrt()).collect();
    let mut comp = TestResult::ks(
        "clt_t_compensated".into(),
        Role::Diagnostic,
        &compensated,
        NormalTarget::STANDARD,
        threshold,
        total,
    )?;
    comp.notes.push("centering 1 + R_{n-1}, the exact compensator of L_n".into());
    out.push(comp);

    if let (Some(sigma2), Some(l)) = (c.sigma2, c.l) {
        if config.family.weight_law().is_none_or(|w| w.variance() == 0.0) {
            let raw: Vec<f64> = parts.iter().map(|p| p.t).collect();
            out.push(TestResult::ks(
                "clt_t_raw".into(),
                Role::Diagnostic,
                &raw,
                NormalTarget { variance: sigma2 },
                threshold,
                total,
            )?);
        }
        let analytic: Vec<f64> = parts
            .iter()
            .map(|p| p.h_n.sqrt() * (p.l_over_h[2] - l) / sigma2.sqrt())
            .collect();
        let mut a = TestResult::ks(
            "clt_t_analytic_centering".into(),
            Role::Diagnostic,
            &analytic,
            NormalTarget::STANDARD,
            threshold,
            total,
        )?;
        a.notes.push(format!("(L_n - {l} h_n) / sqrt({sigma2} h_n)"));
        out.push(a);
    }
    Ok(out)
}

fn gos_required(config: &ExperimentConfig, what: &str) -> Result<()> {
    if config.family.build()?.gos().is_none() {
        return Err(GosError::config(format!("{what} needs a GOS family")));
    }
    Ok(())
}

/// `S_n / √U_n` against `N(0,1)` and the mean of `U_n - Δ(M^{f²} - (M^f)²)`.
pub fn clt_s_test(config: &ExperimentConfig, run: &ReplicateRun) -> Result<Vec<TestResult>> {
    gos_required(config, "the S_n test")?;
    let total = run.replicates;
    let mut out = Vec::new();
    for (k, f) in config.test_functions()?.iter().enumerate() {
        let name = format!("clt_s:{}", f.id());
        let c = constants(config, f);
        if f.is_constant() {
            out.push(TestResult::skipped(name, Role::Primary, "N(0,1)".into(), total, "degenerate: f is constant, S_n = 0".into()));
            continue;
        }
        if c.relative_variance == Some(0.0) {
            out.push(TestResult::skipped(
                name,
                Role::Primary,
                "N(0,1)".into(),
                total,
                "degenerate: Δ = 0 forces U_f = 0".into(),
            ));
            continue;
        }
        let fs: Vec<&FunctionSummary> = run.summaries.iter().map(|s| &s.functions[k]).collect();
        let floor = config.tests.variance_floor;
        // Replicates whose plug-in limit variance Δ (M^{f²} - (M^f)²) vanishes
        // (all f(X_j) equal) have U_f = 0, where the ratio has no normal limit
        // even though U_n, of order 1/n, may still exceed the floor.
        let limit_variance_ok = |f: &FunctionSummary| {
            c.relative_variance.is_none_or(|delta| delta * (f.m2 - f.m * f.m) >= floor)
        };
        let samples: Vec<f64> = fs
            .iter()
            .filter_map(|f| match (f.s, f.u) {
                (Some(s), Some(u)) if u >= floor && limit_variance_ok(f) => Some(s / u.sqrt()),
                _ => None,
            })
            .collect();
        let mut r = TestResult::ks(name, Role::Primary, &samples, NormalTarget::STANDARD, config.tests.ks_threshold, total)?;
        r.notes.push(format!(
            "excluded: U_n < {floor} or plug-in limit variance Delta (M^(f^2) - (M^f)^2) < {floor}"
        ));
        out.push(r);

        let u_name = format!("clt_s_u:{}", f.id());
        match c.relative_variance {
            Some(delta) => {
                let diffs: Vec<f64> = fs
                    .iter()
                    .filter_map(|f| f.u.map(|u| u - delta * (f.m2 - f.m * f.m)))
                    .collect();
                let mean = diffs.iter().sum::<f64>() / diffs.len().max(1) as f64;
                let mut r = TestResult::point(
                    u_name,
                    "mean_difference",
                    mean,
                    config.tests.u_tolerance,
                    format!("U_n - {delta} (M_n^(f^2) - (M_n^f)^2) -> 0"),
                    diffs.len(),
                    total,
                );
                r.diagnostics.insert("delta".into(), delta);
                r.diagnostics.insert(
                    "mean_u".into(),
                    fs.iter().filter_map(|f| f.u).sum::<f64>() / diffs.len().max(1) as f64,
                );
                out.push(r);
            }
            None => out.push(TestResult::skipped(
                u_name,
                Role::Primary,
                "U_f".into(),
                total,
                "no analytic Δ for this family".into(),
            )),
        }
    }
    Ok(out)
}

/// `W_n / √(h (M_N^{f²} - (M_N^f)²))` against `N(0,1)` and the mean truncated
/// `H_n` against `h`.
pub fn clt_w_test(config: &ExperimentConfig, run: &ReplicateRun) -> Result<Vec<TestResult>> {
    gos_required(config, "the W_n test")?;
    let total = run.replicates;
    let mut out = Vec::new();
    for (k, f) in config.test_functions()?.iter().enumerate() {
        let name = format!("clt_w:{}", f.id());
        if f.is_constant() {
            out.push(TestResult::skipped(name, Role::Primary, "N(0,1)".into(), total, "degenerate: f is constant, W_n = 0".into()));
            continue;
        }
        let c = constants(config, f);
        let Some(h) = c.h else {
            out.push(TestResult::skipped(name, Role::Primary, "N(0,1)".into(), total, "no analytic h for this family".into()));
            continue;
        };
        let fs: Vec<&FunctionSummary> = run.summaries.iter().map(|s| &s.functions[k]).collect();
        let samples: Vec<f64> = fs
            .iter()
            .filter_map(|f| match (f.w, f.m_horizon, f.m2_horizon) {
                (Some(w), Some(m), Some(m2)) => {
                    let var = h * (m2 - m * m);
                    (var >= config.tests.variance_floor).then(|| w / var.sqrt())
                }
                _ => None,
            })
            .collect();
        let mut r = TestResult::ks(name, Role::Primary, &samples, NormalTarget::STANDARD, config.tests.ks_threshold, total)?;
        r.diagnostics.insert("h".into(), h);
        r.notes.push(format!("V_f estimated by M_N with N = {}", config.truncation_horizon()));
        out.push(r);

        let hs: Vec<f64> = fs.iter().filter_map(|f| f.h).collect();
        let mean_h = hs.iter().sum::<f64>() / hs.len().max(1) as f64;
        let mut hr = TestResult::point(
            format!("clt_w_h:{}", f.id()),
            "relative_error",
            (mean_h - h) / h,
            config.tests.h_tolerance,
            format!("n Σ_(k=n)^(N-1) Q_k^2 -> {h}"),
            hs.len(),
            total,
        );
        hr.diagnostics.insert("mean_h".into(), mean_h);
        hr.notes.push(format!("series truncated at N = {}", config.truncation_horizon()));
        out.push(hr);
    }
    Ok(out)
}

/// Chi-square test of the joint law of `(U_{k+1}, …, U_{k+w})` against the
/// product of Bernoulli(`r_{k+j-1}`).
pub fn bernoulli_test(config: &ExperimentConfig, run: &ReplicateRun) -> Result<TestResult> {
    let model = config.family.build()?;
    if !matches!(model.weights, WeightProcess::Deterministic { .. })
        || model.gos().is_none()
        || !model.base.is_diffuse()
    {
        return Err(GosError::config(
            "the Bernoulli product test needs a GOS family with deterministic r and diffuse base measure",
        ));
    }
    let w = config.tests.bernoulli_window;
    let first = run
        .summaries
        .first()
        .ok_or_else(|| GosError::Harness("no successful replicates".into()))?;
    let r = &first.window_r;
    let cells = 1usize << w;
    let mut counts = vec![0usize; cells];
    for s in &run.summaries {
        let cell = s.window.iter().enumerate().fold(0, |acc, (j, &u)| acc | ((u as usize) << j));
        counts[cell] += 1;
    }
    let total = run.summaries.len() as f64;
    let mut chi2 = 0.0;
    let mut min_expected = f64::INFINITY;
    for (cell, &obs) in counts.iter().enumerate() {
        let p: f64 = (0..w)
            .map(|j| if cell >> j & 1 == 1 { r[j] } else { 1.0 - r[j] })
            .product();
        let e = total * p;
        min_expected = min_expected.min(e);
        if e > 0.0 {
            chi2 += (obs as f64 - e).powi(2) / e;
        } else if obs > 0 {
            chi2 = f64::INFINITY;
        }
    }
    let df = (cells - 1) as f64;
    let dist = ChiSquared::new(df).map_err(|e| GosError::domain(e.to_string()))?;
    let p = if chi2.is_finite() { 1.0 - dist.cdf(chi2) } else { 0.0 };
    let threshold = config.tests.ks_threshold;
    let k = config.tests.bernoulli_start;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("min_expected_count".into(), min_expected);
    diagnostics.insert("degrees_of_freedom".into(), df);
    let mut notes = Vec::new();
    if min_expected < 5.0 {
        notes.push("some expected counts are below 5; the chi-square approximation is rough".into());
    }
    Ok(TestResult {
        test: "bernoulli".into(),
        role: Role::Primary,
        status: if p >= threshold { Status::Pass } else { Status::Fail },
        statistic_name: "chi_square".into(),
        statistic: chi2,
        p_value: Some(p),
        threshold,
        target: format!("product of Bernoulli(r_j), j = {k}..{}", k + w - 1),
        sample_size: run.summaries.len(),
        excluded: run.replicates - run.summaries.len(),
        diagnostics,
        notes,
    })
}

/// The CID identity on the configured family, plus the scaled-`r` negative
/// control (diagnostic; it passes when a violation is found).
pub fn cid_test(config: &ExperimentConfig) -> Result<(Vec<TestResult>, CidReport)> {
    let seed = config.require_seed()?;
    let model = config.family.build()?;
    let t = &config.tests;
    let mut rng = rng_for_replicate(seed, CID_STREAM);
    let report = check_cid_condition(&model, t.cid_nmax, t.cid_samples, t.cid_tolerance, &mut rng)?;
    let mut main = TestResult::point(
        "cid".into(),
        "worst_residual",
        report.worst_residual,
        t.cid_tolerance,
        "both sides of the CID identity agree".into(),
        report.evaluations,
        report.evaluations,
    );
    main.diagnostics.insert("violations".into(), report.violation_count as f64);
    main.notes.push(report.caveat.clone());

    let perturbed = Model::new(
        Arc::new(ScaledNewSpecies {
            inner: Arc::clone(&model.rule),
            factor: 1.1,
        }),
        model.weights.clone(),
        model.base.clone(),
    )?;
    let mut rng = rng_for_replicate(seed, CID_STREAM);
    let neg = check_cid_condition(&perturbed, t.cid_nmax.min(3), t.cid_samples, t.cid_tolerance, &mut rng)?;
    let mut control = TestResult::point(
        "cid_negative_control".into(),
        "violations",
        if neg.passed() { 0.0 } else { 1.0 },
        0.0,
        "r scaled by 1.1 must be flagged".into(),
        neg.evaluations,
        neg.evaluations,
    );
    control.role = Role::Diagnostic;
    control.status = if neg.passed() { Status::Fail } else { Status::Pass };
    control.diagnostics.insert("worst_residual".into(), neg.worst_residual);
    Ok((vec![main, control], report))
}

/// One-step martingale audit on the first replicates, truncated to the
/// configured number of steps.
pub fn martingale_test(config: &ExperimentConfig) -> Result<TestResult> {
    let seed = config.require_seed()?;
    let model = config.family.build()?;
    let t = &config.tests;
    let steps = t.martingale_steps.min(config.horizon);
    let reps = t.martingale_replicates.min(config.replicates) as u64;
    let functions = config.test_functions()?;
    let worst = (0..reps)
        .into_par_iter()
        .map(|i| {
            let traj = simulate_replicate(&model, steps, seed, i)?;
            functions
                .iter()
                .map(|f| martingale_audit(&traj, &model, f))
                .try_fold(0.0f64, |acc, r| r.map(|r| acc.max(r)))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let mut r = TestResult::point(
        "martingale".into(),
        "max_residual",
        worst,
        t.martingale_tolerance,
        "E[V_(n+1) | past] = V_n".into(),
        reps as usize,
        reps as usize,
    );
    r.diagnostics.insert("steps".into(), steps as f64);
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub run: ReplicateRun,
    pub results: Vec<TestResult>,
    pub cid_report: Option<CidReport>,
}

impl ExperimentOutcome {
    /// True when no primary test failed.
    pub fn passed(&self) -> bool {
        self.results
            .iter()
            .all(|r| r.role != Role::Primary || r.passed())
    }
}

/// Run replicates and every configured test.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let run = run_replicates(config)?;
    let mut results = Vec::new();
    let mut cid_report = None;
    for kind in &config.tests.run {
        match kind {
            TestKind::Lln => results.push(lln_test(config, &run)?),
            TestKind::CltT => results.extend(clt_t_test(config, &run)?),
            TestKind::CltS => results.extend(clt_s_test(config, &run)?),
            TestKind::CltW => results.extend(clt_w_test(config, &run)?),
            TestKind::Bernoulli => results.push(bernoulli_test(config, &run)?),
            TestKind::Cid => {
                let (r, report) = cid_test(config)?;
                results.extend(r);
                cid_report = Some(report);
            }
            TestKind::Martingale => results.push(martingale_test(config)?),
        }
    }
    Ok(ExperimentOutcome {
        run,
        results,
        cid_report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub meta_runs: usize,
    pub samples_per_run: usize,
    pub threshold: f64,
    pub passes: usize,
    pub p_values: Vec<f64>,
}

/// KS tests of standard normal draws from the harness's own streams.
pub fn null_calibration(seed: u64, meta_runs: usize, samples: usize, threshold: f64) -> Result<NullCalibration> {
    let p_values = (0..meta_runs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for_replicate(seed, i);
            let x: Vec<f64> = (0..samples).map(|_| StandardNormal.sample(&mut rng)).collect();
            ks_test(&x, NormalTarget::STANDARD).map(|o| o.p_value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(NullCalibration {
        meta_runs,
        samples_per_run: samples,
        threshold,
        passes: p_values.iter().filter(|&&p| p >= threshold).count(),
        p_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::FamilySpec;
    use crate::weights::{DeterministicSeq, WeightDist};

    fn bm_config(replicates: usize, horizon: usize) -> ExperimentConfig {
        ExperimentConfig::new(FamilySpec::BlackwellMacqueen { theta: 1.0 }, horizon, replicates, 42)
    }

    #[test]
    fn identical_seeds_identical_summaries() {
        let c = bm_config(2, 200);
        assert_eq!(run_replicates(&c).unwrap(), run_replicates(&c).unwrap());
    }

    #[test]
    fn mean_block_count_matches_harmonic_number() {
        let c = bm_config(100, 1000);
        let run = run_replicates(&c).unwrap();
        assert_eq!(run.summaries.len(), 100);
        // E[L_n] = Σ_{j<n} 1/(1+j); sd of L_1000 ≈ sqrt(H - H2) ≈ 2.4
        let oracle: f64 = (0..1000).map(|j| 1.0 / (1.0 + j as f64)).sum();
        let mean = run.summaries.iter().map(|s| s.blocks as f64).sum::<f64>() / 100.0;
        assert!((oracle - 7.485).abs() < 1e-3);
        assert!((mean - oracle).abs() < 5.0 * 2.4 / 10.0, "mean {mean}");
    }

    #[test]
    fn empty_test_list_gives_summaries_only() {
        let out = run_experiment(&bm_config(3, 50)).unwrap();
        assert!(out.results.is_empty());
        assert_eq!(out.run.summaries.len(), 3);
        assert!(out.passed());
    }

    #[test]
    fn exclusion_accounting_adds_up() {
        let mut c = ExperimentConfig::new(
            FamilySpec::ReinforcedBm { theta: 1.0, weights: WeightDist::Uniform { low: 1.0, high: 3.0 } },
            500,
            120,
            9,
        );
        c.tests.run = vec![TestKind::CltS, TestKind::CltT];
        c.functions = vec!["indicator".into(), "const:1".into()];
        let out = run_experiment(&c).unwrap();
        for r in &out.results {
            assert_eq!(r.sample_size + r.excluded, 120, "{}", r.test);
            if let Some(p) = r.p_value {
                assert!((0.0..=1.0).contains(&p));
            }
        }
        let constant = out.results.iter().find(|r| r.test == "clt_s:const:1").unwrap();
        assert_eq!(constant.status, Status::Skipped);
    }

    #[test]
    fn degenerate_partition_clt_is_skipped() {
        let mut c = ExperimentConfig::new(
            FamilySpec::DeterministicRn { sequence: DeterministicSeq::Constant { value: 1.0 } },
            100,
            100,
            1,
        );
        c.tests.run = vec![TestKind::CltT, TestKind::Lln];
        let out = run_experiment(&c).unwrap();
        assert_eq!(out.results[0].status, Status::Skipped);
        assert_eq!(out.results[1].statistic, 0.0);
        assert_eq!(out.results[1].status, Status::Pass);
    }

    #[test]
    fn lln_without_constant_is_a_config_error() {
        let mut c = ExperimentConfig::new(FamilySpec::MarkovChainY, 100, 10, 1);
        c.growth = Some("log".into());
        c.tests.run = vec![TestKind::Lln];
        assert!(matches!(run_experiment(&c), Err(GosError::Config(_))));
        c.tests.lln_limit = Some(0.0);
        assert!(run_experiment(&c).is_ok());
    }

    #[test]
    fn replicates_with_degenerate_limit_variance_are_excluded() {
        let mut c = ExperimentConfig::new(
            FamilySpec::ReinforcedBm { theta: 1.0, weights: WeightDist::Uniform { low: 1.0, high: 3.0 } },
            300,
            300,
            11,
        );
        c.tests.run = vec![TestKind::CltS];
        c.functions = vec!["indicator".into()];
        let run = run_replicates(&c).unwrap();
        let constant_paths = run
            .summaries
            .iter()
            .filter(|s| s.functions[0].m2 - s.functions[0].m.powi(2) <= 0.0)
            .count();
        assert!(constant_paths > 0);
        let r = &clt_s_test(&c, &run).unwrap()[0];
        assert_eq!(r.excluded, constant_paths);
    }

    #[test]
    fn panic_payloads_are_reported() {
        let p = catch_unwind(|| panic!("boom {}", 1)).unwrap_err();
        assert_eq!(panic_message(p), "boom 1");
        let p = catch_unwind(|| panic!("plain")).unwrap_err();
        assert_eq!(panic_message(p), "plain");
    }

    #[test]
    fn cid_and_martingale_tests_pass_on_catalogue() {
        let mut c = ExperimentConfig::new(
            FamilySpec::TwoParamPdGeneralized {
                theta: 1.0,
                alpha: 0.5,
                weights: WeightDist::Uniform { low: 0.6, high: 2.0 },
            },
            100,
            1,
            5,
        );
        c.tests.run = vec![TestKind::Cid];
        c.tests.cid_nmax = 4;
        c.tests.cid_samples = 3;
        let out = run_experiment(&c).unwrap();
        assert!(out.passed());
        assert!(out.cid_report.is_some());
        let control = out.results.iter().find(|r| r.test == "cid_negative_control").unwrap();
        assert_eq!(control.status, Status::Pass);

        let mut m = bm_config(3, 300);
        m.tests.run = vec![TestKind::Martingale];
        let out = run_experiment(&m).unwrap();
        assert!(out.results[0].statistic <= 1e-12);
    }

    #[test]
    fn null_calibration_is_deterministic() {
        let a = null_calibration(1, 5, 1000, 0.01).unwrap();
        let b = null_calibration(1, 5, 1000, 0.01).unwrap();
        assert_eq!(a, b);
        assert!(a.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
