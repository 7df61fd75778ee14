//! Statistics of a trajectory: empirical and predictive means, the
//! fluctuation statistics `S_n`, `U_n`, `W_n`, `H_n`, partition growth
//! statistics, and analytic limit constants for the catalogued families.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::{Model, ScaledSum, Trajectory};
use crate::error::{GosError, Result};
use crate::families::FamilySpec;
use crate::partition::Partition;
use crate::rule::Aggregates;
use crate::weights::DeterministicSeq;

pub use crate::measure::TestFunction;

/// `M_1, …, M_n` (entry `k - 1` is `M_k`).
pub fn empirical_mean(traj: &Trajectory, f: &TestFunction) -> Result<Vec<f64>> {
    if traj.is_empty() {
        return Err(GosError::domain("empirical mean of an empty trajectory"));
    }
    let mut sum = 0.0;
    Ok(traj
        .tags()
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            sum += f.eval(x);
            sum / (k + 1) as f64
        })
        .collect())
}

/// `V_0, …, V_n` with `V_n = Σ_i p_{n,i} f(X_i) + r_n E f(X_1)`.
///
/// GOS rules use the closed form `V_n = r_n (Σ_i c_i f(X_i) + E f)` with
/// `c_i = 1/r_i - 1/r_{i-1}`, accumulated in scaled form. Other rules go
/// through block weights at every step.
pub fn predictive_mean(traj: &Trajectory, model: &Model, f: &TestFunction) -> Result<Vec<f64>> {
    let ef = model.base.mean_of(f);
    let n = traj.len();
    let mut out = Vec::with_capacity(n + 1);
    out.push(ef);
    if model.gos().is_some() {
        let ln_r = traj.ln_r();
        let mut acc = ScaledSum::new();
        for (k, &x) in traj.tags().iter().enumerate() {
            acc.add(ln_r[k], ln_r[k + 1], f.eval(x));
            out.push(acc.times_r(ln_r[k + 1]) + ln_r[k + 1].exp() * ef);
        }
        return Ok(out);
    }

    let labels = traj.labels();
    let y = traj.weights();
    let mut partition = Partition::empty();
    let mut block_y: Vec<f64> = Vec::new();
    let mut block_sizes: Vec<usize> = Vec::new();
    let mut block_f: Vec<f64> = Vec::new();
    let mut total_y = 0.0;
    for k in 0..n {
        let l = labels[k] as usize;
        if l == block_y.len() {
            partition.push_new_block();
            block_y.push(0.0);
            block_sizes.push(0);
            block_f.push(f.eval(traj.tags()[k]));
        } else {
            partition.push_into_block(l);
        }
        block_y[l] += y[k];
        block_sizes[l] += 1;
        total_y += y[k];
        let agg = Aggregates {
            n: k + 1,
            total_y,
            block_y: &block_y,
            block_sizes: &block_sizes,
        };
        let bw = match model.rule.block_weights_from_aggregates(&agg) {
            Some(bw) => bw?,
            None => model.rule.block_weights(&partition, &y[..=k])?,
        };
        let v: f64 = bw.blocks.iter().zip(&block_f).map(|(p, v)| p * v).sum::<f64>()
            + bw.new_species * ef;
        out.push(v);
    }
    Ok(out)
}

/// `z_j = f(X_j) - j V_j + (j-1) V_{j-1}` for `j = 1..=n`; `Z_{n,j} = z_j / √n`.
fn z_terms(fx: &[f64], v: &[f64]) -> Vec<f64> {
    (1..=fx.len())
        .map(|j| fx[j - 1] - j as f64 * v[j] + (j - 1) as f64 * v[j - 1])
        .collect()
}

/// Per test-function series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSeries {
    pub id: String,
    /// `M_1..M_n`
    pub m: Vec<f64>,
    /// `V_0..V_n`
    pub v: Vec<f64>,
    /// `S_1..S_n`
    pub s: Vec<f64>,
    /// `U_1..U_n`
    pub u: Vec<f64>,
    /// running `Σ f(X_k)`, `Σ f(X_k)²`, `Σ Y_k f(X_k)`
    pub sum_f: Vec<f64>,
    pub sum_f2: Vec<f64>,
    pub sum_yf: Vec<f64>,
}

/// Partition growth statistics for steps `1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSeries {
    pub growth: String,
    pub blocks: Vec<usize>,
    /// `L_n / h_n`
    pub l_over_h: Vec<f64>,
    /// `R_n = Σ_{j=1}^n r_j`
    pub r_sum: Vec<f64>,
    /// `σ_n² = Σ_{j=1}^n r_j (1 - r_j) / h_n`
    pub sigma2: Vec<f64>,
    /// `T_n = (L_n - R_{n-1}) / √h_n`
    pub t: Vec<f64>,
    /// `(L_n - 1 - R_{n-1}) / √h_n`: centred by the exact compensator
    /// `Σ_{j=0}^{n-1} r_j` of `L_n`.
    pub t_compensated: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSeries {
    pub n: usize,
    pub blocks: Vec<usize>,
    pub sum_y: Vec<f64>,
    pub sum_y2: Vec<f64>,
    pub functions: Vec<FunctionSeries>,
    pub partition: Option<PartitionSeries>,
}

impl StatSeries {
    /// All series in one pass per test function. Partition statistics are
    /// included when `growth` is given and `μ` is diffuse.
    pub fn compute(
        traj: &Trajectory,
        model: &Model,
        functions: &[TestFunction],
        growth: Option<&GrowthSeq>,
    ) -> Result<Self> {
        if traj.is_empty() {
            return Err(GosError::domain("statistics of an empty trajectory"));
        }
        let n = traj.len();
        let mut blocks = Vec::with_capacity(n);
        let mut l = 0;
        for &u in traj.new_species() {
            l += u as usize;
            blocks.push(l);
        }
        let running = |it: &mut dyn Iterator<Item = f64>| -> Vec<f64> {
            let mut acc = 0.0;
            it.map(|x| {
                acc += x;
                acc
            })
            .collect()
        };
        let sum_y = running(&mut traj.weights().iter().copied());
        let sum_y2 = running(&mut traj.weights().iter().map(|y| y * y));
        let functions = functions
            .iter()
            .map(|f| {
                let fx: Vec<f64> = traj.tags().iter().map(|&x| f.eval(x)).collect();
                let m = empirical_mean(traj, f)?;
                let v = predictive_mean(traj, model, f)?;
                let z = z_terms(&fx, &v);
                let s = (1..=n)
                    .map(|k| (k as f64).sqrt() * (m[k - 1] - v[k]))
                    .collect();
                let mut zz = 0.0;
                let u = z
                    .iter()
                    .enumerate()
                    .map(|(k, zk)| {
                        zz += zk * zk;
                        zz / (k + 1) as f64
                    })
                    .collect();
                Ok(FunctionSeries {
                    id: f.id().to_string(),
                    m,
                    v,
                    s,
                    u,
                    sum_f: running(&mut fx.iter().copied()),
                    sum_f2: running(&mut fx.iter().map(|x| x * x)),
                    sum_yf: running(&mut fx.iter().zip(traj.weights()).map(|(x, y)| x * y)),
                })
            })
            .collect::<Result<_>>()?;
        let partition = match growth {
            Some(g) if model.base.is_diffuse() => Some(partition_stats(traj, model, g)?),
            _ => None,
        };
        Ok(StatSeries {
            n,
            blocks,
            sum_y,
            sum_y2,
            functions,
            partition,
        })
    }
}

fn require_gos(model: &Model, what: &str) -> Result<()> {
    if model.gos().is_none() {
        return Err(GosError::domain(format!("{what} needs a GOS rule")));
    }
    Ok(())
}

fn check_step(traj: &Trajectory, n: usize) -> Result<()> {
    if n == 0 || n > traj.len() {
        return Err(GosError::domain(format!(
            "step {n} outside 1..={}",
            traj.len()
        )));
    }
    Ok(())
}

/// `(S_n, U_n)` with `S_n = √n (M_n - V_n)` and `U_n = Σ_j Z_{n,j}²`.
pub fn clt_s(traj: &Trajectory, model: &Model, f: &TestFunction, n: usize) -> Result<(f64, f64)> {
    require_gos(model, "S_n")?;
    check_step(traj, n)?;
    let fx: Vec<f64> = traj.tags()[..n].iter().map(|&x| f.eval(x)).collect();
    let v = predictive_mean(traj, model, f)?;
    let m = fx.iter().sum::<f64>() / n as f64;
    let s = (n as f64).sqrt() * (m - v[n]);
    let u = z_terms(&fx, &v[..=n]).iter().map(|z| z * z).sum::<f64>() / n as f64;
    Ok((s, u))
}

/// `Q_k = 1 - r_{k+1} / r_k`.
pub fn q(traj: &Trajectory, k: usize) -> f64 {
    traj.p_diag(k + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WEstimate {
    pub n: usize,
    pub horizon: usize,
    /// `√n (V_n - M_N)`
    pub w: f64,
    /// `n Σ_{k=n}^{N-1} Q_k²`
    pub h: f64,
    /// `M_N^f`, the plug-in for `V_f`
    pub m_horizon: f64,
    /// `M_N^{f²}`
    pub m2_horizon: f64,
}

/// `W_n` and the truncated `H_n`, using `M_N` in place of the limit `V_f`.
pub fn clt_w(
    traj: &Trajectory,
    model: &Model,
    f: &TestFunction,
    n: usize,
    horizon: usize,
) -> Result<WEstimate> {
    require_gos(model, "W_n")?;
    check_step(traj, n)?;
    if horizon <= n {
        return Err(GosError::domain(format!("truncation horizon {horizon} must exceed n = {n}")));
    }
    if horizon > traj.len() {
        return Err(GosError::domain(format!(
            "truncation horizon {horizon} exceeds trajectory length {}",
            traj.len()
        )));
    }
    let v = predictive_mean(traj, model, f)?;
    let fx = traj.tags()[..horizon].iter().map(|&x| f.eval(x));
    let (s1, s2) = fx.fold((0.0, 0.0), |(a, b), x| (a + x, b + x * x));
    let m_horizon = s1 / horizon as f64;
    let m2_horizon = s2 / horizon as f64;
    let h = n as f64 * (n..horizon).map(|k| q(traj, k).powi(2)).sum::<f64>();
    Ok(WEstimate {
        n,
        horizon,
        w: (n as f64).sqrt() * (v[n] - m_horizon),
        h,
        m_horizon,
        m2_horizon,
    })
}

/// Normalizing sequence `h_n` for partition growth.
#[derive(Clone)]
pub enum GrowthSeq {
    /// `h_n = n^a`
    Pow(f64),
    /// `h_n = ln n` (zero at `n = 1`)
    Log,
    Custom {
        id: String,
        h: Arc<dyn Fn(usize) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for GrowthSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrowthSeq({self})")
    }
}

impl fmt::Display for GrowthSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrowthSeq::Pow(a) => write!(f, "pow:{a}"),
            GrowthSeq::Log => write!(f, "log"),
            GrowthSeq::Custom { id, .. } => write!(f, "custom:{id}"),
        }
    }
}

impl PartialEq for GrowthSeq {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

impl GrowthSeq {
    pub fn value(&self, n: usize) -> f64 {
        match self {
            GrowthSeq::Pow(a) => (n as f64).powf(*a),
            GrowthSeq::Log => (n as f64).ln(),
            GrowthSeq::Custom { h, .. } => h(n),
        }
    }

    /// Parse `pow:<a>` (`a > 0`) or `log`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "log" {
            return Ok(GrowthSeq::Log);
        }
        match spec.split_once(':') {
            Some(("pow", a)) => match a.trim().parse::<f64>() {
                Ok(a) if a.is_finite() && a > 0.0 => Ok(GrowthSeq::Pow(a)),
                _ => Err(GosError::parse(format!("growth exponent '{a}' must be a positive number"))),
            },
            _ => Err(GosError::parse(format!("unknown growth sequence '{spec}' (expected pow:<a> or log)"))),
        }
    }
}

/// `L_n / h_n`, `R_n`, `σ_n²` and `T_n` at every step. Entries where
/// `h_n = 0` (e.g. `ln 1`) are NaN.
pub fn partition_stats(traj: &Trajectory, model: &Model, growth: &GrowthSeq) -> Result<PartitionSeries> {
    if !model.base.is_diffuse() {
        return Err(GosError::domain(
            "partition statistics need a diffuse base measure (fresh draws must open new blocks)",
        ));
    }
    if traj.is_empty() {
        return Err(GosError::domain("partition statistics of an empty trajectory"));
    }
    let n = traj.len();
    let mut out = PartitionSeries {
        growth: growth.to_string(),
        blocks: Vec::with_capacity(n),
        l_over_h: Vec::with_capacity(n),
        r_sum: Vec::with_capacity(n),
        sigma2: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
        t_compensated: Vec::with_capacity(n),
    };
    let mut l = 0usize;
    let mut r_sum = 0.0;
    let mut var_sum = 0.0;
    for k in 1..=n {
        let h = growth.value(k);
        if !(h >= 0.0) || !h.is_finite() {
            return Err(GosError::domain(format!("growth sequence gives h_{k} = {h}")));
        }
        let r_prev_sum = r_sum;
        let r = traj.r(k);
        r_sum += r;
        var_sum += r * (1.0 - r);
        l += traj.new_species()[k - 1] as usize;
        let nan_if_zero = |x: f64| if h > 0.0 { x } else { f64::NAN };
        out.blocks.push(l);
        out.l_over_h.push(nan_if_zero(l as f64 / h));
        out.r_sum.push(r_sum);
        out.sigma2.push(nan_if_zero(var_sum / h));
        out.t.push(nan_if_zero((l as f64 - r_prev_sum) / h.sqrt()));
        out.t_compensated
            .push(nan_if_zero((l as f64 - 1.0 - r_prev_sum) / h.sqrt()));
    }
    Ok(out)
}

/// Largest `|z_j - (1 - j p_{j,j})(f(X_j) - V_{j-1})|` over the path.
pub fn z_dual_form_residual(traj: &Trajectory, model: &Model, f: &TestFunction) -> Result<f64> {
    require_gos(model, "the Z product form")?;
    let fx: Vec<f64> = traj.tags().iter().map(|&x| f.eval(x)).collect();
    let v = predictive_mean(traj, model, f)?;
    let z = z_terms(&fx, &v);
    Ok((1..=fx.len())
        .map(|j| {
            let product = (1.0 - j as f64 * traj.p_diag(j)) * (fx[j - 1] - v[j - 1]);
            (z[j - 1] - product).abs()
        })
        .fold(0.0, f64::max))
}

/// Largest `|Σ_{j ≤ n} Z_{n,j} - S_n|` over `n`.
pub fn telescoping_residual(traj: &Trajectory, model: &Model, f: &TestFunction) -> Result<f64> {
    let fx: Vec<f64> = traj.tags().iter().map(|&x| f.eval(x)).collect();
    let v = predictive_mean(traj, model, f)?;
    let m = empirical_mean(traj, f)?;
    let z = z_terms(&fx, &v);
    let mut zsum = 0.0;
    let mut worst: f64 = 0.0;
    for n in 1..=fx.len() {
        zsum += z[n - 1];
        let rn = (n as f64).sqrt();
        let s = rn * (m[n - 1] - v[n]);
        worst = worst.max((zsum / rn - s).abs());
    }
    Ok(worst)
}

/// Largest `|V_k - V_{k+1} - (V_k - f(X_{k+1})) Q_k|` over the path.
pub fn predictive_step_residual(traj: &Trajectory, model: &Model, f: &TestFunction) -> Result<f64> {
    require_gos(model, "the predictive-mean step identity")?;
    let v = predictive_mean(traj, model, f)?;
    Ok((0..traj.len())
        .map(|k| {
            let lhs = v[k] - v[k + 1];
            let rhs = (v[k] - f.eval(traj.tags()[k])) * q(traj, k);
            (lhs - rhs).abs()
        })
        .fold(0.0, f64::max))
}

/// Largest `|Σ_i p_{n,i} + r_n - 1|` over the path, from the recorded `r`.
pub fn normalization_residual(traj: &Trajectory, model: &Model) -> Result<f64> {
    if model.gos().is_some() {
        let ln_r = traj.ln_r();
        let mut acc = ScaledSum::new();
        let mut worst: f64 = 0.0;
        for k in 1..ln_r.len() {
            acc.add(ln_r[k - 1], ln_r[k], 1.0);
            worst = worst.max((acc.times_r(ln_r[k]) + ln_r[k].exp() - 1.0).abs());
        }
        return Ok(worst);
    }
    let mut partition = Partition::empty();
    let mut worst: f64 = 0.0;
    for (k, &l) in traj.labels().iter().enumerate() {
        if l as usize == partition.len() {
            partition.push_new_block();
        } else {
            partition.push_into_block(l as usize);
        }
        let w = model.rule.individual_weights(&partition, &traj.weights()[..=k])?;
        worst = worst.max((w.individual.iter().sum::<f64>() + w.new_species - 1.0).abs());
    }
    Ok(worst)
}

/// Analytic limits for a family. Fields are `None` when no closed form is
/// known; `notes` then says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitConstants {
    pub family: String,
    pub test_function: String,
    /// Normalizing sequence for `L_n`, in [`GrowthSeq`] syntax.
    pub growth: Option<String>,
    /// `lim L_n / h_n`
    pub l: Option<f64>,
    /// `lim σ_n²`
    pub sigma2: Option<f64>,
    /// `E[Y_1]`
    pub m: Option<f64>,
    /// `E[Y_1²]`
    pub second_moment: Option<f64>,
    /// `Var[Y_1] / E[Y_1]²`
    pub relative_variance: Option<f64>,
    /// `E[Y_1²] / E[Y_1]²`, the limit of `n Σ_{k ≥ n} Q_k²`
    pub h: Option<f64>,
    /// Limit of `U_n` in terms of the random limits `V_f`, `V_{f²}`.
    pub u_limit: Option<String>,
    /// Variance of the `W_n` limit kernel.
    pub w_variance: Option<String>,
    pub notes: Vec<String>,
}

impl LimitConstants {
    fn empty(spec: &FamilySpec, f: &TestFunction) -> Self {
        LimitConstants {
            family: spec.name().to_string(),
            test_function: f.id().to_string(),
            growth: None,
            l: None,
            sigma2: None,
            m: None,
            second_moment: None,
            relative_variance: None,
            h: None,
            u_limit: None,
            w_variance: None,
            notes: Vec::new(),
        }
    }

    pub fn growth_seq(&self) -> Option<GrowthSeq> {
        self.growth.as_deref().and_then(|g| GrowthSeq::parse(g).ok())
    }
}

pub fn limit_constants(spec: &FamilySpec, f: &TestFunction) -> LimitConstants {
    let mut c = LimitConstants::empty(spec, f);
    let reinforced = |c: &mut LimitConstants, theta: f64, law: crate::weights::WeightDist| {
        let m = law.mean();
        let delta = law.relative_variance();
        let h = law.second_moment() / (m * m);
        c.m = Some(m);
        c.second_moment = Some(law.second_moment());
        c.relative_variance = Some(delta);
        c.h = Some(h);
        c.growth = Some("log".into());
        c.l = Some(theta / m);
        c.sigma2 = Some(theta / m);
        c.u_limit = Some(format!("{delta} * (V_f2 - V_f^2)"));
        c.w_variance = Some(format!("{h} * (V_f2 - V_f^2)"));
    };
    match spec {
        FamilySpec::BlackwellMacqueen { theta } => {
            reinforced(&mut c, *theta, crate::weights::WeightDist::PointMass { value: 1.0 })
        }
        FamilySpec::ReinforcedBm { theta, weights } => reinforced(&mut c, *theta, *weights),
        FamilySpec::TwoParamPdGeneralized { theta, alpha, weights } if *alpha == 0.0 => {
            reinforced(&mut c, *theta, *weights)
        }
        FamilySpec::PowerDecay { theta, alpha } => {
            c.growth = Some(format!("pow:{alpha}"));
            c.l = Some(theta / alpha);
            c.sigma2 = Some(theta / alpha);
            c.notes
                .push("deterministic r: predictive and empirical means share one limit; no U/W constants".into());
        }
        FamilySpec::DeterministicRn {
            sequence: DeterministicSeq::Constant { .. },
        } => {
            c.growth = Some("pow:1".into());
            c.l = Some(1.0);
            c.sigma2 = Some(0.0);
            c.notes.push("r ≡ 1: every draw is new, L_n = n".into());
        }
        FamilySpec::DeterministicRn {
            sequence: DeterministicSeq::PowerDecay { theta, alpha },
        } => {
            c.growth = Some(format!("pow:{alpha}"));
            c.l = Some(theta / alpha);
            c.sigma2 = Some(theta / alpha);
        }
        FamilySpec::DeterministicRn { .. } => {
            c.notes.push("no analytic constant for this sequence".into());
        }
        FamilySpec::TwoParamPdGeneralized { .. } => {
            c.notes.push(
                "no analytic constant: with alpha > 0 the block count has a random limit".into(),
            );
        }
        FamilySpec::ReinforcedPolya { .. } => {
            c.notes.push("no analytic constant: atomic base measure, at most two blocks".into());
        }
        FamilySpec::MarkovChainY => {
            c.notes.push("no analytic constant: r_n decays geometrically, L_n converges".into());
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::simulate;
    use crate::families::{blackwell_macqueen, power_decay, reinforced_bm, two_param_pd_generalized};
    use crate::rng::rng_for_replicate;
    use crate::weights::WeightDist;

    fn uniform13() -> WeightDist {
        WeightDist::Uniform { low: 1.0, high: 3.0 }
    }

    #[test]
    fn empirical_mean_examples() {
        let model = blackwell_macqueen(1.0).unwrap();
        let mut rng = rng_for_replicate(1, 0);
        let t = simulate(&model, 50, &mut rng).unwrap();
        assert!(empirical_mean(&t, &TestFunction::constant(1.0)).unwrap().iter().all(|&m| m == 1.0));
        let m = empirical_mean(&t, &TestFunction::identity()).unwrap();
        assert!((m[1] - (t.tags()[0] + t.tags()[1]) / 2.0).abs() < 1e-15);
        assert!(empirical_mean(&crate::engine::Trajectory::new(), &TestFunction::identity()).is_err());
    }

    #[test]
    fn predictive_mean_first_steps() {
        let model = blackwell_macqueen(1.0).unwrap();
        let f = TestFunction::indicator(0.5);
        for seed in 0..20 {
            let mut rng = rng_for_replicate(seed, 0);
            let t = simulate(&model, 5, &mut rng).unwrap();
            let v = predictive_mean(&t, &model, &f).unwrap();
            assert_eq!(v[0], 0.5);
            let expect = 0.5 * f.eval(t.tags()[0]) + 0.5 * 0.5;
            assert!((v[1] - expect).abs() < 1e-15);
        }
    }

    /// `V_n` straight from the individual weights, O(n) per step.
    fn predictive_mean_oracle(t: &Trajectory, model: &Model, f: &TestFunction) -> Vec<f64> {
        let ef = model.base.mean_of(f);
        let mut out = vec![ef];
        for n in 1..=t.len() {
            let p = crate::partition::induced_partition(&t.tags()[..n]).unwrap();
            let w = model.rule.individual_weights(&p, &t.weights()[..n]).unwrap();
            let v: f64 = w.individual.iter().zip(t.tags()).map(|(p, &x)| p * f.eval(x)).sum();
            out.push(v + w.new_species * ef);
        }
        out
    }

    #[test]
    fn predictive_mean_matches_direct_weights() {
        let models = [
            reinforced_bm(1.0, uniform13()).unwrap(),
            two_param_pd_generalized(1.0, 0.5, WeightDist::Uniform { low: 0.6, high: 2.0 }).unwrap(),
            power_decay(1.0, 0.5).unwrap(),
        ];
        for (k, model) in models.iter().enumerate() {
            let mut rng = rng_for_replicate(2, k as u64);
            let t = simulate(model, 300, &mut rng).unwrap();
            for f in TestFunction::defaults() {
                let fast = predictive_mean(&t, model, &f).unwrap();
                let slow = predictive_mean_oracle(&t, model, &f);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identities_hold_along_paths() {
        let models = [
            blackwell_macqueen(2.0).unwrap(),
            reinforced_bm(1.0, uniform13()).unwrap(),
            power_decay(1.0, 0.5).unwrap(),
            FamilySpec::MarkovChainY.build().unwrap(),
        ];
        for (k, model) in models.iter().enumerate() {
            let mut rng = rng_for_replicate(3, k as u64);
            let t = simulate(model, 2000, &mut rng).unwrap();
            for f in TestFunction::defaults() {
                assert!(z_dual_form_residual(&t, model, &f).unwrap() <= 1e-9);
                assert!(telescoping_residual(&t, model, &f).unwrap() <= 1e-9);
                assert!(predictive_step_residual(&t, model, &f).unwrap() <= 1e-9);
            }
            assert!(normalization_residual(&t, model).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn plus_sign_product_form_does_not_hold() {
        let model = blackwell_macqueen(1.0).unwrap();
        let f = TestFunction::identity();
        let mut rng = rng_for_replicate(4, 0);
        let t = simulate(&model, 200, &mut rng).unwrap();
        let fx: Vec<f64> = t.tags().iter().map(|&x| f.eval(x)).collect();
        let v = predictive_mean(&t, &model, &f).unwrap();
        let z = z_terms(&fx, &v);
        let worst = (1..=fx.len())
            .map(|j| (z[j - 1] - (1.0 + j as f64 * t.p_diag(j)) * (fx[j - 1] - v[j - 1])).abs())
            .fold(0.0, f64::max);
        assert!(worst > 0.1, "{worst}");
    }

    #[test]
    fn clt_s_small_cases() {
        let model = reinforced_bm(1.0, uniform13()).unwrap();
        let f = TestFunction::identity();
        let mut rng = rng_for_replicate(5, 0);
        let t = simulate(&model, 100, &mut rng).unwrap();
        let v = predictive_mean(&t, &model, &f).unwrap();
        let (s1, _) = clt_s(&t, &model, &f, 1).unwrap();
        assert!((s1 - (f.eval(t.tags()[0]) - v[1])).abs() < 1e-15);

        let (s, u) = clt_s(&t, &model, &TestFunction::constant(0.7), 100).unwrap();
        assert!(s.abs() < 1e-12 && u.abs() < 1e-12);
        let w = clt_w(&t, &model, &TestFunction::constant(0.7), 10, 100).unwrap();
        assert!(w.w.abs() < 1e-12);

        let series = StatSeries::compute(&t, &model, std::slice::from_ref(&f), None).unwrap();
        let (s, u) = clt_s(&t, &model, &f, 100).unwrap();
        assert!((series.functions[0].s[99] - s).abs() < 1e-12);
        assert!((series.functions[0].u[99] - u).abs() < 1e-12);

        let tp = two_param_pd_generalized(1.0, 0.0, uniform13()).unwrap();
        let t2 = simulate(&tp, 10, &mut rng).unwrap();
        assert!(clt_s(&t2, &tp, &f, 5).is_err());
        assert!(clt_w(&t, &model, &f, 10, 10).is_err());
        assert!(clt_w(&t, &model, &f, 10, 101).is_err());
    }

    #[test]
    fn h_series_for_blackwell_macqueen_tends_to_one() {
        // Q_k = 1/(θ+k+1) with θ = 1; oracle: exact series n Σ_{k=n}^{N-1} (k+2)^{-2}
        let model = blackwell_macqueen(1.0).unwrap();
        let mut rng = rng_for_replicate(6, 0);
        let n = 2000;
        let horizon = 25 * n;
        let t = simulate(&model, horizon, &mut rng).unwrap();
        let w = clt_w(&t, &model, &TestFunction::identity(), n, horizon).unwrap();
        let oracle = n as f64 * (n..horizon).map(|k| 1.0 / ((k + 2) as f64).powi(2)).sum::<f64>();
        assert!((w.h - oracle).abs() < 1e-12);
        // truncation at 25n loses about 1/25 of the limit 1
        assert!((w.h - 1.0).abs() < 0.05);
    }

    #[test]
    fn partition_stats_examples() {
        let all_new = crate::families::deterministic_rn(DeterministicSeq::Constant { value: 1.0 }).unwrap();
        let mut rng = rng_for_replicate(7, 0);
        let t = simulate(&all_new, 400, &mut rng).unwrap();
        let p = partition_stats(&t, &all_new, &GrowthSeq::Pow(1.0)).unwrap();
        assert_eq!(p.l_over_h[399], 1.0);
        assert_eq!(p.r_sum[398], 399.0);
        assert_eq!(p.sigma2[399], 0.0);
        assert!((p.t[399] - 1.0 / 20.0).abs() < 1e-15);
        assert_eq!(p.t_compensated[399], 0.0);

        let log = partition_stats(&t, &all_new, &GrowthSeq::Log).unwrap();
        assert!(log.t[0].is_nan());

        let urn = crate::families::reinforced_polya(1, 1, WeightDist::PointMass { value: 1.0 }).unwrap();
        let tu = simulate(&urn, 10, &mut rng).unwrap();
        assert!(partition_stats(&tu, &urn, &GrowthSeq::Log).is_err());
    }

    #[test]
    fn growth_parse() {
        assert_eq!(GrowthSeq::parse("log").unwrap(), GrowthSeq::Log);
        assert_eq!(GrowthSeq::parse("pow:0.5").unwrap(), GrowthSeq::Pow(0.5));
        assert_eq!(GrowthSeq::parse("pow:0.5").unwrap().to_string(), "pow:0.5");
        assert!(GrowthSeq::parse("pow:-1").is_err());
        assert!(GrowthSeq::parse("exp").is_err());
    }

    #[test]
    fn limit_constant_examples() {
        let f = TestFunction::indicator(0.5);
        let c = limit_constants(&FamilySpec::PowerDecay { theta: 1.0, alpha: 0.5 }, &f);
        assert_eq!((c.l, c.sigma2), (Some(2.0), Some(2.0)));
        assert_eq!(c.growth_seq(), Some(GrowthSeq::Pow(0.5)));

        let c = limit_constants(
            &FamilySpec::ReinforcedBm { theta: 2.0, weights: WeightDist::PointMass { value: 1.0 } },
            &f,
        );
        assert_eq!((c.l, c.sigma2, c.h, c.relative_variance), (Some(2.0), Some(2.0), Some(1.0), Some(0.0)));

        let c = limit_constants(&FamilySpec::ReinforcedBm { theta: 1.0, weights: uniform13() }, &f);
        assert!((c.m.unwrap() - 2.0).abs() < 1e-15);
        assert!((c.second_moment.unwrap() - 13.0 / 3.0).abs() < 1e-14);
        assert!((c.h.unwrap() - 13.0 / 12.0).abs() < 1e-14);
        assert!((c.relative_variance.unwrap() - 1.0 / 12.0).abs() < 1e-14);

        let c = limit_constants(&FamilySpec::MarkovChainY, &f);
        assert!(c.l.is_none() && !c.notes.is_empty());
    }
}
