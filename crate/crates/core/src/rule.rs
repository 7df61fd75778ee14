//! Prediction rules: the weights `p_{n,i}` on past observations and the
//! new-species weight `r_n`, as functions of the partition and weight history.

use std::fmt;
use std::sync::Arc;

use crate::error::{GosError, Result};
use crate::partition::Partition;
use crate::weights::{DeterministicSeq, Weight};

/// Slack on the normalization `Σ p + r = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Slack allowed below 0 / above 1 for single components (rounding only).
const COMPONENT_SLACK: f64 = 1e-12;

/// `(p_{n,1}, …, p_{n,n})` and `r_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub individual: Vec<f64>,
    pub new_species: f64,
}

/// `(p*_{n,1}, …, p*_{n,L_n})` and `r_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub blocks: Vec<f64>,
    pub new_species: f64,
}

impl BlockWeights {
    pub fn total(&self) -> f64 {
        self.blocks.iter().sum::<f64>() + self.new_species
    }

    /// Fails with a rule error unless the weights form a probability vector.
    pub fn check(&self, step: usize) -> Result<()> {
        check_probability_vector(step, &self.blocks, self.new_species)
    }
}

pub(crate) fn check_probability_vector(step: usize, parts: &[f64], rest: f64) -> Result<()> {
    let sum = parts.iter().sum::<f64>() + rest;
    let in_range = |x: f64| (-COMPONENT_SLACK..=1.0 + COMPONENT_SLACK).contains(&x);
    if (sum - 1.0).abs() > NORMALIZATION_TOL
        || !parts.iter().all(|&p| in_range(p))
        || !in_range(rest)
        || !sum.is_finite()
    {
        let mut components = parts.to_vec();
        components.push(rest);
        return Err(GosError::Rule {
            step,
            sum,
            components,
        });
    }
    Ok(())
}

/// Running aggregates of the weight history, enough for rules whose block
/// weights depend on `y` only through block sums.
#[derive(Debug, Clone, Copy)]
pub struct Aggregates<'a> {
    pub n: usize,
    /// `Σ_{j ≤ n} y_j`
    pub total_y: f64,
    /// `Σ_{i ∈ π_l} y_i` per block
    pub block_y: &'a [f64],
    pub block_sizes: &'a [usize],
}

pub trait PredictionRule: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// `p_{n,i}` for `i = 1..=n` and `r_n`, where `n = partition.n()` and
    /// `y = (y_1, …, y_n)`.
    fn individual_weights(&self, partition: &Partition, y: &[f64]) -> Result<Weights>;

    /// Block aggregation `p*_{n,l} = Σ_{i ∈ π_l} p_{n,i}`.
    fn block_weights(&self, partition: &Partition, y: &[f64]) -> Result<BlockWeights> {
        let w = self.individual_weights(partition, y)?;
        let blocks = partition
            .blocks()
            .iter()
            .map(|b| b.iter().map(|&i| w.individual[i - 1]).sum())
            .collect();
        Ok(BlockWeights {
            blocks,
            new_species: w.new_species,
        })
    }

    /// O(L_n) block weights from running aggregates, when the rule allows it.
    fn block_weights_from_aggregates(&self, _agg: &Aggregates<'_>) -> Option<Result<BlockWeights>> {
        None
    }

    /// The GOS structure, if this rule is a generalized Ottawa sequence.
    fn gos(&self) -> Option<&GosRule> {
        None
    }

    /// True when the weights ignore the partition.
    fn is_partition_free(&self) -> bool {
        self.gos().is_some()
    }
}

pub(crate) fn check_history(partition: &Partition, y: &[f64]) -> Result<()> {
    if partition.n() != y.len() {
        return Err(GosError::domain(format!(
            "partition of {} observations paired with {} weights",
            partition.n(),
            y.len()
        )));
    }
    Ok(())
}

/// How `r_n` depends on the weight history in a GOS.
#[derive(Clone)]
pub enum Schedule {
    /// `r_n = θ / (θ + Σ_{j ≤ n} y_j)`
    Reinforced { theta: f64 },
    /// `r_n = a_n`
    Sequence(DeterministicSeq),
    /// `r_n = y_n` (with `r_0 = 1`)
    LastWeight,
    /// Arbitrary `r_n(y_1, …, y_n)` for `n ≥ 1`; needs the full history.
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Reinforced { theta } => write!(f, "Reinforced {{ theta: {theta} }}"),
            Schedule::Sequence(s) => write!(f, "Sequence({s:?})"),
            Schedule::LastWeight => write!(f, "LastWeight"),
            Schedule::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Incremental state of a [`Schedule`] along one trajectory.
#[derive(Debug, Clone, Default)]
pub struct ScheduleState {
    total_y: f64,
    history: Vec<f64>,
}

impl Schedule {
    pub fn needs_history(&self) -> bool {
        matches!(self, Schedule::Custom(_))
    }

    /// `ln r_n` after observing weight `y_n`.
    pub fn next_ln_r(&self, state: &mut ScheduleState, n: usize, weight: Weight) -> Result<f64> {
        state.total_y += weight.value;
        if self.needs_history() {
            state.history.push(weight.value);
        }
        self.ln_r_with(n, state.total_y, weight, &state.history)
    }

    fn ln_r_with(&self, n: usize, total_y: f64, last: Weight, history: &[f64]) -> Result<f64> {
        Ok(match self {
            Schedule::Reinforced { theta } => theta.ln() - (theta + total_y).ln(),
            Schedule::Sequence(seq) => seq.ln_value(n)?,
            Schedule::LastWeight => last.ln,
            Schedule::Custom(f) => f(history).ln(),
        })
    }

    /// `ln r_0, …, ln r_n` recomputed from a full weight history.
    pub fn ln_r_sequence(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(y.len() + 1);
        out.push(0.0);
        let mut total = 0.0;
        for (k, &yk) in y.iter().enumerate() {
            total += yk;
            out.push(self.ln_r_with(k + 1, total, Weight::new(yk), &y[..=k])?);
        }
        Ok(out)
    }
}

/// A generalized Ottawa sequence rule: partition-free weights generated from
/// a positive non-increasing `r_n` by
/// `p_{n,i} = (r_n / r_{n-1}) p_{n-1,i}`, `p_{n,n} = 1 - r_n / r_{n-1}`.
#[derive(Debug, Clone)]
pub struct GosRule {
    name: String,
    schedule: Schedule,
}

impl GosRule {
    pub fn new(name: impl Into<String>, schedule: Schedule) -> Self {
        GosRule {
            name: name.into(),
            schedule,
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// `p_{n,i}` (`i = 1..=n`) from `ln r_0..=ln r_n`, using the closed form
    /// `p_{n,i} = r_n (1/r_i - 1/r_{i-1})` evaluated in log space.
    pub fn weights_from_ln_r(ln_r: &[f64]) -> Weights {
        let n = ln_r.len() - 1;
        let top = ln_r[n];
        let individual = (1..=n)
            .map(|i| (top - ln_r[i]).exp() * -(ln_r[i] - ln_r[i - 1]).exp_m1())
            .collect();
        Weights {
            individual,
            new_species: top.exp(),
        }
    }
}

impl PredictionRule for GosRule {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn individual_weights(&self, partition: &Partition, y: &[f64]) -> Result<Weights> {
        check_history(partition, y)?;
        let ln_r = self.schedule.ln_r_sequence(y)?;
        check_gos_schedule(&ln_r)?;
        Ok(Self::weights_from_ln_r(&ln_r))
    }

    fn gos(&self) -> Option<&GosRule> {
        Some(self)
    }
}

/// GOS requirement on `ln r`: finite (so `r > 0`), starts at 0, non-increasing.
pub(crate) fn check_gos_schedule(ln_r: &[f64]) -> Result<()> {
    if ln_r.first() != Some(&0.0) {
        return Err(GosError::domain("GOS schedule must start at r_0 = 1"));
    }
    for k in 1..ln_r.len() {
        check_gos_step(k, ln_r[k - 1], ln_r[k])?;
    }
    Ok(())
}

pub(crate) fn check_gos_step(k: usize, prev: f64, next: f64) -> Result<()> {
    if !next.is_finite() || next.is_nan() {
        return Err(GosError::domain(format!("r_{k} is not strictly positive")));
    }
    if next > prev {
        return Err(GosError::domain(format!(
            "r increases at step {k}: {} > {}",
            next.exp(),
            prev.exp()
        )));
    }
    Ok(())
}

/// Weight vector at step `n` from `r_0, …, r_n` by the multiplicative
/// recursion. Returns `(p_{n,1}, …, p_{n,n})`; `r_n` is the last input.
pub fn gos_weights(r: &[f64]) -> Result<Vec<f64>> {
    validate_r(r)?;
    let mut p: Vec<f64> = Vec::with_capacity(r.len());
    for k in 1..r.len() {
        let ratio = r[k] / r[k - 1];
        for pi in p.iter_mut() {
            *pi *= ratio;
        }
        p.push(1.0 - ratio);
    }
    Ok(p)
}

/// Same as [`gos_weights`] through the closed form `r_n (1/r_i - 1/r_{i-1})`.
pub fn gos_weights_closed_form(r: &[f64]) -> Result<Vec<f64>> {
    validate_r(r)?;
    let n = r.len() - 1;
    Ok((1..=n).map(|i| r[n] * (1.0 / r[i] - 1.0 / r[i - 1])).collect())
}

fn validate_r(r: &[f64]) -> Result<()> {
    match r.first() {
        Some(&r0) if r0 == 1.0 => {}
        _ => return Err(GosError::domain("r sequence must start with r_0 = 1")),
    }
    for k in 1..r.len() {
        if !(r[k] > 0.0) || !r[k].is_finite() {
            return Err(GosError::domain(format!("r_{k} = {} is not strictly positive", r[k])));
        }
        if r[k] > r[k - 1] {
            return Err(GosError::domain(format!("r increases at k = {k}")));
        }
    }
    Ok(())
}

/// Partition-dependent generalization of the two-parameter Poisson–Dirichlet
/// rule:
/// `p_{n,i} = (y_i - α / C_i) / (θ + Σ y)`, `r_n = (θ + α L_n) / (θ + Σ y)`,
/// with `C_i` the size of the block containing `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoParamRule {
    pub theta: f64,
    pub alpha: f64,
}

impl TwoParamRule {
    pub fn new(theta: f64, alpha: f64) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(GosError::domain("two-parameter rule needs theta > 0"));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(GosError::domain("two-parameter rule needs alpha >= 0"));
        }
        Ok(TwoParamRule { theta, alpha })
    }
}

impl PredictionRule for TwoParamRule {
    fn name(&self) -> String {
        format!("two_param_pd_generalized(theta={}, alpha={})", self.theta, self.alpha)
    }

    fn individual_weights(&self, partition: &Partition, y: &[f64]) -> Result<Weights> {
        check_history(partition, y)?;
        let denom = self.theta + y.iter().sum::<f64>();
        let mut individual = vec![0.0; y.len()];
        for block in partition.blocks() {
            let c = block.len() as f64;
            for &i in block {
                individual[i - 1] = (y[i - 1] - self.alpha / c) / denom;
            }
        }
        let new_species = (self.theta + self.alpha * partition.len() as f64) / denom;
        if let Some(&bad) = individual.iter().find(|&&p| p < 0.0) {
            return Err(GosError::Rule {
                step: y.len(),
                sum: individual.iter().sum::<f64>() + new_species,
                components: vec![bad],
            });
        }
        Ok(Weights {
            individual,
            new_species,
        })
    }

    fn block_weights_from_aggregates(&self, agg: &Aggregates<'_>) -> Option<Result<BlockWeights>> {
        let denom = self.theta + agg.total_y;
        let blocks: Vec<f64> = agg
            .block_y
            .iter()
            .map(|&yl| (yl - self.alpha) / denom)
            .collect();
        let new_species = (self.theta + self.alpha * agg.block_y.len() as f64) / denom;
        Some(Ok(BlockWeights {
            blocks,
            new_species,
        }))
    }
}
