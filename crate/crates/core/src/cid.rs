//! Brute-force checks of the conditionally-identically-distributed property.
//!
//! [`check_cid_condition`] evaluates, for every partition `π` of `{1..n}` and
//! every block `j`, the consistency identity
//!
//! ```text
//! p*_{n,j}(π) = r_n p*_{n+1,j}([π; n+1]) + Σ_l p*_{n+1,j}([π]_{l+}) p*_{n,l}(π)
//! ```
//!
//! on sampled weight histories. [`martingale_audit`] checks along a path that
//! the predictive mean `V^f_n` is a one-step martingale.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Model, Trajectory};
use crate::error::{GosError, Result};
use crate::measure::TestFunction;
use crate::partition::{enumerate_partitions, Partition};
use crate::rng::rng_for_replicate;
use crate::rule::{GosRule, PredictionRule, Weights};
use crate::weights::WeightState;

pub const DEFAULT_CID_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_CID_NMAX: usize = 5;
/// Block weights are evaluated at `n_max + 1`, so enumeration stays small.
pub const MAX_CID_NMAX: usize = 8;
/// Violations beyond this many are counted but not stored.
const MAX_STORED_VIOLATIONS: usize = 100;

const CAVEAT: &str = "the identity is checked pointwise on sampled weight histories; \
for rules whose weights depend on y only through identities that hold for every y this \
matches the almost-sure statement, otherwise it is evidence rather than proof";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CidViolation {
    pub n: usize,
    pub partition: String,
    /// 1-based block index.
    pub block: usize,
    pub y: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CidReport {
    pub rule: String,
    pub checked_n: usize,
    pub tolerance: f64,
    pub y_samples_per_partition: usize,
    pub partitions_checked: usize,
    pub evaluations: usize,
    pub worst_residual: f64,
    pub violation_count: usize,
    pub violations: Vec<CidViolation>,
    pub caveat: String,
}

impl CidReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }
}

struct Outcome {
    worst: f64,
    evaluations: usize,
    violations: Vec<CidViolation>,
}

fn located(e: GosError, n: usize, partition: &Partition) -> GosError {
    GosError::Domain(format!("rule evaluation failed at n = {n}, partition {partition}: {e}"))
}

fn check_one<R: Rng>(
    model: &Model,
    n: usize,
    partition: &Partition,
    samples: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<Outcome> {
    let rule = &model.rule;
    let mut out = Outcome {
        worst: 0.0,
        evaluations: 0,
        violations: Vec::new(),
    };
    let augmented: Vec<Partition> = (1..=partition.len())
        .map(|l| partition.augment_into_block(l))
        .collect::<Result<_>>()?;
    let fresh = partition.augment_new_block();
    for _ in 0..samples {
        let mut state = WeightState::default();
        let y: Vec<f64> = (1..=n + 1)
            .map(|k| model.weights.sample(k, &mut state, rng).map(|w| w.value))
            .collect::<Result<_>>()?;
        let now = rule
            .block_weights(partition, &y[..n])
            .map_err(|e| located(e, n, partition))?;
        let next_fresh = rule
            .block_weights(&fresh, &y)
            .map_err(|e| located(e, n + 1, &fresh))?;
        let next_joined: Vec<_> = augmented
            .iter()
            .map(|p| rule.block_weights(p, &y).map_err(|e| located(e, n + 1, p)))
            .collect::<Result<_>>()?;
        for j in 0..partition.len() {
            let lhs = now.blocks[j];
            let rhs = now.new_species * next_fresh.blocks[j]
                + (0..partition.len())
                    .map(|l| next_joined[l].blocks[j] * now.blocks[l])
                    .sum::<f64>();
            let residual = (lhs - rhs).abs();
            out.evaluations += 1;
            out.worst = out.worst.max(residual);
            if !(residual <= tolerance) {
                out.violations.push(CidViolation {
                    n,
                    partition: partition.to_string(),
                    block: j + 1,
                    y: y.clone(),
                    lhs,
                    rhs,
                });
            }
        }
    }
    Ok(out)
}

/// Check the CID identity for every `n ≤ n_max`, every partition of `{1..n}`
/// and `y_samples` independent weight histories per partition.
///
/// Each `(n, partition)` pair uses its own random stream derived from one
/// draw of `rng`, so the report does not depend on thread scheduling.
pub fn check_cid_condition<R: Rng + ?Sized>(
    model: &Model,
    n_max: usize,
    y_samples: usize,
    tolerance: f64,
    rng: &mut R,
) -> Result<CidReport> {
    if !model.base.is_diffuse() {
        return Err(GosError::domain("the CID identity is checked for diffuse base measures only"));
    }
    if n_max == 0 || n_max > MAX_CID_NMAX {
        return Err(GosError::domain(format!("n_max must lie in 1..={MAX_CID_NMAX}")));
    }
    if y_samples == 0 {
        return Err(GosError::domain("y_samples must be at least 1"));
    }
    if !(tolerance >= 0.0) {
        return Err(GosError::domain("tolerance must be nonnegative"));
    }
    let master: u64 = rng.random();
    let mut report = CidReport {
        rule: model.rule.name(),
        checked_n: n_max,
        tolerance,
        y_samples_per_partition: y_samples,
        partitions_checked: 0,
        evaluations: 0,
        worst_residual: 0.0,
        violation_count: 0,
        violations: Vec::new(),
        caveat: CAVEAT.to_string(),
    };
    for n in 1..=n_max {
        let partitions: Vec<Partition> = enumerate_partitions(n)?.collect();
        let outcomes: Vec<Outcome> = partitions
            .par_iter()
            .enumerate()
            .map(|(idx, p)| {
                let mut stream = rng_for_replicate(master, ((n as u64) << 32) | idx as u64);
                check_one(model, n, p, y_samples, tolerance, &mut stream)
            })
            .collect::<Result<_>>()?;
        report.partitions_checked += partitions.len();
        for o in outcomes {
            report.evaluations += o.evaluations;
            report.worst_residual = report.worst_residual.max(o.worst);
            report.violation_count += o.violations.len();
            let room = MAX_STORED_VIOLATIONS.saturating_sub(report.violations.len());
            report.violations.extend(o.violations.into_iter().take(room));
        }
    }
    Ok(report)
}

fn weights_at(model: &Model, traj: &Trajectory, partition: &Partition, n: usize) -> Result<Weights> {
    if model.gos().is_some() {
        Ok(GosRule::weights_from_ln_r(&traj.ln_r()[..=n]))
    } else {
        model.rule.individual_weights(partition, &traj.weights()[..n])
    }
}

/// Largest `|E[V^f_{n+1} | past, Y_{n+1}] - V^f_n|` along the trajectory.
///
/// The conditional expectation sums over the `n + 1` outcomes of `X_{n+1}`
/// (repeat `X_i`, or a fresh draw integrated against `μ`). The weights after
/// the step must not depend on which outcome occurs, so the rule has to be
/// partition-free.
pub fn martingale_audit(traj: &Trajectory, model: &Model, f: &TestFunction) -> Result<f64> {
    if !model.rule.is_partition_free() {
        return Err(GosError::domain(
            "martingale audit needs a rule whose weights ignore the partition",
        ));
    }
    let tags = traj.tags();
    let ef = model.base.mean_of(f);
    let fx: Vec<f64> = tags.iter().map(|&x| f.eval(x)).collect();
    let labels = traj.labels();

    let mut partition = Partition::empty();
    let mut now: Option<Weights> = None;
    let mut worst: f64 = 0.0;
    for n in 0..traj.len() {
        if traj.new_species()[n] {
            partition.push_new_block();
        } else {
            partition.push_into_block(labels[n] as usize);
        }
        let next = weights_at(model, traj, &partition, n + 1)?;
        if let Some(w) = &now {
            // V_n and the conditional mean of V_{n+1}
            let v_now: f64 =
                w.individual.iter().zip(&fx).map(|(p, v)| p * v).sum::<f64>() + w.new_species * ef;
            let kept: f64 = next.individual[..n].iter().zip(&fx).map(|(p, v)| p * v).sum();
            let newest = next.individual[n];
            let expected = kept + newest * v_now + next.new_species * ef;
            worst = worst.max((expected - v_now).abs());
        }
        now = Some(next);
    }
    Ok(worst)
}

/// Negative control for the CID check: `r'_n = min(factor · r_n, 1)` with the
/// repeat weights rescaled to keep the total at one.
#[derive(Debug, Clone)]
pub struct ScaledNewSpecies {
    pub inner: Arc<dyn PredictionRule>,
    pub factor: f64,
}

impl PredictionRule for ScaledNewSpecies {
    fn name(&self) -> String {
        format!("{} with r scaled by {}", self.inner.name(), self.factor)
    }

    fn individual_weights(&self, partition: &Partition, y: &[f64]) -> Result<Weights> {
        let w = self.inner.individual_weights(partition, y)?;
        let r = (self.factor * w.new_species).min(1.0);
        let scale = if w.new_species < 1.0 {
            (1.0 - r) / (1.0 - w.new_species)
        } else {
            0.0
        };
        Ok(Weights {
            individual: w.individual.iter().map(|p| p * scale).collect(),
            new_species: r,
        })
    }

    fn is_partition_free(&self) -> bool {
        self.inner.is_partition_free()
    }
}

/// Negative control for the martingale audit: moves
/// `ε = min(max_offset, r_n / 2)` from `r_n` onto the newest weight `p_{n,n}`.
#[derive(Debug, Clone)]
pub struct OffsetNewest {
    pub inner: Arc<dyn PredictionRule>,
    pub max_offset: f64,
}

impl PredictionRule for OffsetNewest {
    fn name(&self) -> String {
        format!("{} with newest weight offset by {}", self.inner.name(), self.max_offset)
    }

    fn individual_weights(&self, partition: &Partition, y: &[f64]) -> Result<Weights> {
        let mut w = self.inner.individual_weights(partition, y)?;
        let eps = self.max_offset.min(w.new_species / 2.0);
        if let Some(last) = w.individual.last_mut() {
            *last += eps;
            w.new_species -= eps;
        }
        Ok(w)
    }

    fn is_partition_free(&self) -> bool {
        self.inner.is_partition_free()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::simulate;
    use crate::families::{
        blackwell_macqueen, deterministic_rn, reinforced_bm, reinforced_polya, two_param_pd_generalized,
        FamilySpec,
    };
    use crate::weights::{DeterministicSeq, WeightDist};

    fn run(model: &Model, n_max: usize, samples: usize) -> CidReport {
        let mut rng = rng_for_replicate(2024, 0);
        check_cid_condition(model, n_max, samples, DEFAULT_CID_TOLERANCE, &mut rng).unwrap()
    }

    #[test]
    fn blackwell_macqueen_identity_at_n1_by_hand() {
        // LHS 1/(θ+1); RHS θ/(θ+1) · 1/(θ+2) + 2/(θ+2) · 1/(θ+1)
        for theta in [0.3, 1.0, 4.0] {
            let lhs: f64 = 1.0 / (theta + 1.0);
            let rhs = theta / (theta + 1.0) / (theta + 2.0) + 2.0 / (theta + 2.0) / (theta + 1.0);
            assert!((lhs - rhs).abs() < 1e-15);
            let report = run(&blackwell_macqueen(theta).unwrap(), 1, 1);
            assert!(report.worst_residual < 1e-15);
        }
    }

    #[test]
    fn exchangeable_members_hold_to_machine_precision() {
        for model in [
            blackwell_macqueen(1.7).unwrap(),
            two_param_pd_generalized(1.0, 0.5, WeightDist::PointMass { value: 1.0 }).unwrap(),
        ] {
            let report = run(&model, 6, 1);
            assert!(report.passed());
            assert!(report.worst_residual <= 1e-12, "{}", report.worst_residual);
            assert_eq!(report.partitions_checked, 1 + 2 + 5 + 15 + 52 + 203);
        }
    }

    #[test]
    fn two_param_with_random_weights_holds() {
        let model = two_param_pd_generalized(1.0, 0.5, WeightDist::Uniform { low: 1.0, high: 3.0 }).unwrap();
        let report = run(&model, 6, 4);
        assert!(report.worst_residual <= 1e-10, "{}", report.worst_residual);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn gos_families_hold() {
        for model in [
            reinforced_bm(0.8, WeightDist::ShiftedExp { shift: 0.5, rate: 2.0 }).unwrap(),
            deterministic_rn(DeterministicSeq::PowerDecay { theta: 1.0, alpha: 0.5 }).unwrap(),
            FamilySpec::MarkovChainY.build().unwrap(),
        ] {
            assert!(run(&model, 5, 3).passed());
        }
    }

    fn scaled(model: &Model) -> Model {
        Model::new(
            Arc::new(ScaledNewSpecies {
                inner: Arc::clone(&model.rule),
                factor: 1.1,
            }),
            model.weights.clone(),
            model.base.clone(),
        )
        .unwrap()
    }

    #[test]
    fn scaled_new_species_is_caught_early() {
        // hand evaluation at n = 1, θ = 1: r'_1 = 0.55, p'_{1,1} = 0.45,
        // r_2 = 1/3 → r'_2 = 11/30, each p'_{2,i} = (1/3)(19/30)/(2/3) = 19/60
        let lhs: f64 = 0.45;
        let rhs = 0.55 * 19.0 / 60.0 + (2.0 * 19.0 / 60.0) * 0.45;
        assert!((lhs - rhs).abs() > 1e-3);

        let bm = scaled(&blackwell_macqueen(1.0).unwrap());
        let report = run(&bm, 3, 1);
        assert!(!report.passed());
        assert!(report.violations.iter().any(|v| v.n == 1));
        let v = report.violations.iter().find(|v| v.n == 1).unwrap();
        assert!((v.lhs - lhs).abs() < 1e-15 && (v.rhs - rhs).abs() < 1e-15);

        let tp = scaled(
            &two_param_pd_generalized(1.0, 0.5, WeightDist::Uniform { low: 1.0, high: 3.0 }).unwrap(),
        );
        let report = run(&tp, 3, 2);
        assert!(report.violations.iter().any(|v| v.n <= 3));
    }

    #[test]
    fn cid_rejects_bad_inputs() {
        let mut rng = rng_for_replicate(0, 0);
        let bm = blackwell_macqueen(1.0).unwrap();
        assert!(check_cid_condition(&bm, 9, 1, 1e-9, &mut rng).is_err());
        assert!(check_cid_condition(&bm, 0, 1, 1e-9, &mut rng).is_err());
        assert!(check_cid_condition(&bm, 2, 0, 1e-9, &mut rng).is_err());
        let urn = reinforced_polya(1, 1, WeightDist::PointMass { value: 1.0 }).unwrap();
        assert!(check_cid_condition(&urn, 2, 1, 1e-9, &mut rng).is_err());
    }

    #[test]
    fn report_is_deterministic_and_serializes() {
        let model = two_param_pd_generalized(1.0, 0.5, WeightDist::Uniform { low: 1.0, high: 3.0 }).unwrap();
        let a = run(&model, 4, 2);
        let b = run(&model, 4, 2);
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: CidReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert!(json.contains("caveat"));
    }

    #[test]
    fn gos_paths_are_martingales() {
        let families = [
            blackwell_macqueen(1.0).unwrap(),
            reinforced_bm(1.0, WeightDist::Uniform { low: 1.0, high: 3.0 }).unwrap(),
            deterministic_rn(DeterministicSeq::PowerDecay { theta: 1.0, alpha: 0.5 }).unwrap(),
            FamilySpec::MarkovChainY.build().unwrap(),
            reinforced_polya(2, 1, WeightDist::Uniform { low: 0.5, high: 1.5 }).unwrap(),
        ];
        for (k, model) in families.iter().enumerate() {
            let mut rng = rng_for_replicate(31, k as u64);
            let t = simulate(model, 1000, &mut rng).unwrap();
            for f in TestFunction::defaults() {
                let res = martingale_audit(&t, model, &f).unwrap();
                assert!(res <= 1e-12, "{} {}: {res}", model.rule.name(), f.id());
            }
        }
    }

    #[test]
    fn offset_newest_breaks_the_martingale() {
        let base = deterministic_rn(DeterministicSeq::PowerDecay { theta: 1.0, alpha: 0.5 }).unwrap();
        let model = Model::new(
            Arc::new(OffsetNewest {
                inner: Arc::clone(&base.rule),
                max_offset: 0.01,
            }),
            base.weights.clone(),
            base.base.clone(),
        )
        .unwrap();
        let mut rng = rng_for_replicate(32, 0);
        let t = simulate(&model, 300, &mut rng).unwrap();
        let res = martingale_audit(&t, &model, &TestFunction::identity()).unwrap();
        assert!(res >= 1e-3, "residual {res}");
    }

    #[test]
    fn audit_needs_partition_free_rule() {
        let model = two_param_pd_generalized(1.0, 0.5, WeightDist::PointMass { value: 1.0 }).unwrap();
        let mut rng = rng_for_replicate(0, 0);
        let t = simulate(&model, 20, &mut rng).unwrap();
        assert!(martingale_audit(&t, &model, &TestFunction::identity()).is_err());
    }
}
