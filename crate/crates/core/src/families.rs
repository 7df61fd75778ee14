//! Catalogue of concrete sequences, each a validated [`Model`].
//!
//! Families are addressable by name plus a string parameter map, which is
//! what the config file and the command line both produce.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::Model;
use crate::error::{GosError, Result};
use crate::measure::{Atom, BaseMeasure};
use crate::rule::{GosRule, Schedule, TwoParamRule};
use crate::weights::{DeterministicSeq, WeightDist, WeightProcess};

pub const FAMILY_NAMES: [&str; 7] = [
    "blackwell_macqueen",
    "two_param_pd_generalized",
    "reinforced_bm",
    "reinforced_polya",
    "deterministic_rn",
    "power_decay",
    "markov_chain_y",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    BlackwellMacqueen { theta: f64 },
    TwoParamPdGeneralized { theta: f64, alpha: f64, weights: WeightDist },
    ReinforcedBm { theta: f64, weights: WeightDist },
    /// Two colours, `1` = black with `μ({1}) = b / (b + r)`.
    ReinforcedPolya { b: u32, r: u32, weights: WeightDist },
    DeterministicRn { sequence: DeterministicSeq },
    /// `r_n = θ / (θ + n^{1-α})`
    PowerDecay { theta: f64, alpha: f64 },
    /// `r_n = Y_n` with the uniform-scaling Markov chain.
    MarkovChainY,
}

impl FamilySpec {
    pub fn name(&self) -> &'static str {
        match self {
            FamilySpec::BlackwellMacqueen { .. } => "blackwell_macqueen",
            FamilySpec::TwoParamPdGeneralized { .. } => "two_param_pd_generalized",
            FamilySpec::ReinforcedBm { .. } => "reinforced_bm",
            FamilySpec::ReinforcedPolya { .. } => "reinforced_polya",
            FamilySpec::DeterministicRn { .. } => "deterministic_rn",
            FamilySpec::PowerDecay { .. } => "power_decay",
            FamilySpec::MarkovChainY => "markov_chain_y",
        }
    }

    /// Build from a family name and `key = value` parameters. Recognised keys:
    /// `theta`, `alpha`, `b`, `r`, `weights` (a weight spec, default
    /// `point:1`) and `sequence` (a sequence spec).
    pub fn from_params(name: &str, params: &BTreeMap<String, String>) -> Result<Self> {
        let allowed: &[&str] = match name {
            "blackwell_macqueen" => &["theta"],
            "two_param_pd_generalized" => &["theta", "alpha", "weights"],
            "reinforced_bm" => &["theta", "weights"],
            "reinforced_polya" => &["b", "r", "weights"],
            "deterministic_rn" => &["sequence"],
            "power_decay" => &["theta", "alpha"],
            "markov_chain_y" => &[],
            other => {
                return Err(GosError::config(format!(
                    "unknown family '{other}' (expected one of {})",
                    FAMILY_NAMES.join(", ")
                )))
            }
        };
        if let Some(key) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(GosError::config(format!(
                "family '{name}' does not take parameter '{key}'"
            )));
        }
        let real = |key: &str| -> Result<f64> {
            let raw = params
                .get(key)
                .ok_or_else(|| GosError::config(format!("family '{name}' needs parameter '{key}'")))?;
            raw.trim()
                .parse::<f64>()
                .map_err(|_| GosError::config(format!("parameter '{key}' = '{raw}' is not a number")))
        };
        let count = |key: &str| -> Result<u32> {
            let v = real(key)?;
            if v.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&v) {
                return Err(GosError::config(format!("parameter '{key}' must be an integer >= 1")));
            }
            Ok(v as u32)
        };
        let weights = || -> Result<WeightDist> {
            match params.get("weights") {
                Some(spec) => WeightDist::parse(spec),
                None => Ok(WeightDist::PointMass { value: 1.0 }),
            }
        };
        let spec = match name {
            "blackwell_macqueen" => FamilySpec::BlackwellMacqueen { theta: real("theta")? },
            "two_param_pd_generalized" => FamilySpec::TwoParamPdGeneralized {
                theta: real("theta")?,
                alpha: real("alpha")?,
                weights: weights()?,
            },
            "reinforced_bm" => FamilySpec::ReinforcedBm {
                theta: real("theta")?,
                weights: weights()?,
            },
            "reinforced_polya" => FamilySpec::ReinforcedPolya {
                b: count("b")?,
                r: count("r")?,
                weights: weights()?,
            },
            "deterministic_rn" => FamilySpec::DeterministicRn {
                sequence: DeterministicSeq::parse(params.get("sequence").ok_or_else(|| {
                    GosError::config("family 'deterministic_rn' needs parameter 'sequence'")
                })?)?,
            },
            "power_decay" => FamilySpec::PowerDecay {
                theta: real("theta")?,
                alpha: real("alpha")?,
            },
            _ => FamilySpec::MarkovChainY,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parameters in the form accepted by [`from_params`](Self::from_params).
    pub fn params(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        match self {
            FamilySpec::BlackwellMacqueen { theta } => put("theta", theta.to_string()),
            FamilySpec::TwoParamPdGeneralized { theta, alpha, weights } => {
                put("theta", theta.to_string());
                put("alpha", alpha.to_string());
                put("weights", weights.to_string());
            }
            FamilySpec::ReinforcedBm { theta, weights } => {
                put("theta", theta.to_string());
                put("weights", weights.to_string());
            }
            FamilySpec::ReinforcedPolya { b, r, weights } => {
                put("b", b.to_string());
                put("r", r.to_string());
                put("weights", weights.to_string());
            }
            FamilySpec::DeterministicRn { sequence } => put("sequence", sequence.to_string()),
            FamilySpec::PowerDecay { theta, alpha } => {
                put("theta", theta.to_string());
                put("alpha", alpha.to_string());
            }
            FamilySpec::MarkovChainY => {}
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.build().map(|_| ())
    }

    /// The weight law when the weights are i.i.d.
    pub fn weight_law(&self) -> Option<WeightDist> {
        match self {
            FamilySpec::TwoParamPdGeneralized { weights, .. }
            | FamilySpec::ReinforcedBm { weights, .. }
            | FamilySpec::ReinforcedPolya { weights, .. } => Some(*weights),
            FamilySpec::BlackwellMacqueen { .. } => Some(WeightDist::PointMass { value: 1.0 }),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<Model> {
        match self {
            FamilySpec::BlackwellMacqueen { theta } => blackwell_macqueen(*theta),
            FamilySpec::TwoParamPdGeneralized { theta, alpha, weights } => {
                two_param_pd_generalized(*theta, *alpha, *weights)
            }
            FamilySpec::ReinforcedBm { theta, weights } => reinforced_bm(*theta, *weights),
            FamilySpec::ReinforcedPolya { b, r, weights } => reinforced_polya(*b, *r, *weights),
            FamilySpec::DeterministicRn { sequence } => deterministic_rn(sequence.clone()),
            FamilySpec::PowerDecay { theta, alpha } => power_decay(*theta, *alpha),
            FamilySpec::MarkovChainY => markov_chain_family(),
        }
    }
}

fn positive_theta(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > 0.0 {
        Ok(())
    } else {
        Err(GosError::domain(format!("theta must be > 0, got {theta}")))
    }
}

/// `p_{n,i} = 1/(θ+n)`, `r_n = θ/(θ+n)`, `Y ≡ 1`.
pub fn blackwell_macqueen(theta: f64) -> Result<Model> {
    positive_theta(theta)?;
    Model::new(
        Arc::new(GosRule::new(
            format!("blackwell_macqueen(theta={theta})"),
            Schedule::Reinforced { theta },
        )),
        WeightProcess::unit(),
        BaseMeasure::DiffuseUniform,
    )
}

/// Partition-dependent rule with block weights `(Σ_{i∈π_l} Y_i - α)/(θ+ΣY)`.
///
/// The weight support must lie in `(α, ∞)`; `Y ≡ 1` with `α ≤ 1` is also
/// accepted since every block weight is then `(|π_l| - α)/(θ+n) ≥ 0`.
pub fn two_param_pd_generalized(theta: f64, alpha: f64, weights: WeightDist) -> Result<Model> {
    let rule = TwoParamRule::new(theta, alpha)?;
    weights.validate()?;
    let unit = weights == WeightDist::PointMass { value: 1.0 };
    if !(weights.lower_bound() > alpha || (unit && alpha <= 1.0)) {
        return Err(GosError::domain(format!(
            "weight support must lie in (alpha, inf); {weights} has lower end {} with alpha = {alpha}",
            weights.lower_bound()
        )));
    }
    Model::new(
        Arc::new(rule),
        WeightProcess::iid(weights)?,
        BaseMeasure::DiffuseUniform,
    )
}

/// `r_n = θ / (θ + Σ_{j ≤ n} Y_j)`, `p_{n,i} = Y_i / (θ + Σ Y_j)`.
pub fn reinforced_bm(theta: f64, weights: WeightDist) -> Result<Model> {
    positive_theta(theta)?;
    Model::new(
        Arc::new(GosRule::new(
            format!("reinforced_bm(theta={theta}, weights={weights})"),
            Schedule::Reinforced { theta },
        )),
        WeightProcess::iid(weights)?,
        BaseMeasure::DiffuseUniform,
    )
}

/// Reinforced urn with `b` black (tag 1) and `r` red (tag 0) balls; a drawn
/// ball is returned with `Y_n` extra balls of its colour.
pub fn reinforced_polya(b: u32, r: u32, weights: WeightDist) -> Result<Model> {
    if b == 0 || r == 0 {
        return Err(GosError::domain("urn needs b >= 1 and r >= 1"));
    }
    let total = (b + r) as f64;
    let base = BaseMeasure::discrete(vec![
        Atom {
            value: 0.0,
            probability: r as f64 / total,
        },
        Atom {
            value: 1.0,
            probability: b as f64 / total,
        },
    ])?;
    Model::new(
        Arc::new(GosRule::new(
            format!("reinforced_polya(b={b}, r={r}, weights={weights})"),
            Schedule::Reinforced { theta: total },
        )),
        WeightProcess::iid(weights)?,
        base,
    )
}

/// `r_n = Y_n = a_n` for a deterministic non-increasing `a` with `a_0 = 1`.
pub fn deterministic_rn(sequence: DeterministicSeq) -> Result<Model> {
    sequence.validate_new_species_schedule()?;
    Model::new(
        Arc::new(GosRule::new(
            format!("deterministic_rn({sequence})"),
            Schedule::Sequence(sequence.clone()),
        )),
        WeightProcess::Deterministic { seq: sequence },
        BaseMeasure::DiffuseUniform,
    )
}

/// `a_n = θ / (θ + n^{1-α})`.
pub fn power_decay(theta: f64, alpha: f64) -> Result<Model> {
    deterministic_rn(DeterministicSeq::PowerDecay { theta, alpha })
}

/// `Y_1 = 1`, `Y_{n+1} | Y_n ~ Uniform(0, Y_n)`.
pub fn markov_chain_y() -> WeightProcess {
    WeightProcess::MarkovUniform
}

fn markov_chain_family() -> Result<Model> {
    Model::new(
        Arc::new(GosRule::new("markov_chain_y", Schedule::LastWeight)),
        markov_chain_y(),
        BaseMeasure::DiffuseUniform,
    )
}
