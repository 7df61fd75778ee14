//! The latent weight process `(Y_n)`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{GosError, Result};

/// A drawn weight together with its logarithm.
///
/// The Markov weight chain decays geometrically and leaves the `f64` range
/// after a few hundred steps; the log is exact even when `value` underflows
/// to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weight {
    pub value: f64,
    pub ln: f64,
}

impl Weight {
    pub fn new(value: f64) -> Self {
        Weight {
            value,
            ln: value.ln(),
        }
    }

    fn from_ln(ln: f64) -> Self {
        Weight { value: ln.exp(), ln }
    }
}

/// Marginal law of an independent weight. Every variant has all moments
/// finite and a strictly positive lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightDist {
    PointMass { value: f64 },
    Uniform { low: f64, high: f64 },
    /// `shift + Exp(rate)`
    ShiftedExp { shift: f64, rate: f64 },
    /// `low` with probability `p_low`, otherwise `high`.
    TwoPoint { low: f64, high: f64, p_low: f64 },
}

impl WeightDist {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        let ok = match *self {
            WeightDist::PointMass { value } => finite_pos(value),
            WeightDist::Uniform { low, high } => finite_pos(low) && high.is_finite() && low < high,
            WeightDist::ShiftedExp { shift, rate } => finite_pos(shift) && finite_pos(rate),
            WeightDist::TwoPoint { low, high, p_low } => {
                finite_pos(low) && high.is_finite() && low < high && (0.0..=1.0).contains(&p_low)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(GosError::domain(format!("invalid weight distribution {self}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            WeightDist::PointMass { value } => value,
            WeightDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            WeightDist::ShiftedExp { shift, rate } => {
                // rate was validated positive
                shift + Exp::new(rate).expect("positive rate").sample(rng)
            }
            WeightDist::TwoPoint { low, high, p_low } => {
                if rng.random::<f64>() < p_low {
                    low
                } else {
                    high
                }
            }
        }
    }

    /// `m = E[Y]`
    pub fn mean(&self) -> f64 {
        match *self {
            WeightDist::PointMass { value } => value,
            WeightDist::Uniform { low, high } => 0.5 * (low + high),
            WeightDist::ShiftedExp { shift, rate } => shift + 1.0 / rate,
            WeightDist::TwoPoint { low, high, p_low } => p_low * low + (1.0 - p_low) * high,
        }
    }

    /// `δ = E[Y²]`
    pub fn second_moment(&self) -> f64 {
        match *self {
            WeightDist::PointMass { value } => value * value,
            WeightDist::Uniform { low, high } => (low * low + low * high + high * high) / 3.0,
            WeightDist::ShiftedExp { shift, rate } => {
                let m = shift + 1.0 / rate;
                m * m + 1.0 / (rate * rate)
            }
            WeightDist::TwoPoint { low, high, p_low } => {
                p_low * low * low + (1.0 - p_low) * high * high
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            WeightDist::PointMass { .. } => 0.0,
            WeightDist::Uniform { low, high } => (high - low).powi(2) / 12.0,
            WeightDist::ShiftedExp { rate, .. } => 1.0 / (rate * rate),
            WeightDist::TwoPoint { low, high, p_low } => {
                p_low * (1.0 - p_low) * (high - low).powi(2)
            }
        }
    }

    /// `Δ = Var[Y] / E[Y]²`
    pub fn relative_variance(&self) -> f64 {
        self.variance() / self.mean().powi(2)
    }

    /// Essential infimum `γ` of the support.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            WeightDist::PointMass { value } => value,
            WeightDist::Uniform { low, .. } => low,
            WeightDist::ShiftedExp { shift, .. } => shift,
            WeightDist::TwoPoint { low, high, p_low } => {
                if p_low > 0.0 {
                    low
                } else {
                    high
                }
            }
        }
    }

    /// Parse `point:<c>`, `uniform:<a>,<b>`, `shifted_exp:<shift>,<rate>`,
    /// `two_point:<a>,<b>,<p_a>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (name, args) = spec
            .split_once(':')
            .ok_or_else(|| GosError::parse(format!("weight spec '{spec}' must look like <dist>:<params>")))?;
        let args: Vec<f64> = args
            .split(',')
            .map(|a| {
                let a = a.trim();
                a.parse::<f64>()
                    .map_err(|_| GosError::parse(format!("bad number '{a}' in weight spec")))
            })
            .collect::<Result<_>>()?;
        let arity = |k: usize| -> Result<()> {
            if args.len() == k {
                Ok(())
            } else {
                Err(GosError::parse(format!(
                    "weight distribution '{name}' takes {k} parameter(s), got {}",
                    args.len()
                )))
            }
        };
        let dist = match name.trim() {
            "point" => {
                arity(1)?;
                WeightDist::PointMass { value: args[0] }
            }
            "uniform" => {
                arity(2)?;
                WeightDist::Uniform {
                    low: args[0],
                    high: args[1],
                }
            }
            "shifted_exp" => {
                arity(2)?;
                WeightDist::ShiftedExp {
                    shift: args[0],
                    rate: args[1],
                }
            }
            "two_point" => {
                arity(3)?;
                WeightDist::TwoPoint {
                    low: args[0],
                    high: args[1],
                    p_low: args[2],
                }
            }
            other => return Err(GosError::parse(format!("unknown weight distribution '{other}'"))),
        };
        dist.validate().map_err(|e| GosError::parse(e.to_string()))?;
        Ok(dist)
    }
}

impl fmt::Display for WeightDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            WeightDist::PointMass { value } => write!(f, "point:{value}"),
            WeightDist::Uniform { low, high } => write!(f, "uniform:{low},{high}"),
            WeightDist::ShiftedExp { shift, rate } => write!(f, "shifted_exp:{shift},{rate}"),
            WeightDist::TwoPoint { low, high, p_low } => write!(f, "two_point:{low},{high},{p_low}"),
        }
    }
}

/// A numeric sequence `(a_n)_{n ≥ 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeterministicSeq {
    Constant { value: f64 },
    /// `a_n = θ / (θ + n^{1-α})`
    PowerDecay { theta: f64, alpha: f64 },
    /// `a_n = ratio^n`
    Geometric { ratio: f64 },
    /// `a_n = values[n]`; only defined up to `values.len() - 1`.
    Explicit { values: Arc<[f64]> },
}

impl DeterministicSeq {
    pub fn ln_value(&self, n: usize) -> Result<f64> {
        match self {
            DeterministicSeq::Constant { value } => Ok(value.ln()),
            DeterministicSeq::PowerDecay { theta, alpha } => {
                Ok(theta.ln() - (theta + (n as f64).powf(1.0 - alpha)).ln())
            }
            DeterministicSeq::Geometric { ratio } => Ok(n as f64 * ratio.ln()),
            DeterministicSeq::Explicit { values } => values
                .get(n)
                .map(|v| v.ln())
                .ok_or_else(|| GosError::domain(format!("explicit sequence has no term a_{n}"))),
        }
    }

    pub fn value(&self, n: usize) -> Result<f64> {
        match self {
            DeterministicSeq::Constant { value } => Ok(*value),
            DeterministicSeq::PowerDecay { theta, alpha } => {
                Ok(theta / (theta + (n as f64).powf(1.0 - alpha)))
            }
            DeterministicSeq::Explicit { values } => values
                .get(n)
                .copied()
                .ok_or_else(|| GosError::domain(format!("explicit sequence has no term a_{n}"))),
            DeterministicSeq::Geometric { ratio } => Ok(ratio.powf(n as f64)),
        }
    }

    /// Checks `a_0 = 1`, `a_n > 0` and `a` non-increasing.
    pub fn validate_new_species_schedule(&self) -> Result<()> {
        match self {
            DeterministicSeq::Constant { value } => {
                if *value != 1.0 {
                    return Err(GosError::domain(
                        "a constant new-species sequence must be identically 1 (a_0 = 1)",
                    ));
                }
            }
            DeterministicSeq::PowerDecay { theta, alpha } => {
                if !(theta.is_finite() && *theta > 0.0) {
                    return Err(GosError::domain("power decay needs theta > 0"));
                }
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(GosError::domain("power decay needs alpha in (0, 1)"));
                }
            }
            DeterministicSeq::Geometric { ratio } => {
                if !(*ratio > 0.0 && *ratio <= 1.0) {
                    return Err(GosError::domain("geometric sequence needs ratio in (0, 1]"));
                }
            }
            DeterministicSeq::Explicit { values } => {
                if values.first() != Some(&1.0) {
                    return Err(GosError::domain("explicit sequence must start with a_0 = 1"));
                }
                for (n, w) in values.windows(2).enumerate() {
                    if !(w[1] > 0.0 && w[1].is_finite()) {
                        return Err(GosError::domain(format!("a_{} must be positive", n + 1)));
                    }
                    if w[1] > w[0] {
                        return Err(GosError::domain(format!(
                            "sequence increases at n = {}: {} > {}",
                            n + 1,
                            w[1],
                            w[0]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl DeterministicSeq {
    /// Parse `constant:<c>`, `power_decay:<theta>,<alpha>`, `geometric:<q>`,
    /// `explicit:<a_0>,<a_1>,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (name, args) = spec
            .split_once(':')
            .ok_or_else(|| GosError::parse(format!("sequence spec '{spec}' must look like <kind>:<params>")))?;
        let args: Vec<f64> = args
            .split(',')
            .map(|a| {
                let a = a.trim();
                match a.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(GosError::parse(format!("bad number '{a}' in sequence spec"))),
                }
            })
            .collect::<Result<_>>()?;
        let arity = |k: usize| -> Result<()> {
            if args.len() == k {
                Ok(())
            } else {
                Err(GosError::parse(format!(
                    "sequence '{name}' takes {k} parameter(s), got {}",
                    args.len()
                )))
            }
        };
        match name.trim() {
            "constant" => {
                arity(1)?;
                Ok(DeterministicSeq::Constant { value: args[0] })
            }
            "power_decay" => {
                arity(2)?;
                Ok(DeterministicSeq::PowerDecay {
                    theta: args[0],
                    alpha: args[1],
                })
            }
            "geometric" => {
                arity(1)?;
                Ok(DeterministicSeq::Geometric { ratio: args[0] })
            }
            "explicit" => Ok(DeterministicSeq::Explicit { values: args.into() }),
            other => Err(GosError::parse(format!("unknown sequence kind '{other}'"))),
        }
    }
}

impl fmt::Display for DeterministicSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeterministicSeq::Constant { value } => write!(f, "constant:{value}"),
            DeterministicSeq::PowerDecay { theta, alpha } => write!(f, "power_decay:{theta},{alpha}"),
            DeterministicSeq::Geometric { ratio } => write!(f, "geometric:{ratio}"),
            DeterministicSeq::Explicit { values } => {
                let parts: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                write!(f, "explicit:{}", parts.join(","))
            }
        }
    }
}

/// How `Y_n` is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightProcess {
    /// `Y_n` i.i.d.
    Iid { dist: WeightDist },
    /// Independent, `Y_n ~ dists[n-1]`; the last law repeats.
    Independent { dists: Arc<[WeightDist]> },
    /// `Y_1 = 1`, `Y_{n+1} | Y_n ~ Uniform(0, Y_n)`.
    MarkovUniform,
    /// `Y_n = a_n`.
    Deterministic { seq: DeterministicSeq },
}

/// Mutable per-trajectory state of the weight process.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WeightState {
    last_ln: f64,
}

impl WeightProcess {
    pub fn iid(dist: WeightDist) -> Result<Self> {
        dist.validate()?;
        Ok(WeightProcess::Iid { dist })
    }

    pub fn unit() -> Self {
        WeightProcess::Deterministic {
            seq: DeterministicSeq::Constant { value: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WeightProcess::Iid { dist } => dist.validate(),
            WeightProcess::Independent { dists } => {
                if dists.is_empty() {
                    return Err(GosError::domain("independent weight process needs at least one law"));
                }
                dists.iter().try_for_each(WeightDist::validate)
            }
            WeightProcess::MarkovUniform => Ok(()),
            WeightProcess::Deterministic { seq } => match seq {
                DeterministicSeq::Constant { value } if !(*value > 0.0 && value.is_finite()) => {
                    Err(GosError::domain("constant weight must be positive"))
                }
                _ => Ok(()),
            },
        }
    }

    /// Draw `Y_n` (`n ≥ 1`).
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        state: &mut WeightState,
        rng: &mut R,
    ) -> Result<Weight> {
        let w = match self {
            WeightProcess::Iid { dist } => Weight::new(dist.sample(rng)),
            WeightProcess::Independent { dists } => {
                let dist = dists[(n - 1).min(dists.len() - 1)];
                Weight::new(dist.sample(rng))
            }
            WeightProcess::MarkovUniform => {
                if n == 1 {
                    Weight::new(1.0)
                } else {
                    // 1 - U lies in (0, 1], so Y_{n+1} <= Y_n
                    let u = 1.0 - rng.random::<f64>();
                    Weight::from_ln(state.last_ln + u.ln())
                }
            }
            WeightProcess::Deterministic { seq } => Weight::from_ln(seq.ln_value(n)?),
        };
        if !(w.ln.is_finite()) || w.value < 0.0 {
            return Err(GosError::Weight {
                step: n,
                message: format!("weight {} outside (0, inf)", w.value),
            });
        }
        state.last_ln = w.ln;
        Ok(w)
    }

    /// Lower end `γ` of the support, when the weights are bounded below.
    pub fn lower_bound(&self) -> f64 {
        match self {
            WeightProcess::Iid { dist } => dist.lower_bound(),
            WeightProcess::Independent { dists } => dists
                .iter()
                .map(WeightDist::lower_bound)
                .fold(f64::INFINITY, f64::min),
            WeightProcess::MarkovUniform => 0.0,
            WeightProcess::Deterministic { seq } => match seq {
                DeterministicSeq::Constant { value } => *value,
                DeterministicSeq::Explicit { values } => {
                    values.iter().skip(1).copied().fold(f64::INFINITY, f64::min)
                }
                _ => 0.0,
            },
        }
    }

    /// True for `Y ≡ 1`.
    pub fn is_unit(&self) -> bool {
        match self {
            WeightProcess::Deterministic {
                seq: DeterministicSeq::Constant { value },
            } => *value == 1.0,
            WeightProcess::Iid {
                dist: WeightDist::PointMass { value },
            } => *value == 1.0,
            _ => false,
        }
    }

    /// The common law for i.i.d. weights (including `Y ≡ c`).
    pub fn iid_law(&self) -> Option<WeightDist> {
        match self {
            WeightProcess::Iid { dist } => Some(*dist),
            WeightProcess::Deterministic {
                seq: DeterministicSeq::Constant { value },
            } => Some(WeightDist::PointMass { value: *value }),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for_replicate;

    #[test]
    fn uniform_1_3_moments() {
        // m = 2, δ = (1 + 3 + 9)/3 = 13/3, Var = 4/12, Δ = 1/12
        let d = WeightDist::Uniform { low: 1.0, high: 3.0 };
        assert!((d.mean() - 2.0).abs() < 1e-15);
        assert!((d.second_moment() - 13.0 / 3.0).abs() < 1e-15);
        assert!((d.relative_variance() - 1.0 / 12.0).abs() < 1e-15);
        assert!((d.second_moment() - d.variance() - d.mean().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn moments_agree_with_numeric_integration() {
        // midpoint rule on the density of each continuous law
        let uni = WeightDist::Uniform { low: 1.0, high: 3.0 };
        let k = 200_000;
        let h = 2.0 / k as f64;
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..k {
            let y = 1.0 + (i as f64 + 0.5) * h;
            m1 += y * 0.5 * h;
            m2 += y * y * 0.5 * h;
        }
        assert!((m1 - uni.mean()).abs() < 1e-9);
        assert!((m2 - uni.second_moment()).abs() < 1e-8);

        let exp = WeightDist::ShiftedExp { shift: 0.5, rate: 2.0 };
        let (mut e1, mut e2) = (0.0, 0.0);
        let h = 1e-4;
        for i in 0..400_000 {
            let t = (i as f64 + 0.5) * h;
            let dens = 2.0 * (-2.0 * t).exp();
            let y = 0.5 + t;
            e1 += y * dens * h;
            e2 += y * y * dens * h;
        }
        assert!((e1 - exp.mean()).abs() < 1e-6);
        assert!((e2 - exp.second_moment()).abs() < 1e-6);
    }

    #[test]
    fn two_point_moments() {
        let d = WeightDist::TwoPoint { low: 1.0, high: 3.0, p_low: 0.25 };
        assert!((d.mean() - 2.5).abs() < 1e-15);
        assert!((d.second_moment() - (0.25 + 0.75 * 9.0)).abs() < 1e-15);
        assert!((d.second_moment() - d.variance() - d.mean().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn parse_round_trip_and_errors() {
        for s in ["point:1", "uniform:1,3", "shifted_exp:0.5,2", "two_point:1,3,0.25"] {
            let d = WeightDist::parse(s).unwrap();
            assert_eq!(WeightDist::parse(&d.to_string()).unwrap(), d);
        }
        assert!(WeightDist::parse("uniform:3,1").is_err());
        assert!(WeightDist::parse("uniform:0,1").is_err());
        assert!(WeightDist::parse("point").is_err());
        assert!(WeightDist::parse("gamma:1,2").is_err());
        assert!(WeightDist::parse("uniform:1").is_err());
        assert!(WeightDist::parse("two_point:1,2,1.5").is_err());
    }

    #[test]
    fn markov_chain_starts_at_one_and_decreases() {
        let wp = WeightProcess::MarkovUniform;
        let mut rng = rng_for_replicate(3, 0);
        let mut st = WeightState::default();
        let first = wp.sample(1, &mut st, &mut rng).unwrap();
        assert_eq!(first.value, 1.0);
        let mut prev = first.ln;
        for n in 2..2000 {
            let w = wp.sample(n, &mut st, &mut rng).unwrap();
            assert!(w.ln <= prev);
            assert!(w.ln.is_finite());
            prev = w.ln;
        }
    }

    #[test]
    fn markov_chain_third_mean_is_a_quarter() {
        // E[Y_{n+1}] = E[Y_n]/2, so E[Y_3] = 1/4; sd of Y_3 is sqrt(1/9 - 1/16)
        let wp = WeightProcess::MarkovUniform;
        let mut rng = rng_for_replicate(11, 0);
        let reps = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..reps {
            let mut st = WeightState::default();
            wp.sample(1, &mut st, &mut rng).unwrap();
            wp.sample(2, &mut st, &mut rng).unwrap();
            acc += wp.sample(3, &mut st, &mut rng).unwrap().value;
        }
        assert!((acc / reps as f64 - 0.25).abs() < 1e-3);
    }

    #[test]
    fn sequence_parse_round_trip() {
        for spec in ["constant:1", "power_decay:1,0.5", "geometric:0.5", "explicit:1,0.5,0.25"] {
            let seq = DeterministicSeq::parse(spec).unwrap();
            assert_eq!(seq.to_string(), spec);
        }
        assert!(DeterministicSeq::parse("geometric").is_err());
        assert!(DeterministicSeq::parse("power_decay:1").is_err());
        assert!(DeterministicSeq::parse("explicit:1,x").is_err());
    }

    #[test]
    fn deterministic_sequences() {
        let p = DeterministicSeq::PowerDecay { theta: 1.0, alpha: 0.5 };
        assert_eq!(p.value(0).unwrap(), 1.0);
        assert!((p.value(4).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        p.validate_new_species_schedule().unwrap();

        let g = DeterministicSeq::Geometric { ratio: 0.5 };
        assert_eq!(g.value(3).unwrap(), 0.125);
        assert!(g.ln_value(5000).unwrap().is_finite());

        let bad = DeterministicSeq::Explicit { values: vec![1.0, 0.5, 0.6].into() };
        assert!(bad.validate_new_species_schedule().is_err());
        let bad0 = DeterministicSeq::Explicit { values: vec![0.9, 0.5].into() };
        assert!(bad0.validate_new_species_schedule().is_err());
        let neg = DeterministicSeq::Explicit { values: vec![1.0, 0.0].into() };
        assert!(neg.validate_new_species_schedule().is_err());
        assert!(DeterministicSeq::Constant { value: 0.5 }
            .validate_new_species_schedule()
            .is_err());
    }

    #[test]
    fn explicit_sequence_runs_out() {
        let wp = WeightProcess::Deterministic {
            seq: DeterministicSeq::Explicit { values: vec![1.0, 0.5].into() },
        };
        let mut rng = rng_for_replicate(0, 0);
        let mut st = WeightState::default();
        assert_eq!(wp.sample(1, &mut st, &mut rng).unwrap().value, 0.5);
        assert!(wp.sample(2, &mut st, &mut rng).is_err());
    }

    #[test]
    fn iid_weights_stay_in_support() {
        let d = WeightDist::ShiftedExp { shift: 0.5, rate: 2.0 };
        let wp = WeightProcess::iid(d).unwrap();
        let mut rng = rng_for_replicate(5, 2);
        let mut st = WeightState::default();
        for n in 1..1000 {
            assert!(wp.sample(n, &mut st, &mut rng).unwrap().value >= 0.5);
        }
    }
}
