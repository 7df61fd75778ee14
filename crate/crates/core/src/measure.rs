//! Base measures for fresh species tags, and the bounded test functions
//! whose empirical and predictive means are tracked.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GosError, Result};

/// Grid size for midpoint quadrature of user test functions.
pub const QUADRATURE_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub probability: f64,
}

/// Distribution `μ` of a fresh tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaseMeasure {
    /// Uniform on `[0, 1]`; atomless.
    DiffuseUniform,
    /// Finitely many atoms, probabilities summing to one.
    Discrete(Vec<Atom>),
}

impl BaseMeasure {
    pub fn discrete(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(GosError::domain("discrete base measure needs at least one atom"));
        }
        let mut total = 0.0;
        for a in &atoms {
            if !a.value.is_finite() || !a.probability.is_finite() || a.probability < 0.0 {
                return Err(GosError::domain(format!("invalid atom {a:?}")));
            }
            total += a.probability;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(GosError::domain(format!(
                "atom probabilities sum to {total}, expected 1"
            )));
        }
        for (i, a) in atoms.iter().enumerate() {
            if atoms[..i].iter().any(|b| b.value == a.value) {
                return Err(GosError::domain(format!("duplicate atom value {}", a.value)));
            }
        }
        Ok(BaseMeasure::Discrete(atoms))
    }

    pub fn is_diffuse(&self) -> bool {
        matches!(self, BaseMeasure::DiffuseUniform)
    }

    pub fn atoms(&self) -> &[Atom] {
        match self {
            BaseMeasure::DiffuseUniform => &[],
            BaseMeasure::Discrete(atoms) => atoms,
        }
    }

    /// `μ({x})`.
    pub fn mass_at(&self, x: f64) -> f64 {
        self.atoms()
            .iter()
            .filter(|a| a.value == x)
            .map(|a| a.probability)
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            BaseMeasure::DiffuseUniform => rng.random::<f64>(),
            BaseMeasure::Discrete(atoms) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.probability;
                    if u < acc {
                        return a.value;
                    }
                }
                atoms[atoms.len() - 1].value
            }
        }
    }

    /// `E[f(X_1)]` under this measure.
    pub fn mean_of(&self, f: &TestFunction) -> f64 {
        match self {
            BaseMeasure::DiffuseUniform => f.uniform_mean,
            BaseMeasure::Discrete(atoms) => {
                atoms.iter().map(|a| a.probability * f.eval(a.value)).sum()
            }
        }
    }
}

#[derive(Clone)]
enum Kind {
    /// `1{x ≤ t}`
    Indicator(f64),
    /// `x^k`
    Power(i32),
    Constant(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// A bounded real function of the tag.
#[derive(Clone)]
pub struct TestFunction {
    id: String,
    kind: Kind,
    bound: f64,
    /// `∫_0^1 f`, closed form for built-ins, quadrature for custom functions.
    uniform_mean: f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("id", &self.id)
            .field("bound", &self.bound)
            .field("uniform_mean", &self.uniform_mean)
            .finish()
    }
}

impl TestFunction {
    /// `1{x ≤ threshold}`.
    pub fn indicator(threshold: f64) -> Self {
        let id = if threshold == 0.5 {
            "indicator".to_string()
        } else {
            format!("indicator:{threshold}")
        };
        TestFunction {
            id,
            kind: Kind::Indicator(threshold),
            bound: 1.0,
            uniform_mean: threshold.clamp(0.0, 1.0),
        }
    }

    pub fn identity() -> Self {
        Self::power(1)
    }

    pub fn square() -> Self {
        Self::power(2)
    }

    /// `x^k` for `k ≥ 1`; bounded by 1 on `[0, 1]`.
    pub fn power(k: i32) -> Self {
        let id = match k {
            1 => "identity".to_string(),
            2 => "square".to_string(),
            _ => format!("power:{k}"),
        };
        TestFunction {
            id,
            kind: Kind::Power(k),
            bound: 1.0,
            uniform_mean: 1.0 / (k as f64 + 1.0),
        }
    }

    pub fn constant(c: f64) -> Self {
        TestFunction {
            id: format!("const:{c}"),
            kind: Kind::Constant(c),
            bound: c.abs(),
            uniform_mean: c,
        }
    }

    /// A user function with a declared bound. Its mean under the uniform
    /// base measure is computed once here by midpoint quadrature.
    pub fn custom(
        id: impl Into<String>,
        bound: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let h = 1.0 / QUADRATURE_POINTS as f64;
        let uniform_mean = (0..QUADRATURE_POINTS)
            .map(|k| f((k as f64 + 0.5) * h))
            .sum::<f64>()
            * h;
        TestFunction {
            id: id.into(),
            kind: Kind::Custom(Arc::new(f)),
            bound,
            uniform_mean,
        }
    }

    /// The three default functions: `1{x ≤ 1/2}`, `x`, `x²`.
    pub fn defaults() -> Vec<TestFunction> {
        vec![Self::indicator(0.5), Self::identity(), Self::square()]
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Indicator(t) => {
                if x <= *t {
                    1.0
                } else {
                    0.0
                }
            }
            Kind::Power(k) => x.powi(*k),
            Kind::Constant(c) => *c,
            Kind::Custom(f) => f(x),
        }
    }

    /// `f²`, needed for the `V_{f²}` plug-ins.
    pub fn squared(&self) -> TestFunction {
        match &self.kind {
            Kind::Indicator(_) => self.clone(),
            Kind::Power(k) => Self::power(2 * k),
            Kind::Constant(c) => Self::constant(c * c),
            Kind::Custom(f) => {
                let f = Arc::clone(f);
                Self::custom(format!("({})^2", self.id), self.bound * self.bound, move |x| {
                    let v = f(x);
                    v * v
                })
            }
        }
    }

    /// True when `f` is constant, so every fluctuation statistic vanishes.
    pub fn is_constant(&self) -> bool {
        matches!(self.kind, Kind::Constant(_))
    }

    /// Parse `indicator`, `indicator:<t>`, `identity`, `square`, `power:<k>`,
    /// `const:<c>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (spec, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| GosError::parse(format!("test function '{name}' needs an argument")))?;
            let v: f64 = a
                .parse()
                .map_err(|_| GosError::parse(format!("bad number '{a}' in test function")))?;
            if !v.is_finite() {
                return Err(GosError::parse("test function argument must be finite"));
            }
            Ok(v)
        };
        match (name, arg) {
            ("indicator", None) => Ok(Self::indicator(0.5)),
            ("indicator", a) => Ok(Self::indicator(num(a)?)),
            ("identity", None) => Ok(Self::identity()),
            ("square", None) => Ok(Self::square()),
            ("power", a) => {
                let k = num(a)?;
                if k.fract() != 0.0 || !(1.0..=16.0).contains(&k) {
                    return Err(GosError::parse("power exponent must be an integer in 1..=16"));
                }
                Ok(Self::power(k as i32))
            }
            ("const", a) => Ok(Self::constant(num(a)?)),
            _ => Err(GosError::parse(format!("unknown test function '{spec}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for_replicate;

    #[test]
    fn discrete_measure_validation() {
        let ok = BaseMeasure::discrete(vec![
            Atom { value: 0.0, probability: 0.25 },
            Atom { value: 1.0, probability: 0.75 },
        ]);
        assert!(ok.is_ok());
        let bad = BaseMeasure::discrete(vec![Atom { value: 0.0, probability: 0.5 }]);
        assert!(bad.is_err());
        let neg = BaseMeasure::discrete(vec![
            Atom { value: 0.0, probability: -0.5 },
            Atom { value: 1.0, probability: 1.5 },
        ]);
        assert!(neg.is_err());
    }

    #[test]
    fn closed_form_means_match_quadrature() {
        for f in TestFunction::defaults() {
            let g = f.clone();
            let q = TestFunction::custom("q", 1.0, move |x| g.eval(x));
            assert!((q.uniform_mean - f.uniform_mean).abs() < 1e-6, "{}", f.id());
        }
    }

    #[test]
    fn discrete_mean_is_exact() {
        let mu = BaseMeasure::discrete(vec![
            Atom { value: 0.0, probability: 0.5 },
            Atom { value: 1.0, probability: 0.5 },
        ])
        .unwrap();
        assert_eq!(mu.mean_of(&TestFunction::identity()), 0.5);
        assert_eq!(mu.mean_of(&TestFunction::indicator(0.5)), 0.5);
        assert_eq!(mu.mass_at(1.0), 0.5);
        assert_eq!(mu.mass_at(0.3), 0.0);
    }

    #[test]
    fn uniform_samples_in_unit_interval() {
        let mut rng = rng_for_replicate(1, 0);
        for _ in 0..1000 {
            let x = BaseMeasure::DiffuseUniform.sample(&mut rng);
            assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn squared_functions() {
        assert_eq!(TestFunction::identity().squared().id(), "square");
        assert_eq!(TestFunction::square().squared().eval(0.5), 0.0625);
        assert_eq!(TestFunction::indicator(0.5).squared().eval(0.2), 1.0);
        assert_eq!(TestFunction::constant(3.0).squared().eval(0.2), 9.0);
    }

    #[test]
    fn parse_ids() {
        assert_eq!(TestFunction::parse("indicator").unwrap().id(), "indicator");
        assert_eq!(TestFunction::parse("indicator:0.25").unwrap().eval(0.3), 0.0);
        assert_eq!(TestFunction::parse("power:3").unwrap().eval(0.5), 0.125);
        assert!(TestFunction::parse("const:2").unwrap().is_constant());
        assert!(TestFunction::parse("power:0.5").is_err());
        assert!(TestFunction::parse("sine").is_err());
        assert!(TestFunction::parse("const:nan").is_err());
    }
}
