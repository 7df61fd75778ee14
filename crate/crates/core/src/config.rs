//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [family]
//! name = "reinforced_bm"
//! theta = 1.0
//! weights = "uniform:1,3"
//!
//! [experiment]
//! horizon = 10000
//! replicates = 2000
//! seed = 42
//! functions = ["indicator", "identity", "square"]
//! growth = "log"
//! truncation = 100000
//!
//! [tests]
//! run = ["clt_s", "clt_w"]
//! ks_threshold = 0.01
//!
//! [output]
//! dir = "out"
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GosError, Result};
use crate::families::FamilySpec;
use crate::measure::TestFunction;
use crate::stats::GrowthSeq;

/// Smallest horizon accepted by the harness.
pub const MIN_HORIZON: usize = 10;
/// Smallest replicate count for distributional tests.
pub const MIN_DISTRIBUTIONAL_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Lln,
    CltT,
    CltS,
    CltW,
    Cid,
    Martingale,
    Bernoulli,
}

impl TestKind {
    pub const ALL: [TestKind; 7] = [
        TestKind::Lln,
        TestKind::CltT,
        TestKind::CltS,
        TestKind::CltW,
        TestKind::Cid,
        TestKind::Martingale,
        TestKind::Bernoulli,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TestKind::Lln => "lln",
            TestKind::CltT => "clt_t",
            TestKind::CltS => "clt_s",
            TestKind::CltW => "clt_w",
            TestKind::Cid => "cid",
            TestKind::Martingale => "martingale",
            TestKind::Bernoulli => "bernoulli",
        }
    }

    /// Tests whose verdict is a distributional comparison over replicates.
    pub fn is_distributional(&self) -> bool {
        matches!(
            self,
            TestKind::CltT | TestKind::CltS | TestKind::CltW | TestKind::Bernoulli
        )
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| GosError::config(format!("unknown test '{s}'")))
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_ks_threshold() -> f64 {
    0.01
}
fn default_lln_tolerance() -> f64 {
    0.15
}
fn default_variance_floor() -> f64 {
    1e-6
}
fn default_u_tolerance() -> f64 {
    0.02
}
fn default_h_tolerance() -> f64 {
    0.10
}
fn default_cid_nmax() -> usize {
    crate::cid::DEFAULT_CID_NMAX
}
fn default_cid_samples() -> usize {
    20
}
fn default_cid_tolerance() -> f64 {
    crate::cid::DEFAULT_CID_TOLERANCE
}
fn default_martingale_tolerance() -> f64 {
    1e-12
}
fn default_martingale_steps() -> usize {
    1000
}
fn default_martingale_replicates() -> usize {
    20
}
fn default_bernoulli_start() -> usize {
    10
}
fn default_bernoulli_window() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSettings {
    #[serde(default)]
    pub run: Vec<TestKind>,
    /// Pass iff the KS / chi-square p-value is at least this.
    #[serde(default = "default_ks_threshold")]
    pub ks_threshold: f64,
    /// Tolerance on the mean of `|L_n/h_n - L|`.
    #[serde(default = "default_lln_tolerance")]
    pub lln_tolerance: f64,
    /// User-supplied limit `L` when the family has no analytic constant.
    #[serde(default)]
    pub lln_limit: Option<f64>,
    /// Replicates whose normalizing variance falls below this are excluded.
    #[serde(default = "default_variance_floor")]
    pub variance_floor: f64,
    /// Tolerance on the mean of `U_n - Δ(M^{f²} - (M^f)²)`.
    #[serde(default = "default_u_tolerance")]
    pub u_tolerance: f64,
    /// Relative tolerance on the mean truncated `H_n` against `h`.
    #[serde(default = "default_h_tolerance")]
    pub h_tolerance: f64,
    #[serde(default = "default_cid_nmax")]
    pub cid_nmax: usize,
    #[serde(default = "default_cid_samples")]
    pub cid_samples: usize,
    #[serde(default = "default_cid_tolerance")]
    pub cid_tolerance: f64,
    #[serde(default = "default_martingale_tolerance")]
    pub martingale_tolerance: f64,
    /// Steps audited per trajectory (the audit is quadratic in the steps).
    #[serde(default = "default_martingale_steps")]
    pub martingale_steps: usize,
    #[serde(default = "default_martingale_replicates")]
    pub martingale_replicates: usize,
    /// First audited increment is `U_{k+1}`.
    #[serde(default = "default_bernoulli_start")]
    pub bernoulli_start: usize,
    #[serde(default = "default_bernoulli_window")]
    pub bernoulli_window: usize,
}

impl Default for TestSettings {
    fn default() -> Self {
        TestSettings {
            run: Vec::new(),
            ks_threshold: default_ks_threshold(),
            lln_tolerance: default_lln_tolerance(),
            lln_limit: None,
            variance_floor: default_variance_floor(),
            u_tolerance: default_u_tolerance(),
            h_tolerance: default_h_tolerance(),
            cid_nmax: default_cid_nmax(),
            cid_samples: default_cid_samples(),
            cid_tolerance: default_cid_tolerance(),
            martingale_tolerance: default_martingale_tolerance(),
            martingale_steps: default_martingale_steps(),
            martingale_replicates: default_martingale_replicates(),
            bernoulli_start: default_bernoulli_start(),
            bernoulli_window: default_bernoulli_window(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: FamilySpec,
    /// Test-function ids, see [`TestFunction::parse`].
    pub functions: Vec<String>,
    /// `n`
    pub horizon: usize,
    /// `R`
    pub replicates: usize,
    pub seed: Option<u64>,
    /// Normalizing sequence for `L_n`; defaults to the family's analytic one.
    pub growth: Option<String>,
    /// `N` for `M_N` and the `H_n` truncation; defaults to `25 n`.
    pub truncation: Option<usize>,
    pub tests: TestSettings,
    pub output: OutputSettings,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    horizon: usize,
    #[serde(default = "default_replicates")]
    replicates: usize,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    functions: Option<Vec<String>>,
    #[serde(default)]
    growth: Option<String>,
    #[serde(default)]
    truncation: Option<usize>,
}

fn default_replicates() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    family: toml::Table,
    experiment: RawExperiment,
    #[serde(default)]
    tests: TestSettings,
    #[serde(default)]
    output: OutputSettings,
}

/// Read `name` and the remaining keys of a `[family]` table as strings.
fn family_from_table(table: &toml::Table) -> Result<FamilySpec> {
    let name = match table.get("name") {
        Some(toml::Value::String(s)) => s.clone(),
        Some(_) => return Err(GosError::config("[family] name must be a string")),
        None => return Err(GosError::config("[family] needs a 'name'")),
    };
    let mut params = BTreeMap::new();
    for (key, value) in table.iter().filter(|(k, _)| k.as_str() != "name") {
        let text = match value {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(x) => x.to_string(),
            other => {
                return Err(GosError::config(format!(
                    "[family] {key} must be a number or string, got {}",
                    other.type_str()
                )))
            }
        };
        params.insert(key.clone(), text);
    }
    FamilySpec::from_params(&name, &params)
}

impl ExperimentConfig {
    /// A config with default test settings and the three default functions.
    pub fn new(family: FamilySpec, horizon: usize, replicates: usize, seed: u64) -> Self {
        ExperimentConfig {
            family,
            functions: TestFunction::defaults().iter().map(|f| f.id().to_string()).collect(),
            horizon,
            replicates,
            seed: Some(seed),
            growth: None,
            truncation: None,
            tests: TestSettings::default(),
            output: OutputSettings::default(),
        }
    }

    /// Parse TOML text without validating (so overrides can be applied first).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| GosError::config(format!("invalid config: {e}")))?;
        Ok(ExperimentConfig {
            family: family_from_table(&raw.family)?,
            functions: raw.experiment.functions.unwrap_or_else(|| {
                TestFunction::defaults().iter().map(|f| f.id().to_string()).collect()
            }),
            horizon: raw.experiment.horizon,
            replicates: raw.experiment.replicates,
            seed: raw.experiment.seed,
            growth: raw.experiment.growth,
            truncation: raw.experiment.truncation,
            tests: raw.tests,
            output: raw.output,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GosError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| GosError::config("a seed is required (set experiment.seed or --seed)"))
    }

    pub fn test_functions(&self) -> Result<Vec<TestFunction>> {
        self.functions.iter().map(|s| TestFunction::parse(s)).collect()
    }

    /// `N`: the horizon for `M_N` and `H_n`.
    pub fn truncation_horizon(&self) -> usize {
        self.truncation.unwrap_or(25 * self.horizon)
    }

    /// Steps each replicate must simulate.
    pub fn simulated_steps(&self) -> usize {
        if self.tests.run.contains(&TestKind::CltW) {
            self.truncation_horizon().max(self.horizon)
        } else {
            self.horizon
        }
    }

    /// The configured growth sequence, else the family's analytic one.
    pub fn growth_seq(&self) -> Result<Option<GrowthSeq>> {
        match &self.growth {
            Some(g) => GrowthSeq::parse(g).map(Some),
            None => {
                let f = TestFunction::identity();
                Ok(crate::stats::limit_constants(&self.family, &f).growth_seq())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate().map_err(|e| GosError::config(e.to_string()))?;
        self.require_seed()?;
        if self.horizon < MIN_HORIZON {
            return Err(GosError::config(format!(
                "horizon must be at least {MIN_HORIZON}, got {}",
                self.horizon
            )));
        }
        if self.replicates == 0 {
            return Err(GosError::config("replicates must be at least 1"));
        }
        if let Some(kind) = self.tests.run.iter().find(|k| k.is_distributional()) {
            if self.replicates < MIN_DISTRIBUTIONAL_REPLICATES {
                return Err(GosError::config(format!(
                    "test '{kind}' needs at least {MIN_DISTRIBUTIONAL_REPLICATES} replicates, got {}",
                    self.replicates
                )));
            }
        }
        if self.functions.is_empty() {
            return Err(GosError::config("at least one test function is required"));
        }
        self.test_functions().map_err(|e| GosError::config(e.to_string()))?;
        self.growth_seq().map_err(|e| GosError::config(e.to_string()))?;
        if let Some(n_big) = self.truncation {
            if n_big <= self.horizon {
                return Err(GosError::config(format!(
                    "truncation ({n_big}) must exceed the horizon ({})",
                    self.horizon
                )));
            }
        }
        let t = &self.tests;
        if !(t.ks_threshold > 0.0 && t.ks_threshold < 1.0) {
            return Err(GosError::config("ks_threshold must lie in (0, 1)"));
        }
        for (name, v) in [
            ("lln_tolerance", t.lln_tolerance),
            ("variance_floor", t.variance_floor),
            ("u_tolerance", t.u_tolerance),
            ("h_tolerance", t.h_tolerance),
            ("cid_tolerance", t.cid_tolerance),
            ("martingale_tolerance", t.martingale_tolerance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GosError::config(format!("{name} must be a nonnegative number")));
            }
        }
        if t.cid_nmax == 0 || t.cid_nmax > crate::cid::MAX_CID_NMAX {
            return Err(GosError::config(format!(
                "cid_nmax must lie in 1..={}",
                crate::cid::MAX_CID_NMAX
            )));
        }
        if t.cid_samples == 0 || t.martingale_steps == 0 || t.martingale_replicates == 0 {
            return Err(GosError::config("cid_samples, martingale_steps and martingale_replicates must be positive"));
        }
        if t.run.contains(&TestKind::Bernoulli) {
            if t.bernoulli_window == 0 || t.bernoulli_window > 10 {
                return Err(GosError::config("bernoulli_window must lie in 1..=10"));
            }
            if t.bernoulli_start + t.bernoulli_window > self.horizon {
                return Err(GosError::config("bernoulli window extends past the horizon"));
            }
        }
        Ok(())
    }
}
