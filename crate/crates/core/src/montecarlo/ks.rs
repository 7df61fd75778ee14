//! One-sample Kolmogorov–Smirnov test.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{GosError, Result};

pub const MIN_KS_SAMPLES: usize = 50;

/// `sup_x |F_R(x) - F(x)|`, evaluated at both sides of every jump of the
/// empirical CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(GosError::domain("KS statistic of an empty sample"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(GosError::domain("KS sample contains NaN"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / r) - f).max(f - i as f64 / r)
        })
        .fold(0.0, f64::max))
}

/// Kolmogorov limiting tail `P(K > λ)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form, fast for small λ
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (-m * m * c).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Asymptotic p-value for statistic `d` on `n` samples, with Stephens'
/// small-sample correction `λ = (√n + 0.12 + 0.11/√n) d`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d)
}

/// Target law of a KS test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalTarget {
    pub variance: f64,
}

impl NormalTarget {
    pub const STANDARD: NormalTarget = NormalTarget { variance: 1.0 };

    pub fn label(&self) -> String {
        if self.variance == 1.0 {
            "N(0,1)".into()
        } else {
            format!("N(0,{})", self.variance)
        }
    }

    fn cdf(&self) -> Result<Normal> {
        Normal::new(0.0, self.variance.sqrt())
            .map_err(|e| GosError::domain(format!("invalid normal target: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn ks_test(samples: &[f64], target: NormalTarget) -> Result<KsOutcome> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(GosError::domain(format!(
            "KS test needs at least {MIN_KS_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let normal = target.cdf()?;
    let d = ks_statistic(samples, |x| normal.cdf(x))?;
    Ok(KsOutcome {
        statistic: d,
        p_value: ks_p_value(d, samples.len()),
        n: samples.len(),
    })
}
