//! Latent-noise engine: lognormal attention-odds moments under
//! independent Gaussian logit noise, and their Monte Carlo checks.

use crate::attention::{softmax_row, LogitVector, WeightVector};
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Per-position logit noise scales over a sequence of length T >= 2.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    sigmas: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::domain("need at least two positions"));
        }
        if sigmas.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::domain("noise scales must be finite and >= 0"));
        }
        Ok(NoiseSpec { sigmas })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check_pair(&self, j: usize, k: usize) -> Result<()> {
        if j >= self.len() || k >= self.len() {
            return Err(Error::domain("position index out of range"));
        }
        if j == k {
            return Err(Error::domain("positions j and k must differ"));
        }
        Ok(())
    }

    /// Combined variance sigma_j^2 + sigma_k^2 of the log-odds.
    pub fn pair_variance(&self, j: usize, k: usize) -> Result<f64> {
        self.check_pair(j, k)?;
        Ok(self.sigmas[j] * self.sigmas[j] + self.sigmas[k] * self.sigmas[k])
    }
}

/// One attention row: softmax of Z with Z_j ~ N(0, sigma_j^2) independent.
pub fn sample_attention(rng: &mut CounterRng, spec: &NoiseSpec) -> WeightVector {
    let z: Vec<f64> = spec
        .sigmas
        .iter()
        .map(|&s| s * rng.standard_normal())
        .collect();
    softmax_row(&LogitVector::new(z).expect("finite by construction"))
}

/// log(p_j / p_k); rejects degenerate zero weights.
pub fn log_odds(weights: &WeightVector, j: usize, k: usize) -> Result<f64> {
    let v = weights.values();
    if j >= v.len() || k >= v.len() {
        return Err(Error::domain("position index out of range"));
    }
    if j == k {
        return Err(Error::domain("positions j and k must differ"));
    }
    if v[j] == 0.0 || v[k] == 0.0 {
        return Err(Error::domain("log-odds undefined for a zero weight"));
    }
    Ok((v[j] / v[k]).ln())
}

/// E[p_j / p_k] = exp((sigma_j^2 + sigma_k^2) / 2).
pub fn expected_odds(spec: &NoiseSpec, j: usize, k: usize) -> Result<f64> {
    Ok((spec.pair_variance(j, k)? / 2.0).exp())
}

/// Pr(p_j / p_k >= c) = 1 - Phi(log c / sqrt(sigma_j^2 + sigma_k^2)).
pub fn dominance_probability(spec: &NoiseSpec, j: usize, k: usize, c: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain("threshold c must be positive and finite"));
    }
    let var = spec.pair_variance(j, k)?;
    if var == 0.0 {
        return Err(Error::domain(
            "dominance probability degenerates when both noise scales are zero",
        ));
    }
    Ok(1.0 - normal_cdf(c.ln() / var.sqrt()))
}

const FRAC_2_SQRT_PI: f64 = 1.1283791670955126;

/// erf(x) for 0 <= x <= 3 via the cancellation-free power series
/// erf(x) = (2/sqrt(pi)) e^{-x^2} sum_n (2x^2)^n x / (1*3*...*(2n+1)).
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x2 / (2.0 * n as f64 + 1.0);
        let next = sum + term;
        if next == sum {
            break;
        }
        sum = next;
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

/// erfc(x) for x > 3 via the Lentz continued fraction
/// erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))).
fn erfc_cf(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..200 {
        let a = n as f64 / 2.0;
        d = x + a * d;
        if d == 0.0 {
            d = tiny;
        }
        c = x + a / c;
        if c == 0.0 {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() / (std::f64::consts::PI).sqrt() / f
}

fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x <= 3.0 {
        1.0 - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

/// Standard normal CDF Phi(x) = erfc(-x / sqrt(2)) / 2.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Monte Carlo summary of the attention-odds ratio p_j / p_k.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub mc_mean: f64,
    pub mc_se: f64,
    pub analytic_mean: f64,
    pub samples: usize,
}

/// Estimates E[p_j / p_k] over `samples` independent rows.
pub fn mc_moments(
    spec: &NoiseSpec,
    j: usize,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<MomentReport> {
    if samples < 2 {
        return Err(Error::domain("need at least two samples"));
    }
    spec.check_pair(j, k)?;
    let mut rng = CounterRng::stream(seed, 4, 0);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..samples {
        let w = sample_attention(&mut rng, spec);
        let r = w.values()[j] / w.values()[k];
        sum += r;
        sumsq += r * r;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(0.0);
    Ok(MomentReport {
        mc_mean: mean,
        mc_se: (var / n).sqrt(),
        analytic_mean: expected_odds(spec, j, k)?,
        samples,
    })
}

/// Monte Carlo estimate (mean, standard error) of Pr(p_j / p_k >= c).
pub fn mc_dominance(
    spec: &NoiseSpec,
    j: usize,
    k: usize,
    c: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::domain("need at least two samples"));
    }
    spec.check_pair(j, k)?;
    if !(c > 0.0) {
        return Err(Error::domain("threshold c must be positive"));
    }
    let mut rng = CounterRng::stream(seed, 5, 0);
    let mut hits = 0usize;
    for _ in 0..samples {
        let w = sample_attention(&mut rng, spec);
        if w.values()[j] / w.values()[k] >= c {
            hits += 1;
        }
    }
    let n = samples as f64;
    let p = hits as f64 / n;
    Ok((p, (p * (1.0 - p) / n).sqrt()))
}
