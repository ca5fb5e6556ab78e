//! Positional-bias engine: relative positional encoding (RPE) near-mass
//! monotonicity, its analytic derivative identity, and the rotary (RoPE)
//! coherent-band small-angle result.
//!
//! Positions are 1-based (`j = 1..=T`) and the decoder sits at
//! `l̃ = l + T > T`, so every history distance `l̃ - j` is positive.

use std::sync::Arc;

use crate::attention::{softmax_row, LogitVector, WeightVector};
use crate::{Error, Result};

/// Distance function family b(x), evaluated at nonnegative distances.
#[derive(Clone)]
pub enum DistanceFn {
    /// ALiBi-style linear decay, b(x) = -x.
    Alibi,
    /// Logarithmic decay, b(x) = -log(1 + x).
    LogDecay,
    /// Gaussian decay, b(x) = -x^2 / (2 tau^2).
    GaussianDecay { tau: f64 },
    /// User-supplied family registered under a name.
    Custom(&'static str, Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for DistanceFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl DistanceFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            DistanceFn::Alibi => -x,
            DistanceFn::LogDecay => -(1.0 + x).ln(),
            DistanceFn::GaussianDecay { tau } => -x * x / (2.0 * tau * tau),
            DistanceFn::Custom(_, f) => f(x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DistanceFn::Alibi => "alibi",
            DistanceFn::LogDecay => "log-decay",
            DistanceFn::GaussianDecay { .. } => "gaussian-decay",
            DistanceFn::Custom(name, _) => name,
        }
    }

    /// Looks up a shipped family by name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "alibi" => Ok(DistanceFn::Alibi),
            "log-decay" => Ok(DistanceFn::LogDecay),
            "gaussian-decay" => Ok(DistanceFn::GaussianDecay { tau: 1.0 }),
            other => Err(Error::domain(format!(
                "unknown distance family '{other}' (known: alibi, log-decay, gaussian-decay)"
            ))),
        }
    }
}

/// RPE configuration: positional strength and decoder position.
#[derive(Debug, Clone)]
pub struct RpeConfig {
    pub alpha: f64,
    pub distance_fn: DistanceFn,
    /// Decoder position l̃ = l + T.
    pub decoder_pos: usize,
}

impl RpeConfig {
    pub fn new(alpha: f64, distance_fn: DistanceFn, decoder_pos: usize) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::domain("alpha must be finite and >= 0"));
        }
        Ok(RpeConfig {
            alpha,
            distance_fn,
            decoder_pos,
        })
    }

    /// b(|l̃ - j|) for each history position j = 1..=T.
    pub fn positional_scores(&self, seq_len: usize) -> Vec<f64> {
        (1..=seq_len)
            .map(|j| self.distance_fn.eval((self.decoder_pos as f64 - j as f64).abs()))
            .collect()
    }
}

/// Near window S: a nonempty proper subset of {1..T}.
#[derive(Debug, Clone)]
pub struct NearWindow {
    indices: Vec<usize>,
    seq_len: usize,
}

impl NearWindow {
    /// Validated constructor: checks that S satisfies the near/far
    /// ordering, min over S of `scores` >= max over F of `scores`, where
    /// `scores[j-1]` is the per-position positional logit (or any proxy
    /// where larger means nearer).
    pub fn validated(indices: Vec<usize>, scores: &[f64]) -> Result<Self> {
        let w = Self::unchecked(indices, scores.len())?;
        let min_s = w
            .indices
            .iter()
            .map(|&i| scores[i - 1])
            .fold(f64::INFINITY, f64::min);
        let max_f = (1..=w.seq_len)
            .filter(|j| !w.indices.contains(j))
            .map(|j| scores[j - 1])
            .fold(f64::NEG_INFINITY, f64::max);
        if min_s < max_f {
            return Err(Error::domain(format!(
                "window violates the near/far ordering: min_S = {min_s} < max_F = {max_f}"
            )));
        }
        Ok(w)
    }

    /// No ordering check; used for counterexample search.
    pub fn unchecked(mut indices: Vec<usize>, seq_len: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::domain("near window must be nonempty"));
        }
        if indices.len() >= seq_len {
            return Err(Error::domain("near window must be a proper subset"));
        }
        if indices[0] < 1 || *indices.last().unwrap() > seq_len {
            return Err(Error::domain("window index out of range 1..=T"));
        }
        Ok(NearWindow { indices, seq_len })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }
}

/// RPE logits: content_j + alpha * b(|l̃ - j|).
pub fn rpe_logits(content: &LogitVector, cfg: &RpeConfig) -> LogitVector {
    let scores = cfg.positional_scores(content.len());
    LogitVector::new(
        content
            .values()
            .iter()
            .zip(&scores)
            .map(|(c, b)| c + cfg.alpha * b)
            .collect(),
    )
    .expect("finite by construction")
}

/// M_S: total attention mass on the near window.
pub fn near_mass(weights: &WeightVector, window: &NearWindow) -> Result<f64> {
    if window.seq_len() != weights.len() {
        return Err(Error::domain(format!(
            "window over T = {} but weights have length {}",
            window.seq_len(),
            weights.len()
        )));
    }
    Ok(window
        .indices()
        .iter()
        .map(|&i| weights.values()[i - 1])
        .sum())
}

/// Analytic dM_S/dalpha = a_S * a_F * (mu_S - mu_F), evaluated at the
/// current weights, with d_i = b(|l̃ - i|).
pub fn near_mass_derivative(
    content: &LogitVector,
    cfg: &RpeConfig,
    window: &NearWindow,
) -> Result<f64> {
    let weights = softmax_row(&rpe_logits(content, cfg));
    let scores = cfg.positional_scores(content.len());
    Ok(grouped_derivative(&weights, &scores, window))
}

/// Shared split: a_S a_F (mu_S - mu_F) for per-position sensitivities g.
fn grouped_derivative(weights: &WeightVector, g: &[f64], window: &NearWindow) -> f64 {
    let mut mass_s = 0.0;
    let mut sum_s = 0.0;
    let mut mass_f = 0.0;
    let mut sum_f = 0.0;
    for (j, (&a, &gj)) in weights.values().iter().zip(g).enumerate() {
        if window.contains(j + 1) {
            mass_s += a;
            sum_s += a * gj;
        } else {
            mass_f += a;
            sum_f += a * gj;
        }
    }
    if mass_s == 0.0 || mass_f == 0.0 {
        return 0.0;
    }
    mass_s * mass_f * (sum_s / mass_s - sum_f / mass_f)
}

/// One grid point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub grid_value: f64,
    pub near_mass: f64,
    pub derivative: f64,
}

/// Sweep of M_S over a parameter grid, with a monotonicity verdict.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Nondecreasing within -1e-9 slack.
    pub monotone: bool,
}

/// Slack for the nondecreasing verdict.
pub const MONOTONE_SLACK: f64 = 1e-9;

fn verdict(points: &[SweepPoint]) -> bool {
    points
        .windows(2)
        .all(|w| w[1].near_mass - w[0].near_mass >= -MONOTONE_SLACK)
}

fn check_sorted(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::domain("grid must be nonempty"));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("grid must be sorted ascending"));
    }
    Ok(())
}

/// M_S(alpha) over an ascending alpha grid.
pub fn rpe_monotonicity_sweep(
    content: &LogitVector,
    window: &NearWindow,
    distance_fn: &DistanceFn,
    decoder_pos: usize,
    alpha_grid: &[f64],
) -> Result<SweepReport> {
    check_sorted(alpha_grid)?;
    let mut points = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let cfg = RpeConfig::new(alpha, distance_fn.clone(), decoder_pos)?;
        let weights = softmax_row(&rpe_logits(content, &cfg));
        points.push(SweepPoint {
            grid_value: alpha,
            near_mass: near_mass(&weights, window)?,
            derivative: near_mass_derivative(content, &cfg, window)?,
        });
    }
    let monotone = verdict(&points);
    Ok(SweepReport { points, monotone })
}

/// Rotary encoding configuration.
#[derive(Debug, Clone)]
pub struct RopeConfig {
    /// Rotary scale theta >= 0.
    pub theta: f64,
    /// Band multipliers, sorted ascending, positive.
    pub freqs: Vec<f64>,
    /// Head dimension 2R.
    pub head_dim: usize,
}

impl RopeConfig {
    pub fn new(theta: f64, freqs: Vec<f64>, head_dim: usize) -> Result<Self> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(Error::domain("theta must be finite and >= 0"));
        }
        if freqs.is_empty() || freqs.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::domain("freqs must be nonempty and positive"));
        }
        if freqs.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("freqs must be sorted ascending"));
        }
        if head_dim != 2 * freqs.len() {
            return Err(Error::domain(format!(
                "head_dim = {head_dim} must equal 2R = {}",
                2 * freqs.len()
            )));
        }
        Ok(RopeConfig {
            theta,
            freqs,
            head_dim,
        })
    }

    fn rotate(&self, v: &[f64], position: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(v.len());
        for (r, &omega) in self.freqs.iter().enumerate() {
            let phi = omega * self.theta * position;
            let (sin, cos) = phi.sin_cos();
            let (x, y) = (v[2 * r], v[2 * r + 1]);
            out.push(cos * x - sin * y);
            out.push(sin * x + cos * y);
        }
        out
    }
}

/// Exact RoPE logits: rotate the query at l̃ and each key at its history
/// position, then take scaled dot products.
pub fn rope_logits(
    query: &[f64],
    keys: &[Vec<f64>],
    key_positions: &[f64],
    decoder_pos: f64,
    cfg: &RopeConfig,
) -> Result<LogitVector> {
    if query.len() != cfg.head_dim {
        return Err(Error::domain(format!(
            "query length {} != head_dim {}",
            query.len(),
            cfg.head_dim
        )));
    }
    if keys.len() != key_positions.len() {
        return Err(Error::domain("one position per key row required"));
    }
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let rq = cfg.rotate(query, decoder_pos);
    let mut out = Vec::with_capacity(keys.len());
    for (key, &pos) in keys.iter().zip(key_positions) {
        if key.len() != cfg.head_dim {
            return Err(Error::domain("key length must equal head_dim"));
        }
        let rk = cfg.rotate(key, pos);
        out.push(rq.iter().zip(&rk).map(|(a, b)| a * b).sum::<f64>() * scale);
    }
    LogitVector::new(out)
}

/// Per-block amplitude/phase of the cosine decomposition,
/// Z(theta) = sum_r kappa_r cos(omega_r theta d - psi_r).
pub fn rope_decompose(query: &[f64], key: &[f64], cfg: &RopeConfig) -> Result<Vec<(f64, f64)>> {
    if query.len() != cfg.head_dim || key.len() != cfg.head_dim {
        return Err(Error::domain("vector lengths must equal head_dim"));
    }
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let mut out = Vec::with_capacity(cfg.freqs.len());
    for r in 0..cfg.freqs.len() {
        let (q1, q2) = (query[2 * r], query[2 * r + 1]);
        let (k1, k2) = (key[2 * r], key[2 * r + 1]);
        let a = (q1 * k1 + q2 * k2) * scale;
        let b = (q1 * k2 - q2 * k1) * scale;
        let kappa = a.hypot(b);
        // psi = 0 by convention when the block amplitude vanishes.
        let psi = if kappa == 0.0 { 0.0 } else { b.atan2(a) };
        out.push((kappa, psi));
    }
    Ok(out)
}

/// Small-angle bound pi / (2 * omega_max * d_max).
pub fn small_angle_bound(cfg: &RopeConfig, d_max: f64) -> Result<f64> {
    if !(d_max > 0.0) {
        return Err(Error::domain("d_max must be > 0"));
    }
    let omega_max = *cfg.freqs.last().expect("validated nonempty");
    Ok(std::f64::consts::PI / (2.0 * omega_max * d_max))
}

/// Coherent band: nonnegative per-band amplitudes and per-position
/// distances d_j = l̃ - j.
#[derive(Debug, Clone)]
pub struct CoherentBand {
    pub amplitudes: Vec<f64>,
    pub distances: Vec<f64>,
}

impl CoherentBand {
    pub fn new(amplitudes: Vec<f64>, distances: Vec<f64>) -> Result<Self> {
        if amplitudes.iter().any(|&k| !(k >= 0.0)) {
            return Err(Error::domain("amplitudes must be >= 0"));
        }
        if distances.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::domain("distances must be >= 0"));
        }
        Ok(CoherentBand {
            amplitudes,
            distances,
        })
    }

    /// Reduced-form logits sum_r kappa_r cos(omega_r theta d_j).
    fn logits(&self, freqs: &[f64], theta: f64) -> LogitVector {
        LogitVector::new(
            self.distances
                .iter()
                .map(|&d| {
                    self.amplitudes
                        .iter()
                        .zip(freqs)
                        .map(|(&k, &w)| k * (w * theta * d).cos())
                        .sum()
                })
                .collect(),
        )
        .expect("finite by construction")
    }

    /// dZ_j/dtheta = -sum_r kappa_r omega_r d_j sin(omega_r theta d_j).
    fn sensitivities(&self, freqs: &[f64], theta: f64) -> Vec<f64> {
        self.distances
            .iter()
            .map(|&d| {
                -self
                    .amplitudes
                    .iter()
                    .zip(freqs)
                    .map(|(&k, &w)| k * w * d * (w * theta * d).sin())
                    .sum::<f64>()
            })
            .collect()
    }
}

fn band_sweep(
    band: &CoherentBand,
    cfg: &RopeConfig,
    window: &NearWindow,
    theta_grid: &[f64],
) -> Result<SweepReport> {
    check_sorted(theta_grid)?;
    if band.amplitudes.len() != cfg.freqs.len() {
        return Err(Error::domain("one amplitude per band required"));
    }
    if band.distances.len() != window.seq_len() {
        return Err(Error::domain("one distance per history position required"));
    }
    let mut points = Vec::with_capacity(theta_grid.len());
    for &theta in theta_grid {
        let weights = softmax_row(&band.logits(&cfg.freqs, theta));
        let g = band.sensitivities(&cfg.freqs, theta);
        points.push(SweepPoint {
            grid_value: theta,
            near_mass: near_mass(&weights, window)?,
            derivative: grouped_derivative(&weights, &g, window),
        });
    }
    let monotone = verdict(&points);
    Ok(SweepReport { points, monotone })
}

/// M_S(theta) over an ascending theta grid inside the small-angle regime.
///
/// Grids reaching past the bound are rejected; use
/// [`coherent_band_free_sweep`] to explore the general regime, where
/// monotonicity is not guaranteed.
pub fn coherent_band_sweep(
    band: &CoherentBand,
    cfg: &RopeConfig,
    window: &NearWindow,
    theta_grid: &[f64],
) -> Result<SweepReport> {
    let d_max = band.distances.iter().cloned().fold(0.0, f64::max);
    let bound = small_angle_bound(cfg, d_max)?;
    if theta_grid.iter().any(|&t| t > bound + 1e-15 || t < 0.0) {
        return Err(Error::domain(format!(
            "theta grid exceeds the small-angle bound {bound}; use the free sweep"
        )));
    }
    band_sweep(band, cfg, window, theta_grid)
}

/// Unrestricted theta sweep; the verdict is reported, not enforced.
pub fn coherent_band_free_sweep(
    band: &CoherentBand,
    cfg: &RopeConfig,
    window: &NearWindow,
    theta_grid: &[f64],
) -> Result<SweepReport> {
    band_sweep(band, cfg, window, theta_grid)
}
