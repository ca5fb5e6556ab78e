//! Popularity-bias engine: SGD on the softmax exposure surrogate, the
//! early-drift linearization, and the exposure amplification-ratio bound.

use rayon::prelude::*;

use crate::rng::CounterRng;
use crate::{Error, Result};

/// Token population: sampling frequencies and conditional query means.
#[derive(Debug, Clone)]
pub struct TokenStats {
    freqs: Vec<f64>,
    query_means: Vec<Vec<f64>>,
}

impl TokenStats {
    pub fn new(freqs: Vec<f64>, query_means: Vec<Vec<f64>>) -> Result<Self> {
        if freqs.len() < 2 {
            return Err(Error::domain("need at least two tokens"));
        }
        if freqs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::domain("frequencies must be positive and finite"));
        }
        let total: f64 = freqs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "frequencies must sum to 1 (got {total})"
            )));
        }
        if query_means.len() != freqs.len() {
            return Err(Error::domain("one query mean per token required"));
        }
        let dim = query_means[0].len();
        if dim == 0 || query_means.iter().any(|w| w.len() != dim) {
            return Err(Error::domain("query means must share a positive dimension"));
        }
        Ok(TokenStats { freqs, query_means })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn query_means(&self) -> &[Vec<f64>] {
        &self.query_means
    }

    pub fn num_tokens(&self) -> usize {
        self.freqs.len()
    }

    pub fn dim(&self) -> usize {
        self.query_means[0].len()
    }

    /// Frequency-weighted mean query, w-bar = sum_h p_h w_h.
    pub fn mean_query(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (p, w) in self.freqs.iter().zip(&self.query_means) {
            for (o, x) in out.iter_mut().zip(w) {
                *o += p * x;
            }
        }
        out
    }
}

/// Per-token head parameters mu_h.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub mu: Vec<Vec<f64>>,
}

impl HeadParams {
    pub fn zeros(num_tokens: usize, dim: usize) -> Self {
        HeadParams {
            mu: vec![vec![0.0; dim]; num_tokens],
        }
    }
}

/// SGD hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub eta: f64,
    pub steps: usize,
    /// Query noise scale sigma_q.
    pub query_noise_std: f64,
    /// Query norm cap B_q; draws above it are rescaled onto the ball.
    pub query_bound: f64,
}

impl TrainConfig {
    pub fn new(eta: f64, steps: usize, query_noise_std: f64, query_bound: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(Error::domain("eta must be positive and finite"));
        }
        if !(query_noise_std >= 0.0) || !query_noise_std.is_finite() {
            return Err(Error::domain("query_noise_std must be >= 0"));
        }
        if !(query_bound > 0.0) || !query_bound.is_finite() {
            return Err(Error::domain("query_bound must be positive"));
        }
        Ok(TrainConfig {
            eta,
            steps,
            query_noise_std,
            query_bound,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Exposure vector M_h(q) = p_h exp(<q, mu_h>/sqrt(d)) / normalizer.
pub fn token_exposure(query: &[f64], stats: &TokenStats, params: &HeadParams) -> Result<Vec<f64>> {
    let d = stats.dim();
    if query.len() != d || params.mu.len() != stats.num_tokens() {
        return Err(Error::domain("query/params dimensions must match the stats"));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let logits: Vec<f64> = stats
        .freqs
        .iter()
        .zip(&params.mu)
        .map(|(p, mu)| p.ln() + dot(query, mu) * scale)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::domain("non-finite exposure logit"));
    }
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Surrogate loss -log M_X(q) for the observed token X.
pub fn surrogate_loss(
    query: &[f64],
    label: usize,
    stats: &TokenStats,
    params: &HeadParams,
) -> Result<f64> {
    if label >= stats.num_tokens() {
        return Err(Error::domain("label out of range"));
    }
    Ok(-token_exposure(query, stats, params)?[label].ln())
}

/// Per-head gradient of the surrogate loss,
/// grad_{mu_h} = (M_h - 1{X = h}) q / sqrt(d).
pub fn surrogate_gradient(
    query: &[f64],
    label: usize,
    stats: &TokenStats,
    params: &HeadParams,
) -> Result<Vec<Vec<f64>>> {
    if label >= stats.num_tokens() {
        return Err(Error::domain("label out of range"));
    }
    let exposure = token_exposure(query, stats, params)?;
    let scale = 1.0 / (stats.dim() as f64).sqrt();
    Ok(exposure
        .iter()
        .enumerate()
        .map(|(h, &m)| {
            let coeff = (m - if h == label { 1.0 } else { 0.0 }) * scale;
            query.iter().map(|&q| coeff * q).collect()
        })
        .collect())
}

/// Draws (label, query): label ~ freqs, query = w_label + sigma_q * N(0, I),
/// rescaled onto the ball of radius B_q when it lands outside.
pub fn sample_pair(
    rng: &mut CounterRng,
    stats: &TokenStats,
    cfg: &TrainConfig,
) -> (usize, Vec<f64>) {
    let label = rng.categorical(stats.freqs());
    let mut q: Vec<f64> = stats.query_means[label]
        .iter()
        .map(|&w| w + cfg.query_noise_std * rng.standard_normal())
        .collect();
    let n = norm(&q);
    if n > cfg.query_bound {
        let r = cfg.query_bound / n;
        for x in &mut q {
            *x *= r;
        }
    }
    (label, q)
}

/// One recorded SGD step: the sampled token and the post-update heads,
/// flattened head-major.
#[derive(Debug, Clone)]
pub struct SgdStep {
    pub step: usize,
    pub token: usize,
    pub mu_flat: Vec<f64>,
}

/// Trajectory and final state of an SGD run.
#[derive(Debug, Clone)]
pub struct SgdRun {
    pub final_params: HeadParams,
    pub trajectory: Vec<SgdStep>,
}

/// Runs `cfg.steps` SGD steps from `init`, recording every step.
/// Aborts with a divergence error if any parameter leaves the finite range.
pub fn sgd_run(
    stats: &TokenStats,
    cfg: &TrainConfig,
    init: &HeadParams,
    rng: &mut CounterRng,
) -> Result<SgdRun> {
    let mut params = init.clone();
    let mut trajectory = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let (label, q) = sample_pair(rng, stats, cfg);
        let grad = surrogate_gradient(&q, label, stats, &params)?;
        for (mu, g) in params.mu.iter_mut().zip(&grad) {
            for (m, gi) in mu.iter_mut().zip(g) {
                *m -= cfg.eta * gi;
                if !m.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite head parameter at step {step}"
                    )));
                }
            }
        }
        trajectory.push(SgdStep {
            step,
            token: label,
            mu_flat: params.mu.iter().flatten().cloned().collect(),
        });
    }
    Ok(SgdRun {
        final_params: params,
        trajectory,
    })
}

/// Expected one-step update (eta p_h / sqrt(d)) (w_h - w-bar) for every head.
pub fn linear_drift(stats: &TokenStats, eta: f64) -> Vec<Vec<f64>> {
    let scale = eta / (stats.dim() as f64).sqrt();
    let wbar = stats.mean_query();
    stats
        .freqs
        .iter()
        .zip(&stats.query_means)
        .map(|(p, w)| w.iter().zip(&wbar).map(|(wi, bi)| scale * p * (wi - bi)).collect())
        .collect()
}

/// Monte Carlo check of the one-step drift from zero-initialized heads.
#[derive(Debug, Clone)]
pub struct DriftReport {
    /// Empirical mean of the one-step update, per head.
    pub mc_mean: Vec<Vec<f64>>,
    /// Predicted drift (eta p_h / sqrt(d)) (w_h - w-bar), per head.
    pub predicted: Vec<Vec<f64>>,
    /// Componentwise z-scores of (mc_mean - predicted).
    pub z_scores: Vec<Vec<f64>>,
    /// Empirical coefficient on the direction (w_h - w-bar), per head;
    /// the linearization predicts eta p_h / sqrt(d).
    pub drift_rate: Vec<f64>,
    /// Mean one-step update projected on the unit direction
    /// (w_h - w-bar)/|w_h - w-bar|, per head.
    pub proj_mean: Vec<f64>,
    /// Standard error of that projection.
    pub proj_se: Vec<f64>,
    /// z-score of proj_mean against (eta p_h / sqrt(d)) |w_h - w-bar|.
    pub proj_z: Vec<f64>,
    pub max_abs_z: f64,
}

/// Estimates E[delta mu_h] from `samples` independent one-step updates at
/// zero init and compares componentwise to the linearized drift.
pub fn early_drift_check(
    stats: &TokenStats,
    cfg: &TrainConfig,
    samples: usize,
    seed: u64,
) -> Result<DriftReport> {
    if samples < 2 {
        return Err(Error::domain("need at least two drift samples"));
    }
    let h = stats.num_tokens();
    let d = stats.dim();
    let zero = HeadParams::zeros(h, d);
    let wbar = stats.mean_query();
    // Unit directions (w_h - w-bar)/|.| and their norms, per head.
    let dirs: Vec<(Vec<f64>, f64)> = stats
        .query_means
        .iter()
        .map(|w| {
            let dir: Vec<f64> = w.iter().zip(&wbar).map(|(a, b)| a - b).collect();
            let n = norm(&dir);
            if n > 0.0 {
                (dir.iter().map(|x| x / n).collect(), n)
            } else {
                (vec![0.0; d], 0.0)
            }
        })
        .collect();
    let mut sum = vec![vec![0.0; d]; h];
    let mut sumsq = vec![vec![0.0; d]; h];
    let mut proj_sum = vec![0.0; h];
    let mut proj_sumsq = vec![0.0; h];
    let mut rng = CounterRng::stream(seed, 1, 0);
    for _ in 0..samples {
        let (label, q) = sample_pair(&mut rng, stats, cfg);
        let grad = surrogate_gradient(&q, label, stats, &zero)?;
        for (hh, g) in grad.iter().enumerate() {
            let mut proj = 0.0;
            for (i, gi) in g.iter().enumerate() {
                let delta = -cfg.eta * gi;
                sum[hh][i] += delta;
                sumsq[hh][i] += delta * delta;
                proj += delta * dirs[hh].0[i];
            }
            proj_sum[hh] += proj;
            proj_sumsq[hh] += proj * proj;
        }
    }
    let n = samples as f64;
    let predicted = linear_drift(stats, cfg.eta);
    let mut mc_mean = vec![vec![0.0; d]; h];
    let mut z_scores = vec![vec![0.0; d]; h];
    let mut drift_rate = vec![0.0; h];
    let mut proj_mean = vec![0.0; h];
    let mut proj_se = vec![0.0; h];
    let mut proj_z = vec![0.0; h];
    let mut max_abs_z: f64 = 0.0;
    let scale = cfg.eta / (d as f64).sqrt();
    for hh in 0..h {
        for i in 0..d {
            let mean = sum[hh][i] / n;
            let var = (sumsq[hh][i] / n - mean * mean).max(0.0);
            let se = (var / n).sqrt().max(1e-300);
            mc_mean[hh][i] = mean;
            z_scores[hh][i] = (mean - predicted[hh][i]) / se;
            max_abs_z = max_abs_z.max(z_scores[hh][i].abs());
        }
        let (unit, dir_norm) = &dirs[hh];
        drift_rate[hh] = if *dir_norm > 0.0 {
            dot(&mc_mean[hh], unit) / dir_norm
        } else {
            0.0
        };
        proj_mean[hh] = proj_sum[hh] / n;
        let pvar = (proj_sumsq[hh] / n - proj_mean[hh] * proj_mean[hh]).max(0.0);
        proj_se[hh] = (pvar / n).sqrt().max(1e-300);
        let predicted_proj = scale * stats.freqs[hh] * dir_norm;
        proj_z[hh] = (proj_mean[hh] - predicted_proj) / proj_se[hh];
    }
    Ok(DriftReport {
        mc_mean,
        predicted,
        z_scores,
        drift_rate,
        proj_mean,
        proj_se,
        proj_z,
        max_abs_z,
    })
}

/// Largest deviation of the replica-averaged final heads from the linear
/// prediction mu^(0) + steps * drift_h.
pub fn residual_estimate(
    stats: &TokenStats,
    cfg: &TrainConfig,
    init: &HeadParams,
    replicas: usize,
    seed: u64,
) -> Result<f64> {
    if replicas == 0 {
        return Err(Error::domain("need at least one replica"));
    }
    let h = stats.num_tokens();
    let d = stats.dim();
    let finals: Vec<HeadParams> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = CounterRng::stream(seed, 2, r as u64);
            sgd_run(stats, cfg, init, &mut rng).map(|run| run.final_params)
        })
        .collect::<Result<_>>()?;
    let drift = linear_drift(stats, cfg.eta);
    let mut xi: f64 = 0.0;
    for hh in 0..h {
        let mut dev = 0.0;
        for i in 0..d {
            let mean: f64 =
                finals.iter().map(|p| p.mu[hh][i]).sum::<f64>() / replicas as f64;
            let predicted = init.mu[hh][i] + cfg.steps as f64 * drift[hh][i];
            dev += (mean - predicted) * (mean - predicted);
        }
        xi = xi.max(dev.sqrt());
    }
    Ok(xi)
}

/// Amplification-ratio experiment output.
#[derive(Debug, Clone)]
pub struct ArReport {
    /// Frequency-normalized exposure ratio E[M_h / M_h'] / (p_h / p_h').
    pub ar_estimate: f64,
    /// Analytic lower bound from the drift projection and the residual.
    pub lower_bound: f64,
    /// Residual magnitude xi entering the bound.
    pub xi_estimate: f64,
    pub seeds: Vec<u64>,
    /// True when the estimate clears the bound.
    pub pass: bool,
}

/// Trains `replicas` independent runs from `init`, measures the exposure
/// ratio of token `h` over `h_prime` at the probe query (default: the
/// midpoint of their query means), and compares it to the analytic bound
///
/// AR >= exp((eta * steps / d) <q, p_h (w_h - w-bar) - p_h' (w_h' - w-bar)>
///            - 2 xi |q| / sqrt(d)).
pub fn amplification_ratio(
    stats: &TokenStats,
    cfg: &TrainConfig,
    init: &HeadParams,
    h: usize,
    h_prime: usize,
    probe: Option<Vec<f64>>,
    replicas: usize,
    seed: u64,
) -> Result<ArReport> {
    let d = stats.dim();
    if h >= stats.num_tokens() || h_prime >= stats.num_tokens() || h == h_prime {
        return Err(Error::domain("h and h' must be distinct tokens"));
    }
    if replicas == 0 {
        return Err(Error::domain("need at least one replica"));
    }
    let q: Vec<f64> = match probe {
        Some(q) if q.len() == d => q,
        Some(_) => return Err(Error::domain("probe query has the wrong dimension")),
        None => stats.query_means[h]
            .iter()
            .zip(&stats.query_means[h_prime])
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    };
    let seeds: Vec<u64> = (0..replicas as u64).map(|r| seed.wrapping_add(r)).collect();
    let runs: Vec<(f64, HeadParams)> = seeds
        .par_iter()
        .map(|&s| -> Result<(f64, HeadParams)> {
            let mut rng = CounterRng::stream(s, 3, 0);
            let run = sgd_run(stats, cfg, init, &mut rng)?;
            let exposure = token_exposure(&q, stats, &run.final_params)?;
            Ok((exposure[h] / exposure[h_prime], run.final_params))
        })
        .collect::<Result<_>>()?;
    let mean_ratio: f64 = runs.iter().map(|(r, _)| r).sum::<f64>() / replicas as f64;
    let ar_estimate = mean_ratio / (stats.freqs[h] / stats.freqs[h_prime]);

    // Measure the residual from the same replica set that produced the
    // ratio estimate, so the bound and the estimate share one empirical
    // mean and the inequality is not blurred by independent noise.
    let drift_all = linear_drift(stats, cfg.eta);
    let mut xi: f64 = 0.0;
    for hh in 0..stats.num_tokens() {
        let mut dev = 0.0;
        for i in 0..d {
            let mean: f64 =
                runs.iter().map(|(_, p)| p.mu[hh][i]).sum::<f64>() / replicas as f64;
            let predicted = init.mu[hh][i] + cfg.steps as f64 * drift_all[hh][i];
            dev += (mean - predicted) * (mean - predicted);
        }
        xi = xi.max(dev.sqrt());
    }
    // drift_h already carries eta p_h / sqrt(d); steps/sqrt(d) completes
    // (eta * steps / d) <q, p_h (w_h - w-bar) - p_h' (w_h' - w-bar)>.
    let proj: f64 = q
        .iter()
        .enumerate()
        .map(|(i, &qi)| qi * (drift_all[h][i] - drift_all[h_prime][i]))
        .sum();
    let exponent = cfg.steps as f64 / (d as f64).sqrt() * proj - 2.0 * xi * norm(&q) / (d as f64).sqrt();
    let lower_bound = exponent.exp();
    Ok(ArReport {
        ar_estimate,
        lower_bound,
        xi_estimate: xi,
        seeds,
        pass: ar_estimate >= lower_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(dim: usize, i: usize, scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = scale;
        v
    }

    fn two_token_stats() -> TokenStats {
        TokenStats::new(
            vec![0.8, 0.2],
            vec![basis(4, 0, 1.0), basis(4, 1, 1.0)],
        )
        .unwrap()
    }

    fn rand_params(rng: &mut CounterRng, h: usize, d: usize) -> HeadParams {
        HeadParams {
            mu: (0..h)
                .map(|_| (0..d).map(|_| rng.standard_normal()).collect())
                .collect(),
        }
    }

    #[test]
    fn stats_validation() {
        assert!(TokenStats::new(vec![0.5, 0.6], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(TokenStats::new(vec![1.0], vec![vec![1.0]]).is_err());
        assert!(TokenStats::new(vec![0.5, 0.5], vec![vec![1.0]]).is_err());
        assert!(TokenStats::new(vec![0.5, 0.5], vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn exposure_sums_to_one_and_matches_formula() {
        let stats = two_token_stats();
        let mut rng = CounterRng::stream(31, 0, 0);
        for _ in 0..50 {
            let params = rand_params(&mut rng, 2, 4);
            let q: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
            let m = token_exposure(&q, &stats, &params).unwrap();
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // Direct, non-shifted evaluation.
            let scale = 1.0 / 2.0;
            let e0 = 0.8 * (dot(&q, &params.mu[0]) * scale).exp();
            let e1 = 0.2 * (dot(&q, &params.mu[1]) * scale).exp();
            assert!((m[0] - e0 / (e0 + e1)).abs() < 1e-12);
        }
    }

    #[test]
    fn exposure_at_zero_heads_equals_freqs() {
        let stats = two_token_stats();
        let m = token_exposure(&[0.3, -0.4, 0.0, 1.0], &stats, &HeadParams::zeros(2, 4)).unwrap();
        assert!((m[0] - 0.8).abs() < 1e-14);
        assert!((m[1] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn exposure_ratio_identity() {
        // M_h / M_h' = (p_h / p_h') exp(<q, mu_h - mu_h'>/sqrt(d)).
        let stats = two_token_stats();
        let mut rng = CounterRng::stream(32, 0, 0);
        for _ in 0..100 {
            let params = rand_params(&mut rng, 2, 4);
            let q: Vec<f64> = (0..4).map(|_| rng.standard_normal()).collect();
            let m = token_exposure(&q, &stats, &params).unwrap();
            let diff: Vec<f64> = params.mu[0]
                .iter()
                .zip(&params.mu[1])
                .map(|(a, b)| a - b)
                .collect();
            let expect = 0.8 / 0.2 * (dot(&q, &diff) / 2.0).exp();
            assert!((m[0] / m[1] - expect).abs() / expect < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = CounterRng::stream(33, 0, 0);
        let step = 1e-6;
        for case in 0..1000 {
            let h = 2 + case % 4;
            let d = 1 + case % 5;
            let freqs = {
                let raw: Vec<f64> = (0..h).map(|_| 0.1 + rng.uniform()).collect();
                let t: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / t).collect::<Vec<_>>()
            };
            let means: Vec<Vec<f64>> = (0..h)
                .map(|_| (0..d).map(|_| rng.standard_normal()).collect())
                .collect();
            let stats = TokenStats::new(freqs, means).unwrap();
            let mut params = rand_params(&mut rng, h, d);
            let q: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            let label = case % h;
            let grad = surrogate_gradient(&q, label, &stats, &params).unwrap();
            for hh in 0..h {
                for i in 0..d {
                    let orig = params.mu[hh][i];
                    params.mu[hh][i] = orig + step;
                    let up = surrogate_loss(&q, label, &stats, &params).unwrap();
                    params.mu[hh][i] = orig - step;
                    let down = surrogate_loss(&q, label, &stats, &params).unwrap();
                    params.mu[hh][i] = orig;
                    let fd = (up - down) / (2.0 * step);
                    let denom = fd.abs().max(1e-3);
                    assert!(
                        (grad[hh][i] - fd).abs() / denom < 1e-6,
                        "case {case}: {} vs {fd}",
                        grad[hh][i]
                    );
                }
            }
        }
    }

    #[test]
    fn sgd_five_step_oracle() {
        // Replay the sampler and apply the update rule by hand.
        let stats = two_token_stats();
        let cfg = TrainConfig::new(0.05, 5, 0.3, 10.0).unwrap();
        let init = HeadParams::zeros(2, 4);
        let mut rng = CounterRng::stream(77, 0, 0);
        let run = sgd_run(&stats, &cfg, &init, &mut rng).unwrap();

        let mut replay = CounterRng::stream(77, 0, 0);
        let mut mu = init.mu.clone();
        for step in 0..5 {
            let (label, q) = sample_pair(&mut replay, &stats, &cfg);
            assert_eq!(run.trajectory[step].token, label);
            // Exposure straight from the definition.
            let e: Vec<f64> = stats
                .freqs()
                .iter()
                .zip(&mu)
                .map(|(p, m)| p * (dot(&q, m) / 2.0).exp())
                .collect();
            let tot: f64 = e.iter().sum();
            for hh in 0..2 {
                let coeff = (e[hh] / tot - if hh == label { 1.0 } else { 0.0 }) / 2.0;
                for i in 0..4 {
                    mu[hh][i] -= cfg.eta * coeff * q[i];
                }
            }
            let flat: Vec<f64> = mu.iter().flatten().cloned().collect();
            for (a, b) in run.trajectory[step].mu_flat.iter().zip(&flat) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for (a, b) in run.final_params.mu.iter().flatten().zip(mu.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_detects_divergence() {
        // An absurd learning rate and query scale overflow the first
        // update; the run must abort with an error instead of emitting
        // non-finite parameters.
        let stats = two_token_stats();
        let cfg = TrainConfig::new(1e308, 50, 1e150, f64::MAX).unwrap();
        let init = HeadParams::zeros(2, 4);
        let mut rng = CounterRng::stream(5, 0, 0);
        assert!(sgd_run(&stats, &cfg, &init, &mut rng).is_err());
    }

    #[test]
    fn sample_pair_label_frequencies() {
        let stats = two_token_stats();
        let cfg = TrainConfig::new(0.05, 1, 0.3, 10.0).unwrap();
        let mut rng = CounterRng::stream(34, 0, 0);
        let n = 200_000;
        let mut count0 = 0usize;
        for _ in 0..n {
            let (label, q) = sample_pair(&mut rng, &stats, &cfg);
            if label == 0 {
                count0 += 1;
            }
            assert!(norm(&q) <= cfg.query_bound + 1e-12);
        }
        let p = count0 as f64 / n as f64;
        // 5 sigma band around 0.8.
        assert!((p - 0.8).abs() < 5.0 * (0.8f64 * 0.2 / n as f64).sqrt());
    }

    #[test]
    fn sample_pair_respects_tight_bound() {
        let stats = two_token_stats();
        let cfg = TrainConfig::new(0.05, 1, 2.0, 0.5).unwrap();
        let mut rng = CounterRng::stream(35, 0, 0);
        for _ in 0..1000 {
            let (_, q) = sample_pair(&mut rng, &stats, &cfg);
            assert!(norm(&q) <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn drift_check_matches_linearization() {
        let stats = two_token_stats();
        let cfg = TrainConfig::new(0.05, 1, 0.3, 10.0).unwrap();
        let report = early_drift_check(&stats, &cfg, 400_000, 91).unwrap();
        assert!(
            report.max_abs_z <= 3.0,
            "max |z| = {}",
            report.max_abs_z
        );
        // Drift rate scales with the token frequency: 0.8 / 0.2 = 4.
        let ratio = report.drift_rate[0] / report.drift_rate[1];
        assert!((ratio - 4.0).abs() < 0.25, "rate ratio {ratio}");
        for hh in 0..2 {
            assert!(report.proj_z[hh].abs() <= 3.5, "proj z {}", report.proj_z[hh]);
        }
    }

    #[test]
    fn amplification_ratio_trivial_at_zero_steps() {
        // No training: exposures stay at the frequencies, so the
        // frequency-normalized ratio is exactly 1.
        let stats = two_token_stats();
        let cfg = TrainConfig::new(0.05, 0, 0.3, 10.0).unwrap();
        let init = HeadParams::zeros(2, 4);
        let report =
            amplification_ratio(&stats, &cfg, &init, 0, 1, None, 8, 17).unwrap();
        assert!((report.ar_estimate - 1.0).abs() < 1e-14);
        assert!(report.xi_estimate < 1e-14);
        assert!(report.pass);
    }

    #[test]
    fn amplification_ratio_exceeds_bound_for_aligned_means() {
        // Query means share a direction, so the drift projection is
        // positive and the frequent token amplifies.
        let stats = TokenStats::new(
            vec![0.8, 0.2],
            vec![basis(4, 0, 2.0), basis(4, 0, 1.0)],
        )
        .unwrap();
        let cfg = TrainConfig::new(0.05, 300, 0.3, 10.0).unwrap();
        let init = HeadParams::zeros(2, 4);
        let report =
            amplification_ratio(&stats, &cfg, &init, 0, 1, None, 48, 101).unwrap();
        assert!(report.pass, "ar {} < bound {}", report.ar_estimate, report.lower_bound);
        assert!(report.ar_estimate > 1.0);
    }

    #[test]
    fn residual_is_small_for_short_runs() {
        // A handful of steps from zero init stays near the linear path.
        let stats = two_token_stats();
        let cfg = TrainConfig::new(0.05, 10, 0.3, 10.0).unwrap();
        let init = HeadParams::zeros(2, 4);
        let xi = residual_estimate(&stats, &cfg, &init, 64, 7).unwrap();
        assert!(xi < 0.05, "xi = {xi}");
    }
}
