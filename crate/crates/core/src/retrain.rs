//! Retraining feedback-loop engine: concentration of an item
//! distribution under repeated mixing of fresh organic samples with
//! samples delegated to the previous round's model, plus the exact
//! closed-form recursion for the expected concentration.

use rayon::prelude::*;

use crate::rng::CounterRng;
use crate::{Error, Result};

/// Simulation context: the organic item distribution and the per-round
/// sample budget split.
#[derive(Debug, Clone)]
pub struct RetrainContext {
    p0: Vec<f64>,
    /// Fresh organic samples per round.
    pub n: usize,
    /// Samples delegated to the previous round's distribution.
    pub nhat: usize,
}

impl RetrainContext {
    pub fn new(p0: Vec<f64>, n: usize, nhat: usize) -> Result<Self> {
        if p0.len() < 2 {
            return Err(Error::domain("need at least two items"));
        }
        if p0.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::domain("probabilities must be finite and >= 0"));
        }
        let total: f64 = p0.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "organic distribution must sum to 1 (got {total})"
            )));
        }
        if n <= 1 || nhat <= 1 {
            return Err(Error::domain("sample counts N and N-hat must exceed 1"));
        }
        Ok(RetrainContext { p0, n, nhat })
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    /// Delegation share alpha = N-hat / (N + N-hat).
    pub fn delegation_share(&self) -> f64 {
        self.nhat as f64 / (self.n + self.nhat) as f64
    }
}

/// Empirical item distribution after one round, kept as integer counts
/// so every probability sits on the 1/total lattice.
///
/// The organic histogram is drawn once per chain and carried along: each
/// retraining round reuses the same N organic samples and adds N-hat
/// fresh delegated draws from the previous round's distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundState {
    organic: Vec<u64>,
    delegated: Vec<u64>,
}

impl RoundState {
    pub fn counts(&self) -> Vec<u64> {
        self.organic
            .iter()
            .zip(&self.delegated)
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.organic.iter().sum::<u64>() + self.delegated.iter().sum::<u64>()
    }

    pub fn probs(&self) -> Vec<f64> {
        let t = self.total() as f64;
        self.counts().into_iter().map(|c| c as f64 / t).collect()
    }
}

/// Herfindahl concentration S(p) = sum_i p_i^2.
pub fn concentration(probs: &[f64]) -> f64 {
    probs.iter().map(|p| p * p).sum()
}

fn draw_counts(rng: &mut CounterRng, probs: &[f64], draws: usize, counts: &mut [u64]) {
    for _ in 0..draws {
        counts[rng.categorical(probs)] += 1;
    }
}

/// Draws one round. Round 1 is a histogram of N organic draws; each
/// later round keeps that organic histogram and adds N-hat fresh draws
/// from the previous round's distribution.
pub fn sample_round(
    rng: &mut CounterRng,
    ctx: &RetrainContext,
    prev: Option<&RoundState>,
) -> RoundState {
    let s = ctx.p0.len();
    match prev {
        None => {
            let mut organic = vec![0u64; s];
            draw_counts(rng, &ctx.p0, ctx.n, &mut organic);
            RoundState {
                organic,
                delegated: vec![0; s],
            }
        }
        Some(prev) => {
            let mut delegated = vec![0u64; s];
            draw_counts(rng, &prev.probs(), ctx.nhat, &mut delegated);
            RoundState {
                organic: prev.organic.clone(),
                delegated,
            }
        }
    }
}

/// Runs `rounds` consecutive rounds and returns every state.
pub fn run_rounds(rng: &mut CounterRng, ctx: &RetrainContext, rounds: usize) -> Vec<RoundState> {
    let mut out = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let state = sample_round(rng, ctx, if r == 0 { None } else { out.last() });
        out.push(state);
    }
    out
}

/// Closed-form recursion inputs for the expected concentration.
#[derive(Debug, Clone)]
pub struct ClosedFormParams {
    pub alpha: f64,
    pub beta: f64,
    pub s0: f64,
    pub n: usize,
}

impl ClosedFormParams {
    pub fn from_context(ctx: &RetrainContext) -> Self {
        let alpha = ctx.delegation_share();
        let inv_n = 1.0 / ctx.n as f64;
        ClosedFormParams {
            alpha,
            beta: alpha * ((1.0 + inv_n) * alpha - inv_n),
            s0: concentration(ctx.p0()),
            n: ctx.n,
        }
    }

    /// Expected concentration E[S^(r)] for round r >= 1.
    pub fn expected_concentration(&self, round: usize) -> Result<f64> {
        if round == 0 {
            return Err(Error::domain("rounds are numbered from 1"));
        }
        let inv_n = 1.0 / self.n as f64;
        if round == 1 {
            return Ok(inv_n + (1.0 - inv_n) * self.s0);
        }
        let a = self.alpha;
        let denom = 1.0 + (1.0 + inv_n) * a;
        let fixed = (inv_n * (1.0 + 2.0 * a) + (1.0 - inv_n) * (1.0 + a) * self.s0) / denom;
        let coeff = inv_n * (1.0 - inv_n) * (1.0 - self.s0) * a / denom;
        Ok(fixed - coeff * self.beta.powi(round as i32 - 1))
    }

    /// Limit of the expected concentration as the round count grows.
    pub fn limit_concentration(&self) -> Result<f64> {
        if self.beta >= 1.0 {
            return Err(Error::domain(
                "recursion does not contract: beta >= 1",
            ));
        }
        let inv_n = 1.0 / self.n as f64;
        let a = self.alpha;
        let denom = 1.0 + (1.0 + inv_n) * a;
        Ok((inv_n * (1.0 + 2.0 * a) + (1.0 - inv_n) * (1.0 + a) * self.s0) / denom)
    }
}

/// One round of the Monte Carlo vs closed-form comparison.
#[derive(Debug, Clone)]
pub struct RoundCheck {
    pub round: usize,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub closed_form: f64,
    pub z: f64,
}

/// Runs `replicas` independent chains for `rounds` rounds and z-scores
/// the per-round mean concentration against the exact recursion.
pub fn mc_vs_closed_form(
    ctx: &RetrainContext,
    rounds: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<RoundCheck>> {
    if rounds == 0 || replicas < 2 {
        return Err(Error::domain(
            "need at least one round and two replicas",
        ));
    }
    let per_replica: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = CounterRng::stream(seed, 6, r as u64);
            run_rounds(&mut rng, ctx, rounds)
                .iter()
                .map(|state| concentration(&state.probs()))
                .collect()
        })
        .collect();
    let params = ClosedFormParams::from_context(ctx);
    let nrep = replicas as f64;
    let mut out = Vec::with_capacity(rounds);
    for round in 1..=rounds {
        let vals: Vec<f64> = per_replica.iter().map(|v| v[round - 1]).collect();
        let mean = vals.iter().sum::<f64>() / nrep;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nrep - 1.0);
        let se = (var / nrep).sqrt().max(1e-300);
        let closed_form = params.expected_concentration(round)?;
        out.push(RoundCheck {
            round,
            mc_mean: mean,
            mc_se: se,
            closed_form,
            z: (mean - closed_form) / se,
        });
    }
    Ok(out)
}
