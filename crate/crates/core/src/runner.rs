//! Experiment runner: dispatches the configured engines, persists
//! CSV/JSON results deterministically, and summarizes verdicts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;

use crate::attention::LogitVector;
use crate::config::{Engine, ExperimentConfig};
use crate::latent::{
    dominance_probability, expected_odds, mc_dominance, mc_moments, NoiseSpec,
};
use crate::popularity::{
    amplification_ratio, early_drift_check, sgd_run, HeadParams, TokenStats, TrainConfig,
};
use crate::positional::{
    coherent_band_sweep, small_angle_bound,
    CoherentBand, DistanceFn, NearWindow, RopeConfig, RpeConfig, SweepReport,
};
use crate::report::{write_csv, write_json, Cell, Table};
use crate::retrain::{mc_vs_closed_form, ClosedFormParams, RetrainContext};
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Fixed band multipliers for the rotary sweeps (R = 4).
pub const ROPE_FREQS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Outcome of one engine run.
#[derive(Debug, Clone)]
pub struct EngineOutcome {
    pub engine: &'static str,
    pub pass: bool,
    pub detail: String,
    pub files: Vec<PathBuf>,
}

/// Run metadata persisted next to the results. Contains wall-clock
/// timestamps, so it is the one output file that is not byte-stable.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub started_at: u64,
    pub finished_at: u64,
    pub files: Vec<String>,
    pub pass: bool,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn sweep_table() -> Table {
    Table::new(vec!["seed", "grid_value", "near_mass", "derivative", "verdict"])
        .expect("nonempty columns")
}

fn push_sweep(table: &mut Table, seed: u64, report: &SweepReport) -> Result<()> {
    let verdict = if report.monotone { "monotone" } else { "nonmonotone" };
    for p in &report.points {
        table.push_row(vec![
            Cell::Int(seed as i64),
            Cell::Float(p.grid_value),
            Cell::Float(p.near_mass),
            Cell::Float(p.derivative),
            Cell::Text(verdict.into()),
        ])?;
    }
    Ok(())
}

fn run_rpe(cfg: &ExperimentConfig, dir: &Path) -> Result<EngineOutcome> {
    let p = &cfg.rpe;
    let instances = cfg.replicas.unwrap_or(p.instances);
    let distance = DistanceFn::from_name(&p.distance)?;
    let steps = (p.alpha / p.alpha_step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 * p.alpha_step).collect();
    let decoder_pos = p.seq_len + 1;
    let mut table = sweep_table();
    let mut monotone = 0usize;
    for inst in 0..instances {
        let mut rng = CounterRng::stream(cfg.seed, 10, inst as u64);
        let content =
            LogitVector::new((0..p.seq_len).map(|_| rng.standard_normal()).collect())?;
        let probe = RpeConfig::new(0.0, distance.clone(), decoder_pos)?;
        let window = NearWindow::validated(
            ((p.seq_len - p.window + 1)..=p.seq_len).collect(),
            &probe.positional_scores(p.seq_len),
        )?;
        let report = crate::positional::rpe_monotonicity_sweep(
            &content,
            &window,
            &distance,
            decoder_pos,
            &grid,
        )?;
        monotone += usize::from(report.monotone);
        push_sweep(&mut table, inst as u64, &report)?;
    }
    let file = dir.join("rpe_sweep.csv");
    write_csv(&file, &table)?;
    Ok(EngineOutcome {
        engine: "positional-rpe",
        pass: monotone == instances,
        detail: format!("{monotone}/{instances} sweeps monotone"),
        files: vec![file],
    })
}

fn run_rope(cfg: &ExperimentConfig, dir: &Path) -> Result<EngineOutcome> {
    let p = &cfg.rope;
    let bands = cfg.replicas.unwrap_or(p.bands);
    let rope = RopeConfig::new(1.0, ROPE_FREQS.to_vec(), 2 * ROPE_FREQS.len())?;
    let t = p.seq_len;
    // d_j = decoder distance to position j; earlier positions are farther.
    let distances: Vec<f64> = (1..=t).map(|j| (t + 1 - j) as f64).collect();
    let scores: Vec<f64> = distances.iter().map(|&d| -d).collect();
    let window = NearWindow::validated(vec![t - 1, t], &scores)?;
    let bound = small_angle_bound(&rope, t as f64)?;
    let grid: Vec<f64> = (0..p.grid_points)
        .map(|i| bound * i as f64 / (p.grid_points - 1) as f64)
        .collect();
    let mut table = sweep_table();
    let mut monotone = 0usize;
    for b in 0..bands {
        let mut rng = CounterRng::stream(cfg.seed, 11, b as u64);
        let amplitudes: Vec<f64> = (0..ROPE_FREQS.len()).map(|_| rng.uniform()).collect();
        let band = CoherentBand::new(amplitudes, distances.clone())?;
        let report = coherent_band_sweep(&band, &rope, &window, &grid)?;
        monotone += usize::from(report.monotone);
        push_sweep(&mut table, b as u64, &report)?;
    }
    let file = dir.join("rope_sweep.csv");
    write_csv(&file, &table)?;
    Ok(EngineOutcome {
        engine: "positional-rope",
        pass: monotone == bands,
        detail: format!("{monotone}/{bands} coherent-band sweeps monotone"),
        files: vec![file],
    })
}

/// The two-token population for the drift-linearization experiment:
/// frequencies (0.8, 0.2) with orthogonal unit query means.
pub fn two_token_population(dim: usize) -> Result<TokenStats> {
    let mut w0 = vec![0.0; dim];
    let mut w1 = vec![0.0; dim];
    w0[0] = 1.0;
    w1[1] = 1.0;
    TokenStats::new(vec![0.8, 0.2], vec![w0, w1])
}

/// The population for the amplification-ratio experiment: the same
/// frequencies with comparably aligned query means (shared direction,
/// magnitudes 2 and 1), the regime where the amplification bound has a
/// positive drift projection.
pub fn aligned_two_token_population(dim: usize) -> Result<TokenStats> {
    let mut w0 = vec![0.0; dim];
    let mut w1 = vec![0.0; dim];
    w0[0] = 2.0;
    w1[0] = 1.0;
    TokenStats::new(vec![0.8, 0.2], vec![w0, w1])
}

fn run_popularity(cfg: &ExperimentConfig, dir: &Path) -> Result<EngineOutcome> {
    let p = &cfg.popularity;
    let stats = two_token_population(p.dim)?;

    // One-step drift linearization check.
    let drift_cfg = TrainConfig::new(p.drift_eta, 1, p.sigma_q, p.query_bound)?;
    let drift = early_drift_check(&stats, &drift_cfg, p.drift_samples, cfg.seed)?;
    let drift_pass = drift.proj_z.iter().all(|z| z.abs() <= 3.0)
        && drift.drift_rate[0] > drift.drift_rate[1];

    // A representative training trajectory.
    let train_cfg = TrainConfig::new(p.eta, p.steps, p.sigma_q, p.query_bound)?;
    let init = HeadParams::zeros(stats.num_tokens(), p.dim);
    let mut rng = CounterRng::stream(cfg.seed, 12, 0);
    let run = sgd_run(&stats, &train_cfg, &init, &mut rng)?;
    let mut columns = vec!["step".to_string(), "token".to_string()];
    for h in 0..stats.num_tokens() {
        for i in 0..p.dim {
            columns.push(format!("mu_{h}_{i}"));
        }
    }
    let mut table = Table::new(columns)?;
    for step in &run.trajectory {
        let mut row = vec![Cell::Int(step.step as i64), Cell::Int(step.token as i64)];
        row.extend(step.mu_flat.iter().map(|&v| Cell::Float(v)));
        table.push_row(row)?;
    }
    let traj_file = dir.join("popularity_trajectory.csv");
    write_csv(&traj_file, &table)?;

    // Amplification ratio against its analytic lower bound, in the
    // comparably-aligned regime the bound targets.
    let replicas = cfg.replicas.unwrap_or(p.ar_replicas);
    let aligned = aligned_two_token_population(p.dim)?;
    let ar = amplification_ratio(&aligned, &train_cfg, &init, 0, 1, None, replicas, cfg.seed)?;
    let ar_pass = ar.pass && ar.ar_estimate > 1.0;
    let ar_file = dir.join("popularity_ar.json");
    write_json(
        &ar_file,
        &json!({
            "ar_estimate": ar.ar_estimate,
            "lower_bound": ar.lower_bound,
            "xi": ar.xi_estimate,
            "seeds": ar.seeds,
            "pass": ar_pass,
        }),
    )?;

    Ok(EngineOutcome {
        engine: "popularity",
        pass: drift_pass && ar_pass,
        detail: format!(
            "drift max |proj z| = {:.2}, AR = {:.3} >= bound {:.3}",
            drift.proj_z.iter().fold(0f64, |a, z| a.max(z.abs())),
            ar.ar_estimate,
            ar.lower_bound
        ),
        files: vec![traj_file, ar_file],
    })
}

fn run_latent(cfg: &ExperimentConfig, dir: &Path) -> Result<EngineOutcome> {
    let p = &cfg.latent;
    let sigma_grid = [0.3, 0.6, 1.0];
    let mut table = Table::new(vec![
        "sigma_j",
        "sigma_k",
        "mc_mean",
        "mc_se",
        "analytic_mean",
        "tail_mc",
        "tail_se",
        "tail_analytic",
        "verdict",
    ])?;
    let mut pass = true;
    let mut cell = 0u64;
    for &sj in &sigma_grid {
        for &sk in &sigma_grid {
            let spec = NoiseSpec::new(vec![sj, sk])?;
            let moments = mc_moments(&spec, 0, 1, p.samples, cfg.seed.wrapping_add(cell))?;
            let (tail, tail_se) = mc_dominance(
                &spec,
                0,
                1,
                p.threshold,
                p.samples,
                cfg.seed.wrapping_add(cell).wrapping_add(1000),
            )?;
            let tail_analytic = dominance_probability(&spec, 0, 1, p.threshold)?;
            let mean_ok = (moments.mc_mean - moments.analytic_mean).abs()
                / moments.analytic_mean
                <= 0.05;
            let tail_ok = (tail - tail_analytic).abs() <= 3.0 * tail_se.max(1e-4);
            let ok = mean_ok && tail_ok;
            pass &= ok;
            table.push_row(vec![
                Cell::Float(sj),
                Cell::Float(sk),
                Cell::Float(moments.mc_mean),
                Cell::Float(moments.mc_se),
                Cell::Float(moments.analytic_mean),
                Cell::Float(tail),
                Cell::Float(tail_se),
                Cell::Float(tail_analytic),
                Cell::Text(if ok { "pass" } else { "fail" }.into()),
            ])?;
            cell += 1;
        }
    }
    let csv_file = dir.join("latent_moments.csv");
    write_csv(&csv_file, &table)?;

    // Deterministic expected-ratio gaps at combined variances 2 and 4.
    let unit = NoiseSpec::new(vec![1.0, 1.0])?;
    let wide = NoiseSpec::new(vec![2f64.sqrt(), 2f64.sqrt()])?;
    let gap_e = expected_odds(&unit, 0, 1)?;
    let gap_e2 = expected_odds(&wide, 0, 1)?;
    let gaps_ok = (gap_e - 2.72).abs() < 0.005 && (gap_e2 - 7.39).abs() < 0.005;
    pass &= gaps_ok;
    let gap_file = dir.join("latent_gaps.json");
    write_json(
        &gap_file,
        &json!({
            "expected_ratio_var2": gap_e,
            "expected_ratio_var4": gap_e2,
            "pass": gaps_ok,
        }),
    )?;

    Ok(EngineOutcome {
        engine: "latent",
        pass,
        detail: format!("9 sigma cells, gaps e = {gap_e:.4}, e^2 = {gap_e2:.4}"),
        files: vec![csv_file, gap_file],
    })
}

fn run_retrain(cfg: &ExperimentConfig, dir: &Path) -> Result<EngineOutcome> {
    let p = &cfg.retrain;
    let p0 = vec![1.0 / p.options as f64; p.options];
    let ctx = RetrainContext::new(p0.clone(), p.organic_n, p.delegated_n)?;
    let replicas = cfg.replicas.unwrap_or(p.replicas);
    let checks = mc_vs_closed_form(&ctx, p.rounds, replicas, cfg.seed)?;
    let mut table = Table::new(vec!["round", "mc_mean", "mc_se", "closed_form", "z"])?;
    let mut pass = true;
    let mut prev = f64::NEG_INFINITY;
    for c in &checks {
        pass &= c.z.abs() <= 3.0 && c.closed_form >= prev;
        prev = c.closed_form;
        table.push_row(vec![
            Cell::Int(c.round as i64),
            Cell::Float(c.mc_mean),
            Cell::Float(c.mc_se),
            Cell::Float(c.closed_form),
            Cell::Float(c.z),
        ])?;
    }
    let params = ClosedFormParams::from_context(&ctx);
    pass &= params.limit_concentration()? > params.s0;
    let csv_file = dir.join("retrain_trajectory.csv");
    write_csv(&csv_file, &table)?;
    let ctx_file = dir.join("retrain_context.json");
    write_json(
        &ctx_file,
        &json!({
            "p0": p0,
            "N": p.organic_n,
            "N_hat": p.delegated_n,
            "s": p.options,
        }),
    )?;
    let max_z = checks.iter().fold(0f64, |a, c| a.max(c.z.abs()));
    Ok(EngineOutcome {
        engine: "retrain",
        pass,
        detail: format!("{} rounds, max |z| = {max_z:.2}", checks.len()),
        files: vec![csv_file, ctx_file],
    })
}

/// Runs the configured experiment(s) and writes all results plus a
/// verdict summary and a run manifest into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunManifest, Vec<EngineOutcome>)> {
    let started_at = unix_now();
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let engines: Vec<Engine> = match cfg.experiment {
        Engine::All => vec![
            Engine::PositionalRpe,
            Engine::PositionalRope,
            Engine::Popularity,
            Engine::Latent,
            Engine::Retrain,
        ],
        e => vec![e],
    };
    let mut outcomes = Vec::new();
    for engine in engines {
        let outcome = match engine {
            Engine::PositionalRpe => run_rpe(cfg, dir),
            Engine::PositionalRope => run_rope(cfg, dir),
            Engine::Popularity => run_popularity(cfg, dir),
            Engine::Latent => run_latent(cfg, dir),
            Engine::Retrain => run_retrain(cfg, dir),
            Engine::All => unreachable!("expanded above"),
        };
        match outcome {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                // Leave a diagnostic behind for nonzero-exit runs.
                let _ = crate::report::write_atomic(
                    &dir.join("diagnostic.txt"),
                    format!("{}: {e}\n", engine.name()).as_bytes(),
                );
                return Err(e);
            }
        }
    }

    let pass = outcomes.iter().all(|o| o.pass);
    let mut verdicts = BTreeMap::new();
    for o in &outcomes {
        verdicts.insert(o.engine.to_string(), json!({ "pass": o.pass, "detail": o.detail }));
    }
    let verdict_file = dir.join("verdicts.json");
    write_json(
        &verdict_file,
        &json!({ "engines": verdicts, "pass": pass }),
    )?;

    let mut files: Vec<String> = outcomes
        .iter()
        .flat_map(|o| o.files.iter())
        .chain(std::iter::once(&verdict_file))
        .map(|f| {
            f.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    files.push("manifest.json".to_string());
    files.sort();

    let manifest = RunManifest {
        config_hash: format!("{:016x}", cfg.hash()),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        started_at,
        finished_at: unix_now(),
        files,
        pass,
    };
    write_json(&dir.join("manifest.json"), &serde_json::to_value(&manifest)?)?;
    Ok((manifest, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn tiny_config(experiment: &str, out: &Path) -> ExperimentConfig {
        let text = format!(
            "experiment = {experiment}\n\
             seed = 7\n\
             output_dir = {}\n\
             engine.rpe.instances = 3\n\
             engine.rope.bands = 3\n\
             engine.rope.grid_points = 9\n\
             engine.popularity.steps = 20\n\
             engine.popularity.drift_samples = 20000\n\
             engine.popularity.ar_replicas = 4\n\
             engine.latent.samples = 20000\n\
             engine.retrain.rounds = 4\n\
             engine.retrain.replicas = 400\n",
            out.display()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn all_engines_produce_results_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config("all", dir.path());
        let (manifest, outcomes) = run_experiment(&cfg).unwrap();
        assert_eq!(outcomes.len(), 5);
        assert!(manifest.pass, "outcomes: {outcomes:?}");
        // Every listed file exists on disk.
        for f in &manifest.files {
            assert!(dir.path().join(f).exists(), "missing {f}");
        }
        assert!(manifest.files.contains(&"manifest.json".to_string()));
        assert!(manifest.files.contains(&"verdicts.json".to_string()));
        assert_eq!(manifest.seed, 7);
    }

    #[test]
    fn single_engine_run_is_reproducible() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let (_, out_a) = run_experiment(&tiny_config("retrain", dir_a.path())).unwrap();
        let (_, _out_b) = run_experiment(&tiny_config("retrain", dir_b.path())).unwrap();
        assert_eq!(out_a.len(), 1);
        let a = std::fs::read(dir_a.path().join("retrain_trajectory.csv")).unwrap();
        let b = std::fs::read(dir_b.path().join("retrain_trajectory.csv")).unwrap();
        assert_eq!(a, b);
    }
}
