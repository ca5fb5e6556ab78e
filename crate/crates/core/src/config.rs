//! Flat key-value experiment configuration: dotted keys, defaults,
//! exhaustive error collection, and a canonical 64-bit config hash.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::{Error, Result};

/// Experiment engines dispatched by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    PositionalRpe,
    PositionalRope,
    Popularity,
    Latent,
    Retrain,
    All,
}

impl Engine {
    pub const NAMES: [&'static str; 6] = [
        "positional-rpe",
        "positional-rope",
        "popularity",
        "latent",
        "retrain",
        "all",
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "positional-rpe" => Some(Engine::PositionalRpe),
            "positional-rope" => Some(Engine::PositionalRope),
            "popularity" => Some(Engine::Popularity),
            "latent" => Some(Engine::Latent),
            "retrain" => Some(Engine::Retrain),
            "all" => Some(Engine::All),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Engine::PositionalRpe => "positional-rpe",
            Engine::PositionalRope => "positional-rope",
            Engine::Popularity => "popularity",
            Engine::Latent => "latent",
            Engine::Retrain => "retrain",
            Engine::All => "all",
        }
    }
}

/// RPE sweep parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RpeParams {
    pub seq_len: usize,
    pub window: usize,
    /// Upper end of the alpha grid starting at 0.
    pub alpha: f64,
    pub alpha_step: f64,
    pub distance: String,
    pub instances: usize,
}

/// RoPE coherent-band sweep parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeParams {
    pub seq_len: usize,
    pub bands: usize,
    pub grid_points: usize,
}

/// Popularity-bias (SGD) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityParams {
    pub eta: f64,
    pub steps: usize,
    pub sigma_q: f64,
    pub query_bound: f64,
    pub dim: usize,
    pub drift_eta: f64,
    pub drift_samples: usize,
    pub ar_replicas: usize,
}

/// Latent-noise parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentParams {
    pub samples: usize,
    pub threshold: f64,
}

/// Retraining-loop parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrainParams {
    pub options: usize,
    pub organic_n: usize,
    pub delegated_n: usize,
    pub rounds: usize,
    pub replicas: usize,
}

/// A fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Engine,
    pub seed: u64,
    /// Global replica override; defaults to engine-specific counts.
    pub replicas: Option<usize>,
    pub output_dir: PathBuf,
    pub rpe: RpeParams,
    pub rope: RopeParams,
    pub popularity: PopularityParams,
    pub latent: LatentParams,
    pub retrain: RetrainParams,
    /// Canonical key-value pairs after parsing (explicit keys only),
    /// used for the config hash.
    pairs: BTreeMap<String, String>,
}

/// Every recognized key with its default rendering (None = required or
/// computed elsewhere).
const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "seed",
    "replicas",
    "output_dir",
    "engine.rpe.t",
    "engine.rpe.window",
    "engine.rpe.alpha",
    "engine.rpe.alpha_step",
    "engine.rpe.distance",
    "engine.rpe.instances",
    "engine.rope.t",
    "engine.rope.bands",
    "engine.rope.grid_points",
    "engine.popularity.eta",
    "engine.popularity.steps",
    "engine.popularity.sigma_q",
    "engine.popularity.query_bound",
    "engine.popularity.dim",
    "engine.popularity.drift_eta",
    "engine.popularity.drift_samples",
    "engine.popularity.ar_replicas",
    "engine.latent.samples",
    "engine.latent.threshold",
    "engine.retrain.s",
    "engine.retrain.n",
    "engine.retrain.nhat",
    "engine.retrain.rounds",
    "engine.retrain.replicas",
];

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Closest known key to `key`, matching against full keys and their last
/// dotted segment, so "alpa" suggests "engine.rpe.alpha".
fn suggest(key: &str) -> Option<&'static str> {
    let last = key.rsplit('.').next().unwrap_or(key);
    KNOWN_KEYS
        .iter()
        .map(|&k| {
            let seg = k.rsplit('.').next().unwrap_or(k);
            let d = edit_distance(key, k).min(edit_distance(last, seg));
            (d, k)
        })
        .filter(|&(d, _)| d <= 2)
        .min_by_key(|&(d, k)| (d, k))
        .map(|(_, k)| k)
}

struct Parser {
    pairs: BTreeMap<String, String>,
    errors: Vec<String>,
}

impl Parser {
    fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(String::as_str)
    }

    fn parse_or<T: std::str::FromStr>(&mut self, key: &str, default: T, what: &str) -> T {
        match self.get(key) {
            None => default,
            Some(raw) => match raw.parse() {
                Ok(v) => v,
                Err(_) => {
                    self.errors
                        .push(format!("{key}: expected {what}, got '{raw}'"));
                    default
                }
            },
        }
    }

    fn positive_f64(&mut self, key: &str, default: f64) -> f64 {
        let v = self.parse_or(key, default, "a number");
        if !(v > 0.0) || !v.is_finite() {
            self.errors.push(format!("{key}: must be > 0 (got {v})"));
            default
        } else {
            v
        }
    }

    fn count(&mut self, key: &str, default: usize, min: usize) -> usize {
        let v = self.parse_or(key, default, "an integer");
        if v < min {
            self.errors.push(format!("{key}: must be >= {min} (got {v})"));
            default
        } else {
            v
        }
    }
}

/// Parses a flat key-value document. Lines are `key = value`; blank lines
/// and lines starting with `#` are ignored. All validation errors are
/// collected and reported together.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut pairs = BTreeMap::new();
    let mut errors = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {}: expected 'key = value'", lineno + 1));
            continue;
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            match suggest(&key) {
                Some(s) => errors.push(format!("unknown key '{key}' (did you mean '{s}'?)")),
                None => errors.push(format!("unknown key '{key}'")),
            }
            continue;
        }
        if pairs.insert(key.clone(), value).is_some() {
            errors.push(format!("duplicate key '{key}'"));
        }
    }

    let mut p = Parser { pairs, errors };

    let experiment = match p.get("experiment").map(str::to_string) {
        None => {
            p.errors.push("experiment: required key is missing".into());
            Engine::All
        }
        Some(name) => match Engine::from_name(&name) {
            Some(e) => e,
            None => {
                p.errors.push(format!(
                    "experiment: unknown engine '{name}' (known: {})",
                    Engine::NAMES.join(", ")
                ));
                Engine::All
            }
        },
    };
    let seed = p.parse_or("seed", 42u64, "a 64-bit unsigned integer");
    let replicas = match p.get("replicas") {
        None => None,
        Some(_) => Some(p.count("replicas", 1, 1)),
    };
    let output_dir = PathBuf::from(p.get("output_dir").unwrap_or("out"));

    let rpe = RpeParams {
        seq_len: p.count("engine.rpe.t", 16, 2),
        window: p.count("engine.rpe.window", 4, 1),
        alpha: p.positive_f64("engine.rpe.alpha", 5.0),
        alpha_step: p.positive_f64("engine.rpe.alpha_step", 0.1),
        distance: p.get("engine.rpe.distance").unwrap_or("alibi").to_string(),
        instances: p.count("engine.rpe.instances", 100, 1),
    };
    if crate::positional::DistanceFn::from_name(&rpe.distance).is_err() {
        p.errors.push(format!(
            "engine.rpe.distance: unknown family '{}'",
            rpe.distance
        ));
    }
    if rpe.window >= rpe.seq_len {
        p.errors
            .push("engine.rpe.window: must be smaller than engine.rpe.t".into());
    }

    let rope = RopeParams {
        seq_len: p.count("engine.rope.t", 16, 3),
        bands: p.count("engine.rope.bands", 100, 1),
        grid_points: p.count("engine.rope.grid_points", 41, 2),
    };

    let popularity = PopularityParams {
        eta: p.positive_f64("engine.popularity.eta", 0.05),
        steps: p.count("engine.popularity.steps", 500, 1),
        sigma_q: p.parse_or("engine.popularity.sigma_q", 0.1, "a number"),
        query_bound: p.positive_f64("engine.popularity.query_bound", 10.0),
        dim: p.count("engine.popularity.dim", 8, 2),
        drift_eta: p.positive_f64("engine.popularity.drift_eta", 0.01),
        drift_samples: p.count("engine.popularity.drift_samples", 10_000, 2),
        ar_replicas: p.count("engine.popularity.ar_replicas", 20, 1),
    };
    if !(popularity.sigma_q >= 0.0) {
        p.errors
            .push("engine.popularity.sigma_q: must be >= 0".into());
    }

    let latent = LatentParams {
        samples: p.count("engine.latent.samples", 100_000, 2),
        threshold: p.positive_f64("engine.latent.threshold", 2.0),
    };

    let retrain = RetrainParams {
        options: p.count("engine.retrain.s", 4, 2),
        organic_n: p.count("engine.retrain.n", 10, 2),
        delegated_n: p.count("engine.retrain.nhat", 10, 2),
        rounds: p.count("engine.retrain.rounds", 20, 1),
        replicas: p.count("engine.retrain.replicas", 2000, 2),
    };

    if !p.errors.is_empty() {
        return Err(Error::Config(p.errors));
    }
    Ok(ExperimentConfig {
        experiment,
        seed,
        replicas,
        output_dir,
        rpe,
        rope,
        popularity,
        latent,
        retrain,
        pairs: p.pairs,
    })
}

impl ExperimentConfig {
    /// FNV-1a 64-bit hash over the sorted canonical `key=value` pairs;
    /// stable under reordering of the source document. Seed and other
    /// overrides applied after parsing are folded in via the pairs map.
    pub fn hash(&self) -> u64 {
        const OFFSET: u64 = 0xcbf29ce484222325;
        const PRIME: u64 = 0x100000001b3;
        let mut h = OFFSET;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for (k, v) in &self.pairs {
            eat(k.as_bytes());
            eat(b"=");
            eat(v.as_bytes());
            eat(b"\n");
        }
        h
    }

    /// Records an override (CLI flag or environment) so the hash and the
    /// resolved field stay in sync.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.pairs.insert("seed".into(), seed.to_string());
    }

    pub fn override_replicas(&mut self, replicas: usize) {
        self.replicas = Some(replicas);
        self.pairs.insert("replicas".into(), replicas.to_string());
    }

    pub fn override_output_dir(&mut self, dir: PathBuf) {
        self.pairs
            .insert("output_dir".into(), dir.display().to_string());
        self.output_dir = dir;
    }
}
