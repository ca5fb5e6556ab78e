//! Minimal semantic-ID generative recommender.
//!
//! One encoder self-attention layer, one decoder layer (masked
//! self-attention + cross-attention), single head, identity FFN, and a
//! linear output head. Weights are supplied or drawn from a seeded
//! Gaussian initializer; nothing here is trained.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::attention::{attention, softmax_row, AttentionInstance, LogitVector};
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Item code: exactly `L` token ids, each below the vocabulary size.
pub type ItemCode = Vec<usize>;

/// Bijective map from item indices to length-`L` token codes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct Catalog {
    code_len: usize,
    vocab: usize,
    codes: Vec<ItemCode>,
}

/// Wire form: `{"L": int, "vocab": int, "codes": [[int,...],...]}`.
#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    #[serde(rename = "L")]
    code_len: usize,
    vocab: usize,
    codes: Vec<ItemCode>,
}

impl TryFrom<CatalogRepr> for Catalog {
    type Error = Error;
    fn try_from(repr: CatalogRepr) -> Result<Self> {
        Catalog::new(repr.code_len, repr.vocab, repr.codes)
    }
}

impl From<Catalog> for CatalogRepr {
    fn from(c: Catalog) -> Self {
        CatalogRepr {
            code_len: c.code_len,
            vocab: c.vocab,
            codes: c.codes,
        }
    }
}

impl Catalog {
    pub fn new(code_len: usize, vocab: usize, codes: Vec<ItemCode>) -> Result<Self> {
        if code_len == 0 || vocab == 0 {
            return Err(Error::Catalog("L and vocab must be >= 1".into()));
        }
        if codes.is_empty() {
            return Err(Error::Catalog("catalog must contain at least one item".into()));
        }
        let mut seen: HashMap<&[usize], usize> = HashMap::new();
        for (i, code) in codes.iter().enumerate() {
            if code.len() != code_len {
                return Err(Error::Catalog(format!(
                    "item {i}: code length {} != L = {code_len}",
                    code.len()
                )));
            }
            if let Some(&tok) = code.iter().find(|&&t| t >= vocab) {
                return Err(Error::Catalog(format!(
                    "item {i}: token {tok} out of vocabulary (|C| = {vocab})"
                )));
            }
            if let Some(&dup) = seen.get(code.as_slice()) {
                return Err(Error::Catalog(format!(
                    "items {dup} and {i} share code {code:?}; bijectivity fails"
                )));
            }
            seen.insert(code.as_slice(), i);
        }
        Ok(Catalog {
            code_len,
            vocab,
            codes,
        })
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// φ(i): the code of item `i`.
    pub fn encode(&self, item: usize) -> Result<&ItemCode> {
        self.codes
            .get(item)
            .ok_or_else(|| Error::Catalog(format!("item index {item} out of range")))
    }

    /// φ⁻¹: item index of `code`, or a lookup error for unknown codes.
    pub fn decode(&self, code: &[usize]) -> Result<usize> {
        self.codes
            .iter()
            .position(|c| c.as_slice() == code)
            .ok_or_else(|| Error::Catalog(format!("unknown code {code:?}")))
    }

    pub fn codes(&self) -> &[ItemCode] {
        &self.codes
    }
}

/// encode followed by decode; the identity for every valid catalog.
pub fn code_roundtrip(catalog: &Catalog, item: usize) -> Result<usize> {
    let code = catalog.encode(item)?.clone();
    catalog.decode(&code)
}

/// Ordered user history of item indices.
#[derive(Debug, Clone)]
pub struct History(pub Vec<usize>);

impl History {
    /// Token expansion: concatenated codes, T = t * L entries.
    pub fn tokens(&self, catalog: &Catalog) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.0.len() * catalog.code_len());
        for &item in &self.0 {
            out.extend_from_slice(catalog.encode(item)?);
        }
        Ok(out)
    }
}

/// Row-major matrix applied as x * W (x indexed by rows of W).
pub type Matrix = Vec<Vec<f64>>;

fn apply(x: &[f64], w: &Matrix) -> Vec<f64> {
    let out_dim = w[0].len();
    let mut y = vec![0.0; out_dim];
    for (xi, row) in x.iter().zip(w) {
        for (acc, wij) in y.iter_mut().zip(row) {
            *acc += xi * wij;
        }
    }
    y
}

fn apply_all(xs: &[Vec<f64>], w: &Matrix) -> Vec<Vec<f64>> {
    xs.iter().map(|x| apply(x, w)).collect()
}

/// Fixed weights of the one-layer encoder/decoder model.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub dim: usize,
    pub vocab: usize,
    /// Token embedding table, |C| x d. Shared by encoder and decoder.
    pub embedding: Matrix,
    /// Decoder start-of-code embedding (query for the first token).
    pub start: Vec<f64>,
    pub enc_q: Matrix,
    pub enc_k: Matrix,
    pub enc_v: Matrix,
    pub dec_q: Matrix,
    pub dec_k: Matrix,
    pub dec_v: Matrix,
    pub cross_q: Matrix,
    pub cross_k: Matrix,
    pub cross_v: Matrix,
    /// Output head, |C| x d.
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
}

impl ModelWeights {
    /// Seeded Gaussian initializer (mean 0, std 0.2).
    pub fn gaussian(vocab: usize, dim: usize, seed: u64) -> Self {
        let mut rng = CounterRng::from_key(seed);
        let mut mat = |rows: usize, cols: usize| -> Matrix {
            (0..rows)
                .map(|_| (0..cols).map(|_| 0.2 * rng.standard_normal()).collect())
                .collect()
        };
        let embedding = mat(vocab, dim);
        let start = mat(1, dim).pop().unwrap();
        let enc_q = mat(dim, dim);
        let enc_k = mat(dim, dim);
        let enc_v = mat(dim, dim);
        let dec_q = mat(dim, dim);
        let dec_k = mat(dim, dim);
        let dec_v = mat(dim, dim);
        let cross_q = mat(dim, dim);
        let cross_k = mat(dim, dim);
        let cross_v = mat(dim, dim);
        let out_w = mat(vocab, dim);
        let out_b = mat(1, vocab).pop().unwrap();
        ModelWeights {
            dim,
            vocab,
            embedding,
            start,
            enc_q,
            enc_k,
            enc_v,
            dec_q,
            dec_k,
            dec_v,
            cross_q,
            cross_k,
            cross_v,
            out_w,
            out_b,
        }
    }

    fn embed(&self, tokens: &[usize]) -> Vec<Vec<f64>> {
        tokens.iter().map(|&t| self.embedding[t].clone()).collect()
    }

    /// Encoder memory: one self-attention layer over the history tokens.
    fn encode_history(&self, catalog: &Catalog, history: &History) -> Result<Vec<Vec<f64>>> {
        let tokens = history.tokens(catalog)?;
        if tokens.is_empty() {
            return Err(Error::domain("history must be nonempty"));
        }
        let h0 = self.embed(&tokens);
        let inst = AttentionInstance::new(
            apply_all(&h0, &self.enc_q),
            apply_all(&h0, &self.enc_k),
            apply_all(&h0, &self.enc_v),
            self.dim,
        )?;
        attention(&inst, false)
    }

    /// Decoder states for all positions of `prefix` plus the next one.
    fn decode_states(&self, enc: &[Vec<f64>], prefix: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut y0 = vec![self.start.clone()];
        y0.extend(self.embed(prefix));
        let self_inst = AttentionInstance::new(
            apply_all(&y0, &self.dec_q),
            apply_all(&y0, &self.dec_k),
            apply_all(&y0, &self.dec_v),
            self.dim,
        )?;
        let y_tilde = attention(&self_inst, true)?;
        let cross_inst = AttentionInstance::new(
            apply_all(&y_tilde, &self.cross_q),
            apply_all(enc, &self.cross_k),
            apply_all(enc, &self.cross_v),
            self.dim,
        )?;
        attention(&cross_inst, false)
    }

    fn head(&self, state: &[f64]) -> NextTokenDistribution {
        let logits: Vec<f64> = self
            .out_w
            .iter()
            .zip(&self.out_b)
            .map(|(row, b)| row.iter().zip(state).map(|(w, y)| w * y).sum::<f64>() + b)
            .collect();
        NextTokenDistribution {
            probs: softmax_row(&LogitVector::new(logits).expect("finite logits")),
        }
    }
}

/// Distribution over the token vocabulary for one decoding step.
#[derive(Debug, Clone)]
pub struct NextTokenDistribution {
    pub probs: crate::attention::WeightVector,
}

/// p_θ(c_l | H_t, c_<l): one decoding step of the forward pass.
pub fn forward_step(
    weights: &ModelWeights,
    catalog: &Catalog,
    history: &History,
    prefix: &[usize],
) -> Result<NextTokenDistribution> {
    if prefix.len() >= catalog.code_len() {
        return Err(Error::domain(format!(
            "prefix length {} >= L = {}",
            prefix.len(),
            catalog.code_len()
        )));
    }
    let enc = weights.encode_history(catalog, history)?;
    let states = weights.decode_states(&enc, prefix)?;
    Ok(weights.head(states.last().expect("at least the start row")))
}

/// All L next-token distributions along `code` in one pass.
pub fn forward_all(
    weights: &ModelWeights,
    catalog: &Catalog,
    history: &History,
    code: &[usize],
) -> Result<Vec<NextTokenDistribution>> {
    if code.len() != catalog.code_len() {
        return Err(Error::domain("code length must equal L"));
    }
    let enc = weights.encode_history(catalog, history)?;
    // Decoder input covers the full code minus its last token; state at
    // row l predicts token l.
    let states = weights.decode_states(&enc, &code[..code.len() - 1])?;
    Ok(states.iter().map(|s| weights.head(s)).collect())
}

/// p_θ(item | H_t): product of the per-token probabilities of its code.
pub fn item_probability(
    weights: &ModelWeights,
    catalog: &Catalog,
    history: &History,
    item: usize,
) -> Result<f64> {
    let code = catalog.encode(item)?.clone();
    let dists = forward_all(weights, catalog, history, &code)?;
    Ok(code
        .iter()
        .zip(&dists)
        .map(|(&tok, d)| d.probs.values()[tok])
        .product())
}

/// Catalog-constrained decoding: the full distribution over items.
///
/// At each step, tokens whose extended prefix matches no catalog code get
/// probability zero and the remainder is renormalized.
pub fn constrained_decode(
    weights: &ModelWeights,
    catalog: &Catalog,
    history: &History,
) -> Result<Vec<f64>> {
    if catalog.is_empty() {
        return Err(Error::domain("catalog must be nonempty"));
    }
    let enc = weights.encode_history(catalog, history)?;
    let mut out = vec![0.0; catalog.len()];
    // (prefix, accumulated probability) pairs, expanded depth-first.
    let mut frontier: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for _level in 0..catalog.code_len() {
        let mut next = Vec::new();
        for (prefix, mass) in frontier {
            let states = weights.decode_states(&enc, &prefix)?;
            let dist = weights.head(states.last().unwrap());
            // Tokens that extend `prefix` toward at least one catalog code.
            let allowed: Vec<usize> = (0..catalog.vocab())
                .filter(|&tok| {
                    catalog.codes().iter().any(|code| {
                        code.len() > prefix.len()
                            && code[..prefix.len()] == prefix[..]
                            && code[prefix.len()] == tok
                    })
                })
                .collect();
            let norm: f64 = allowed.iter().map(|&t| dist.probs.values()[t]).sum();
            for &tok in &allowed {
                let mut extended = prefix.clone();
                extended.push(tok);
                next.push((extended, mass * dist.probs.values()[tok] / norm));
            }
        }
        frontier = next;
    }
    for (code, mass) in frontier {
        out[catalog.decode(&code)?] += mass;
    }
    Ok(out)
}
