//! Numerically stable softmax and scaled dot-product attention.
//!
//! These primitives are shared by every experiment engine. All linear
//! algebra is plain `f64` loops; desk-scale sizes (d <= 64, T <= 256)
//! need no BLAS.

use crate::{Error, Result};

/// Attention logits for one query row. Entries must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("logit vector must be nonempty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "logit {i} is not finite: {}",
                values[i]
            )));
        }
        Ok(LogitVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Softmax weights: nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Wraps raw probabilities, checking nonnegativity and normalization.
    pub fn from_probs(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("weight vector must be nonempty"));
        }
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain("weights must be finite and nonnegative"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("weights sum to {sum}, not 1")));
        }
        Ok(WeightVector(values))
    }
}

/// Shift-stable softmax over one row of logits.
///
/// The maximum logit is subtracted before exponentiation, so arbitrarily
/// large (finite) logits stay in range.
pub fn softmax_row(logits: &LogitVector) -> WeightVector {
    let max = logits
        .values()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.values().iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    WeightVector(exps.into_iter().map(|e| e / sum).collect())
}

/// Scaled dot-product logits ⟨q, k_j⟩ / √dim for each key row.
pub fn scaled_dot_logits(query: &[f64], keys: &[Vec<f64>], dim: usize) -> Result<LogitVector> {
    if dim == 0 {
        return Err(Error::domain("dim must be >= 1"));
    }
    if keys.is_empty() {
        return Err(Error::domain("key matrix must be nonempty"));
    }
    let scale = 1.0 / (dim as f64).sqrt();
    let mut out = Vec::with_capacity(keys.len());
    for (j, key) in keys.iter().enumerate() {
        if key.len() != query.len() {
            return Err(Error::domain(format!(
                "key row {j} has length {}, query has length {}",
                key.len(),
                query.len()
            )));
        }
        let dot: f64 = query.iter().zip(key).map(|(a, b)| a * b).sum();
        out.push(dot * scale);
    }
    LogitVector::new(out)
}

/// One single-head attention instance: stacked queries, keys, values.
#[derive(Debug, Clone)]
pub struct AttentionInstance {
    pub queries: Vec<Vec<f64>>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    /// Dimension used in the 1/√d scaling.
    pub dim: usize,
}

impl AttentionInstance {
    pub fn new(
        queries: Vec<Vec<f64>>,
        keys: Vec<Vec<f64>>,
        values: Vec<Vec<f64>>,
        dim: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dim must be >= 1"));
        }
        if queries.is_empty() || keys.is_empty() || values.is_empty() {
            return Err(Error::domain("queries, keys, values must be nonempty"));
        }
        if keys.len() != values.len() {
            return Err(Error::domain(format!(
                "{} key rows vs {} value rows",
                keys.len(),
                values.len()
            )));
        }
        let qd = queries[0].len();
        if queries.iter().any(|r| r.len() != qd) || keys.iter().any(|r| r.len() != qd) {
            return Err(Error::domain("query/key rows have inconsistent widths"));
        }
        let vd = values[0].len();
        if values.iter().any(|r| r.len() != vd) {
            return Err(Error::domain("value rows have inconsistent widths"));
        }
        Ok(AttentionInstance {
            queries,
            keys,
            values,
            dim,
        })
    }
}

/// Scaled dot-product attention, optionally with a causal mask.
///
/// With `causal_mask`, query row `l` only attends to key positions
/// `0..=l`; masked positions get exactly zero weight.
pub fn attention(instance: &AttentionInstance, causal_mask: bool) -> Result<Vec<Vec<f64>>> {
    let vd = instance.values[0].len();
    let mut out = Vec::with_capacity(instance.queries.len());
    for (l, q) in instance.queries.iter().enumerate() {
        let visible = if causal_mask {
            (l + 1).min(instance.keys.len())
        } else {
            instance.keys.len()
        };
        let logits = scaled_dot_logits(q, &instance.keys[..visible], instance.dim)?;
        let weights = softmax_row(&logits);
        let mut row = vec![0.0; vd];
        for (a, v) in weights.values().iter().zip(&instance.values[..visible]) {
            for (acc, x) in row.iter_mut().zip(v) {
                *acc += a * x;
            }
        }
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn rand_matrix(rng: &mut CounterRng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..cols).map(|_| rng.standard_normal()).collect())
            .collect()
    }

    #[test]
    fn equal_logits_give_uniform() {
        let w = softmax_row(&LogitVector::new(vec![0.0, 0.0, 0.0]).unwrap());
        for &v in w.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn derived_two_point_softmax() {
        // exp(1)/(exp(1)+exp(2)) evaluated at high precision.
        let w = softmax_row(&LogitVector::new(vec![1.0, 2.0]).unwrap());
        assert!((w.values()[0] - 0.2689414213699951).abs() < 1e-15);
        assert!((w.values()[1] - 0.7310585786300049).abs() < 1e-15);
    }

    #[test]
    fn shift_invariance() {
        let x = vec![0.3, -1.2, 4.0, 2.2];
        let base = softmax_row(&LogitVector::new(x.clone()).unwrap());
        for c in [-1000.0, -1.0, 17.5, 1000.0] {
            let shifted =
                softmax_row(&LogitVector::new(x.iter().map(|v| v + c).collect()).unwrap());
            for (a, b) in base.values().iter().zip(shifted.values()) {
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(LogitVector::new(vec![]).is_err());
        assert!(LogitVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(LogitVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn single_logit_is_allowed() {
        let w = softmax_row(&LogitVector::new(vec![42.0]).unwrap());
        assert_eq!(w.values(), &[1.0]);
    }

    #[test]
    fn zero_query_gives_zero_logits() {
        let keys = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let z = scaled_dot_logits(&[0.0, 0.0], &keys, 4).unwrap();
        assert_eq!(z.values(), &[0.0, 0.0]);
    }

    #[test]
    fn unit_basis_logit() {
        // q = k = e1, dim = 4 -> <e,e>/sqrt(4) = 1/2.
        let keys = vec![vec![1.0, 0.0, 0.0, 0.0]];
        let z = scaled_dot_logits(&[1.0, 0.0, 0.0, 0.0], &keys, 4).unwrap();
        assert!((z.values()[0] - 0.5).abs() < 1e-16);
    }

    #[test]
    fn scaled_dot_matches_naive_oracle() {
        let mut rng = CounterRng::stream(11, 0, 0);
        let q: Vec<f64> = (0..8).map(|_| rng.standard_normal()).collect();
        let keys = rand_matrix(&mut rng, 5, 8);
        let z = scaled_dot_logits(&q, &keys, 8).unwrap();
        for (j, key) in keys.iter().enumerate() {
            let mut dot = 0.0;
            for i in 0..8 {
                dot += q[i] * key[i];
            }
            assert!((z.values()[j] - dot / 8f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        assert!(scaled_dot_logits(&[1.0, 2.0], &[vec![1.0]], 2).is_err());
    }

    #[test]
    fn constant_values_are_fixed_point() {
        let mut rng = CounterRng::stream(12, 0, 0);
        let inst = AttentionInstance::new(
            rand_matrix(&mut rng, 3, 4),
            rand_matrix(&mut rng, 6, 4),
            vec![vec![2.5, -1.0]; 6],
            4,
        )
        .unwrap();
        for row in attention(&inst, false).unwrap() {
            assert!((row[0] - 2.5).abs() < 1e-14);
            assert!((row[1] + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn masked_first_row_copies_first_value() {
        let mut rng = CounterRng::stream(13, 0, 0);
        let inst = AttentionInstance::new(
            rand_matrix(&mut rng, 4, 4),
            rand_matrix(&mut rng, 4, 4),
            rand_matrix(&mut rng, 4, 3),
            4,
        )
        .unwrap();
        let out = attention(&inst, true).unwrap();
        for (a, b) in out[0].iter().zip(&inst.values[0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn masked_rows_ignore_future_positions() {
        let mut rng = CounterRng::stream(14, 0, 0);
        let inst = AttentionInstance::new(
            rand_matrix(&mut rng, 3, 4),
            rand_matrix(&mut rng, 3, 4),
            rand_matrix(&mut rng, 3, 2),
            4,
        )
        .unwrap();
        let base = attention(&inst, true).unwrap();
        let mut mutated = inst.clone();
        mutated.keys[2] = vec![99.0; 4];
        mutated.values[2] = vec![-99.0; 2];
        let out = attention(&mutated, true).unwrap();
        for l in 0..2 {
            for (a, b) in base[l].iter().zip(&out[l]) {
                assert!((a - b).abs() == 0.0, "row {l} changed");
            }
        }
    }

    #[test]
    fn attention_matches_explicit_oracle() {
        let mut rng = CounterRng::stream(15, 0, 0);
        let inst = AttentionInstance::new(
            rand_matrix(&mut rng, 3, 3),
            rand_matrix(&mut rng, 3, 3),
            rand_matrix(&mut rng, 3, 3),
            3,
        )
        .unwrap();
        let out = attention(&inst, false).unwrap();
        // Straight-line softmax-then-average evaluation.
        for l in 0..3 {
            let mut logits = [0.0; 3];
            for j in 0..3 {
                let mut dot = 0.0;
                for i in 0..3 {
                    dot += inst.queries[l][i] * inst.keys[j][i];
                }
                logits[j] = dot / 3f64.sqrt();
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            for c in 0..3 {
                let mut expect = 0.0;
                for j in 0..3 {
                    expect += exps[j] / s * inst.values[j][c];
                }
                assert!((out[l][c] - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn monotonicity_raising_one_logit() {
        let mut rng = CounterRng::stream(16, 0, 0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| 2.0 * rng.standard_normal()).collect();
            let base = softmax_row(&LogitVector::new(x.clone()).unwrap());
            let mut bumped = x.clone();
            bumped[2] += 0.5;
            let after = softmax_row(&LogitVector::new(bumped).unwrap());
            assert!(after.values()[2] > base.values()[2]);
            for j in [0usize, 1, 3, 4, 5] {
                assert!(after.values()[j] < base.values()[j]);
            }
        }
    }

    #[test]
    fn weights_sum_to_one_and_positive() {
        let mut rng = CounterRng::stream(17, 0, 0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..10).map(|_| 50.0 * rng.standard_normal()).collect();
            let w = softmax_row(&LogitVector::new(x).unwrap());
            let sum: f64 = w.values().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(w.values().iter().all(|&v| v > 0.0));
        }
    }
}
