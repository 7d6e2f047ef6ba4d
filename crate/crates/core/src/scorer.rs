//! Probability filtering: turns a class-probability vector into an anomaly score.
//!
//! With `p1 >= p2` the two largest probabilities and threshold `t`:
//!
//! ```text
//! score = 1 - p1     if p1 > t   (confident single subspecies)
//!       = p1 + p2    otherwise   (mass split between two parents)
//! ```
//!
//! `p1 == t` takes the second branch.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::trainer::{forward, MlpParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub threshold: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig { threshold: 0.75 }
    }
}

impl ScorerConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!("threshold must be in (0, 1), got {threshold}")));
        }
        Ok(ScorerConfig { threshold })
    }
}

/// The two largest entries and their indices; ties go to the lower index.
pub fn top2(probs: &[f64]) -> Result<(f64, f64, usize, usize)> {
    if probs.len() < 2 {
        return Err(Error::invalid(format!("top2 needs at least 2 classes, got {}", probs.len())));
    }
    let (mut i1, mut i2) = if probs[1] > probs[0] { (1, 0) } else { (0, 1) };
    for (i, &p) in probs.iter().enumerate().skip(2) {
        if p > probs[i1] {
            i2 = i1;
            i1 = i;
        } else if p > probs[i2] {
            i2 = i;
        }
    }
    Ok((probs[i1], probs[i2], i1, i2))
}

/// Anomaly score in `[0, 1]`; higher means more likely hybrid.
///
/// # Panics
/// If `probs` has fewer than two entries.
pub fn anomaly_score(probs: &[f64], cfg: &ScorerConfig) -> f64 {
    let (p1, p2, _, _) = top2(probs).expect("anomaly_score needs K >= 2");
    let score = if p1 > cfg.threshold { 1.0 - p1 } else { p1 + p2 };
    // Rounding in a softmax can push p1 + p2 a hair past 1.
    score.clamp(0.0, 1.0)
}

/// Scores every row of `embeddings`; `ids[i]` names row `i`.
pub fn score_batch(
    params: &MlpParams,
    embeddings: &EmbeddingMatrix,
    ids: &[String],
    cfg: &ScorerConfig,
) -> Result<Vec<(String, f64)>> {
    if ids.len() != embeddings.rows() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.rows(),
            got: ids.len(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..embeddings.rows()).map(|i| embeddings.row_f64(i)).collect();
    let scores = score_vectors(params, &rows, cfg)?;
    Ok(ids.iter().cloned().zip(scores).collect())
}

pub fn score_vectors(params: &MlpParams, rows: &[Vec<f64>], cfg: &ScorerConfig) -> Result<Vec<f64>> {
    rows.iter()
        .map(|x| forward(params, x).map(|(_, probs)| anomaly_score(&probs, cfg)))
        .collect()
}

/// `id,score` CSV with six decimals.
pub fn format_scores_csv(scores: &[(String, f64)]) -> String {
    let mut out = String::from("id,score\n");
    for (id, s) in scores {
        out.push_str(&format!("{id},{s:.6}\n"));
    }
    out
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<(String, f64)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "id,score")) => {}
        _ => return Err(Error::invalid("score file must start with header `id,score`")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (id, s) = l
                .rsplit_once(',')
                .ok_or_else(|| Error::invalid(format!("line {}: expected `id,score`", i + 1)))?;
            let s: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("line {}: bad score `{s}`", i + 1)))?;
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid(format!("line {}: score {s} outside [0, 1]", i + 1)));
            }
            Ok((id.to_string(), s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Rng;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    const T: ScorerConfig = ScorerConfig { threshold: 0.75 };

    #[test]
    fn top2_examples() {
        assert_eq!(top2(&[0.1, 0.7, 0.2]).unwrap(), (0.7, 0.2, 1, 2));
        assert_eq!(top2(&[0.5, 0.5]).unwrap(), (0.5, 0.5, 0, 1));
        assert_eq!(top2(&[0.25; 4]).unwrap(), (0.25, 0.25, 0, 1));
        assert_eq!(top2(&[0.1, 0.3, 0.3, 0.3]).unwrap(), (0.3, 0.3, 1, 2));
        assert_eq!(top2(&[0.2, 0.1, 0.7]).unwrap(), (0.7, 0.2, 2, 0));
        assert!(top2(&[1.0]).is_err());
    }

    #[test]
    fn score_examples() {
        assert!((anomaly_score(&[0.9, 0.05, 0.05], &T) - 0.1).abs() < 1e-15);
        assert_eq!(anomaly_score(&[0.5, 0.5], &T), 1.0);
        assert_eq!(anomaly_score(&[0.4, 0.35, 0.25], &T), 0.75);
        // p1 == t is not "> t", so the hybrid branch applies.
        assert_eq!(anomaly_score(&[0.75, 0.25], &T), 1.0);
    }

    #[test]
    fn threshold_validation() {
        assert!(ScorerConfig::new(0.0).is_err());
        assert!(ScorerConfig::new(1.0).is_err());
        assert!(ScorerConfig::new(f64::NAN).is_err());
        assert!(ScorerConfig::new(0.75).is_ok());
    }

    #[test]
    fn zero_net_scores_half() {
        let p = MlpParams::zeros(3, 4, 4, 4, true);
        let rows = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 5.0]];
        assert_eq!(score_vectors(&p, &rows, &T).unwrap(), vec![0.5, 0.5]);
        assert!(score_vectors(&p, &[], &T).unwrap().is_empty());
    }

    #[test]
    fn batch_matches_per_sample() {
        let mut rng = Rng::seed_from_u64(11);
        let p = MlpParams::init(6, 16, 8, 4, true, &mut rng);
        let data: Vec<f32> = (0..100 * 6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let m = EmbeddingMatrix::new(100, 6, data).unwrap();
        let ids: Vec<String> = (0..100).map(|i| format!("s{i}")).collect();
        let got = score_batch(&p, &m, &ids, &T).unwrap();
        for (i, (id, s)) in got.iter().enumerate() {
            assert_eq!(id, &ids[i]);
            let (_, probs) = forward(&p, &m.row_f64(i)).unwrap();
            assert_eq!(*s, anomaly_score(&probs, &T));
        }
        assert!(score_batch(&p, &m, &ids[..99], &T).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let scores = vec![("a".to_string(), 0.5), ("b".to_string(), 0.1234567)];
        let text = format_scores_csv(&scores);
        assert_eq!(text, "id,score\na,0.500000\nb,0.123457\n");
        let back = parse_scores_csv(&text).unwrap();
        assert_eq!(back[1], ("b".to_string(), 0.123457));
        assert!(parse_scores_csv("x\n").is_err());
        assert!(parse_scores_csv("id,score\na,1.5\n").is_err());
    }

    fn simplex(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn score_in_unit_interval(raw in proptest::collection::vec(0.0f64..1.0, 2..10), t in 0.01f64..0.99) {
            prop_assume!(raw.iter().sum::<f64>() > 0.0);
            let s = anomaly_score(&simplex(&raw), &ScorerConfig::new(t).unwrap());
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn invariant_to_permuting_tail(raw in proptest::collection::vec(0.01f64..1.0, 4..8), rot in 1usize..8) {
            let probs = simplex(&raw);
            let (_, _, i1, i2) = top2(&probs).unwrap();
            let mut tail: Vec<usize> = (0..probs.len()).filter(|&i| i != i1 && i != i2).collect();
            let n = tail.len();
            tail.rotate_left(rot % n);
            let mut permuted = probs.clone();
            let slots = (0..probs.len()).filter(|&i| i != i1 && i != i2);
            for (slot, &src) in slots.zip(&tail) {
                permuted[slot] = probs[src];
            }
            prop_assert_eq!(anomaly_score(&probs, &T), anomaly_score(&permuted, &T));
        }

        #[test]
        fn confident_branch_is_monotone(a in 0.76f64..1.0, b in 0.76f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(lo < hi);
            let s_lo = anomaly_score(&[lo, 1.0 - lo], &T);
            let s_hi = anomaly_score(&[hi, 1.0 - hi], &T);
            prop_assert!(s_hi < s_lo);
            prop_assert!(s_lo < 1.0 - T.threshold);
        }
    }
}
