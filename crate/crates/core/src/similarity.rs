//! Cosine similarity and per-item iteration statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("need at least 2 scores, got {0}")]
    TooFewScores(usize),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]` against rounding.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    // Dividing by each norm separately keeps na * nb from overflowing.
    Ok((dot(a, b) / na / nb).clamp(-1.0, 1.0))
}

/// Scores of one item across its generation iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (divides by n).
    pub sd: f64,
}

pub const MIN_ITERATIONS: usize = 2;

pub fn iteration_stats(scores: &[f64]) -> Result<ScoreStats, SimilarityError> {
    if scores.len() < MIN_ITERATIONS {
        return Err(SimilarityError::TooFewScores(scores.len()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(ScoreStats {
        scores: scores.to_vec(),
        mean,
        sd: var.sqrt(),
    })
}
