//! The cluster-identity decision rule: model deltas, gradient-direction
//! similarity, and the joint similarity/loss argmax.
//!
//! # Sign convention
//!
//! The similarity compares the device's *descent* direction `-grad` against
//! the cluster's recent movement `delta = w_now - w_prev`. A device whose
//! data matches a cluster then scores near +1 and the argmax attracts it.
//! Comparing the raw ascent gradient instead (the literal reading of the
//! printed formula) inverts that attraction; it stays available behind
//! `literal: true` for ablation runs.

use crate::error::{Error, Result};
use crate::nn::{GradientVector, ParamVector};

/// Norms below this are treated as zero when forming cosines.
///
/// A cluster that received no updates has a zero delta; its similarity is
/// defined as the neutral value 0 rather than NaN.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// Difference between a cluster's consecutive global models.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDelta {
    pub values: Vec<f64>,
    pub cluster_index: usize,
}

impl ClusterDelta {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Which similarity function compares gradient and delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Cosine,
    NegativeEuclidean,
}

/// Per-cluster scores behind one device's identity decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    /// Similarity per cluster as used by the rule.
    pub similarity: Vec<f64>,
    /// Loss term per cluster as used by the rule (normalized when loss
    /// normalization is enabled, otherwise equal to `raw_loss`).
    pub loss: Vec<f64>,
    /// Mini-batch loss sums per cluster before any normalization.
    pub raw_loss: Vec<f64>,
    /// `lambda * similarity[k] + (1 - lambda) * (-loss[k])`.
    pub combined: Vec<f64>,
    /// Argmax of `combined`, ties broken by lowest index.
    pub chosen: usize,
}

/// `w_now - w_prev` for one cluster.
pub fn model_delta(
    w_now: &ParamVector,
    w_prev: &ParamVector,
    cluster_index: usize,
) -> Result<ClusterDelta> {
    if w_now.len() != w_prev.len() {
        return Err(Error::ShapeMismatch {
            context: "model_delta operand lengths",
            expected: w_now.len(),
            actual: w_prev.len(),
        });
    }
    let values = w_now
        .as_slice()
        .iter()
        .zip(w_prev.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    Ok(ClusterDelta {
        values,
        cluster_index,
    })
}

/// Similarity under the default descent-alignment convention.
pub fn similarity(grad: &GradientVector, delta: &ClusterDelta, kind: SimilarityKind) -> Result<f64> {
    similarity_signed(grad, delta, kind, false)
}

/// Similarity with an explicit sign convention.
///
/// `literal: false` compares `-grad` against `delta` (descent alignment);
/// `literal: true` compares `grad` as printed.
pub fn similarity_signed(
    grad: &GradientVector,
    delta: &ClusterDelta,
    kind: SimilarityKind,
    literal: bool,
) -> Result<f64> {
    if grad.len() != delta.values.len() {
        return Err(Error::ShapeMismatch {
            context: "similarity operand lengths",
            expected: delta.values.len(),
            actual: grad.len(),
        });
    }
    let sign = if literal { 1.0 } else { -1.0 };
    match kind {
        SimilarityKind::Cosine => {
            let mut dot = 0.0;
            let mut g2 = 0.0;
            let mut d2 = 0.0;
            for (&g, &d) in grad.as_slice().iter().zip(&delta.values) {
                dot += (sign * g) * d;
                g2 += g * g;
                d2 += d * d;
            }
            let gn = g2.sqrt();
            let dn = d2.sqrt();
            if gn < ZERO_NORM_THRESHOLD || dn < ZERO_NORM_THRESHOLD {
                return Ok(0.0);
            }
            // Clamp accumulated rounding back into [-1, 1].
            Ok((dot / (gn * dn)).clamp(-1.0, 1.0))
        }
        SimilarityKind::NegativeEuclidean => {
            let mut dist2 = 0.0;
            for (&g, &d) in grad.as_slice().iter().zip(&delta.values) {
                let diff = sign * g - d;
                dist2 += diff * diff;
            }
            Ok(-dist2.sqrt())
        }
    }
}

/// Min-max normalize a device's candidate losses onto `[0, 1]`.
///
/// All-equal losses map to all zeros; a constant loss term cannot change the
/// argmax either way.
pub fn normalize_losses(losses: &[f64]) -> Vec<f64> {
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range < ZERO_NORM_THRESHOLD {
        return vec![0.0; losses.len()];
    }
    losses.iter().map(|l| (l - min) / range).collect()
}

/// The joint identity rule: argmax over
/// `lambda * similarity[k] + (1 - lambda) * (-loss[k])`.
///
/// Ties resolve to the lowest cluster index. `lambda = 0` degenerates to the
/// loss-only baseline (argmin of losses); `lambda = 1` to pure similarity.
pub fn select_cluster(
    similarities: &[f64],
    losses: &[f64],
    lambda: f64,
) -> Result<(usize, ScoreBreakdown)> {
    if similarities.is_empty() {
        return Err(Error::InvalidConfig(
            "select_cluster requires at least one candidate cluster".into(),
        ));
    }
    if similarities.len() != losses.len() {
        return Err(Error::ShapeMismatch {
            context: "select_cluster score lengths",
            expected: similarities.len(),
            actual: losses.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    if similarities.iter().chain(losses).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("select_cluster score"));
    }

    let combined: Vec<f64> = similarities
        .iter()
        .zip(losses)
        .map(|(&s, &l)| lambda * s + (1.0 - lambda) * (-l))
        .collect();
    let mut chosen = 0;
    for (k, &c) in combined.iter().enumerate() {
        if c > combined[chosen] {
            chosen = k;
        }
    }
    let breakdown = ScoreBreakdown {
        similarity: similarities.to_vec(),
        loss: losses.to_vec(),
        raw_loss: losses.to_vec(),
        combined,
        chosen,
    };
    Ok((chosen, breakdown))
}
