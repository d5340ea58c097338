//! Clustering purity, averaged test accuracy, and per-cluster training-loss
//! tracking.
//!
//! Purity follows the paper's definition verbatim: each assigned cluster
//! independently claims its best-overlapping ground-truth group, so merged
//! clusters can score higher than any one-to-one relabeling would. The
//! Hungarian-matched variant is deliberately not used.

use crate::error::{Error, Result};
use crate::federation::{DeviceState, RoundOutcome, ServerState};
use crate::nn::{Batch, Model};

/// Assigned identities and ground-truth clusters, one entry per device.
#[derive(Debug, Clone)]
pub struct PurityInput {
    pub assigned: Vec<usize>,
    pub truth: Vec<usize>,
}

/// `(1/M) * sum_k max_j |truth_j  ∩ assigned_k|`.
pub fn purity(input: &PurityInput, num_clusters: usize) -> Result<f64> {
    if input.assigned.len() != input.truth.len() {
        return Err(Error::ShapeMismatch {
            context: "purity assigned vs truth lengths",
            expected: input.truth.len(),
            actual: input.assigned.len(),
        });
    }
    if input.assigned.is_empty() {
        return Err(Error::InvalidConfig("purity needs at least one device".into()));
    }
    let mut counts = vec![vec![0usize; num_clusters]; num_clusters];
    for (&a, &t) in input.assigned.iter().zip(&input.truth) {
        if a >= num_clusters {
            return Err(Error::IndexOutOfRange {
                context: "assigned cluster",
                index: a,
                limit: num_clusters,
            });
        }
        if t >= num_clusters {
            return Err(Error::IndexOutOfRange {
                context: "ground-truth cluster",
                index: t,
                limit: num_clusters,
            });
        }
        counts[a][t] += 1;
    }
    let matched: usize = counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(matched as f64 / input.assigned.len() as f64)
}

/// Accuracy of each device's cluster model on that device's own test set,
/// averaged without weighting.
pub fn mean_test_accuracy<M: Model>(
    model: &M,
    devices: &[DeviceState],
    server: &ServerState,
) -> Result<f64> {
    if devices.is_empty() {
        return Err(Error::InvalidConfig("accuracy needs at least one device".into()));
    }
    let mut total = 0.0;
    for dev in devices {
        let identity = dev.identity.ok_or_else(|| {
            Error::InvalidConfig(format!("device {} has no cluster identity yet", dev.device_id))
        })?;
        if dev.dataset.test.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "device {} has an empty test split",
                dev.device_id
            )));
        }
        let batch = Batch::new(dev.dataset.test.features.clone(), dev.dataset.test.labels.clone())?;
        let preds = model.predict(&server.models_now[identity], &batch)?;
        let correct = preds
            .iter()
            .zip(&dev.dataset.test.labels)
            .filter(|(p, y)| p == y)
            .count();
        total += correct as f64 / dev.dataset.test.len() as f64;
    }
    Ok(total / devices.len() as f64)
}

/// Mean per-sample decision-batch loss of each cluster's member devices.
///
/// Uses the raw mini-batch loss each member computed for its final cluster
/// during identity determination, divided by the batch size so curves are
/// comparable across batch sizes. Empty clusters report `None`.
pub fn per_cluster_train_loss(
    outcome: &RoundOutcome,
    batch_size: usize,
) -> Result<Vec<Option<f64>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let k = outcome.cluster_sizes.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (device, &id) in outcome.identities.iter().enumerate() {
        let scores = &outcome.per_device_scores[device];
        if id >= k || id >= scores.raw_loss.len() {
            return Err(Error::IndexOutOfRange {
                context: "per-cluster loss identity",
                index: id,
                limit: k.min(scores.raw_loss.len()),
            });
        }
        sums[id] += scores.raw_loss[id] / batch_size as f64;
        counts[id] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| if n == 0 { None } else { Some(s / n as f64) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ScoreBreakdown;
    use crate::nn::ParamVector;

    #[test]
    fn purity_is_one_for_relabelings() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        let assigned = vec![2, 2, 0, 0, 1, 1];
        let p = purity(
            &PurityInput {
                assigned,
                truth,
            },
            3,
        )
        .unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn merged_assignment_scores_largest_group() {
        // 80 devices, truth balanced over 4 clusters, all assigned to one.
        let truth: Vec<usize> = (0..80).map(|i| i / 20).collect();
        let assigned = vec![0usize; 80];
        let p = purity(&PurityInput { assigned, truth }, 4).unwrap();
        assert_eq!(p, 0.25);
    }

    #[test]
    fn purity_hand_value() {
        let input = PurityInput {
            truth: vec![0, 0, 1, 1],
            assigned: vec![0, 0, 0, 1],
        };
        assert_eq!(purity(&input, 2).unwrap(), 0.75);
    }

    #[test]
    fn purity_rejects_mismatched_lengths() {
        let input = PurityInput {
            truth: vec![0, 1],
            assigned: vec![0],
        };
        assert!(matches!(
            purity(&input, 2),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    fn outcome_with(
        identities: Vec<usize>,
        raw_losses: Vec<Vec<f64>>,
        num_clusters: usize,
    ) -> RoundOutcome {
        let sizes = {
            let mut s = vec![0usize; num_clusters];
            for &id in &identities {
                s[id] += 1;
            }
            s
        };
        let scores = raw_losses
            .into_iter()
            .map(|raw| ScoreBreakdown {
                similarity: vec![0.0; num_clusters],
                loss: raw.clone(),
                raw_loss: raw,
                combined: vec![0.0; num_clusters],
                chosen: 0,
            })
            .collect();
        RoundOutcome {
            identities,
            cluster_sizes: sizes,
            per_device_scores: scores,
            new_models: vec![ParamVector::zeros(1); num_clusters],
        }
    }

    #[test]
    fn single_member_loss_is_normalized_by_batch() {
        let outcome = outcome_with(vec![0], vec![vec![3.2, 9.9]], 2);
        let losses = per_cluster_train_loss(&outcome, 32).unwrap();
        assert!((losses[0].unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(losses[1], None);
    }

    #[test]
    fn member_losses_average() {
        let outcome = outcome_with(vec![0, 0], vec![vec![0.2 * 8.0, 0.0], vec![0.4 * 8.0, 0.0]], 2);
        let losses = per_cluster_train_loss(&outcome, 8).unwrap();
        assert!((losses[0].unwrap() - 0.3).abs() < 1e-12);
    }
}
