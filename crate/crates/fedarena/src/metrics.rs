//! Outcome measures and the report schema.
//!
//! Fairness is the Pearson correlation, in percent, between what each honest
//! participant would have earned training alone and what the collaborative
//! run actually handed them. Targeted-attack exposure is measured on the
//! source class only: how often it is predicted as the attacker's target,
//! and how often it is still classified correctly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::DataShard;
use crate::model::{predict, EvalReport, ModelError, ModelState};
use crate::numkit::{pearson, NumError};
use crate::orchestrator::RoundRecord;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Pearson correlation between standalone and collaborative accuracies,
/// scaled to percent. `DegenerateVariance` (all standalone accuracies tied,
/// or all rewards tied) means the measure is undefined.
pub fn fairness(standalone: &[f64], rewards: &[f64]) -> Result<f64, NumError> {
    Ok(pearson(standalone, rewards)? * 100.0)
}

/// Fraction of test examples with true label `src` that the model predicts
/// as `dst`.
pub fn attack_success_rate(
    m: &ModelState,
    test: &DataShard,
    src: u8,
    dst: u8,
) -> Result<f64, ModelError> {
    let (hit_dst, _, total) = src_buckets(m, test, src, dst)?;
    Ok(hit_dst as f64 / total as f64)
}

/// Accuracy restricted to test examples with true label `src`.
pub fn target_class_accuracy(
    m: &ModelState,
    test: &DataShard,
    src: u8,
) -> Result<f64, ModelError> {
    let (_, hit_src, total) = src_buckets(m, test, src, src)?;
    Ok(hit_src as f64 / total as f64)
}

fn src_buckets(
    m: &ModelState,
    test: &DataShard,
    src: u8,
    dst: u8,
) -> Result<(usize, usize, usize), ModelError> {
    let preds = predict(m, test)?;
    let mut hit_dst = 0usize;
    let mut hit_src = 0usize;
    let mut total = 0usize;
    for (&p, &label) in preds.iter().zip(test.labels()) {
        if label != src {
            continue;
        }
        total += 1;
        if p == dst {
            hit_dst += 1;
        }
        if p == src {
            hit_src += 1;
        }
    }
    assert!(total > 0, "test set holds no examples of class {src}");
    Ok((hit_dst, hit_src, total))
}

/// Per-participant slice of the final report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticipantOutcome {
    /// Adversary kind name; honest participants carry `None`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<String>,
    pub shard_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed_round: Option<usize>,
    /// Training alone on the own shard, same budget and schedule.
    pub standalone: EvalReport,
    /// The model actually held after the collaborative run, full test set.
    pub federated: EvalReport,
    /// Accuracy entering the fairness comparison. Equals
    /// `federated.accuracy` except under global-model rules, where one extra
    /// local epoch is applied first so identical copies can differentiate.
    pub reward_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// Honest participants only; `None` when undefined.
    pub fairness: Option<f64>,
    /// Best final accuracy over honest participants.
    pub max_accuracy: f64,
    /// Worst exposure over honest participants; only under label flipping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_success_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class_accuracy: Option<f64>,
    /// Participants pruned by the server, in removal order.
    pub removed: Vec<usize>,
    /// Total gradient evaluations across the collaborative run.
    pub grad_evaluations: u64,
    pub per_participant: BTreeMap<usize, ParticipantOutcome>,
    pub rounds: Vec<RoundRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelSpec};
    use crate::numkit::ParamVector;
    use ndarray::Array2;

    fn biased_model(num_classes: usize, input_dim: usize, favored: usize) -> ModelState {
        // Logistic regression with zero weights and one large bias always
        // argmaxes to the favored class.
        let spec = ModelSpec::new(input_dim, 0, num_classes);
        let mut params = vec![0.0; spec.param_count()];
        params[input_dim * num_classes + favored] = 5.0;
        ModelState {
            spec,
            params: ParamVector::new(params),
        }
    }

    fn shard_with_labels(labels: Vec<u8>, dim: usize) -> DataShard {
        let n = labels.len();
        let features: Vec<f64> = (0..n * dim).map(|i| (i % 7) as f64 * 0.1 - 0.3).collect();
        DataShard::new(Array2::from_shape_vec((n, dim), features).unwrap(), labels).unwrap()
    }

    #[test]
    fn identical_vectors_are_perfectly_fair() {
        let x = [0.61, 0.72, 0.83, 0.79];
        assert!((fairness(&x, &x).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn reversed_rewards_are_perfectly_unfair() {
        let x = [0.61, 0.72, 0.83, 0.79];
        let y: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        assert!((fairness(&x, &y).unwrap() + 100.0).abs() < 1e-9);
    }

    #[test]
    fn fairness_ignores_constant_shifts_and_positive_scales() {
        let x = [0.50, 0.58, 0.66, 0.71, 0.62];
        let y = [0.40, 0.55, 0.60, 0.72, 0.58];
        let base = fairness(&x, &y).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.17).collect();
        let scaled: Vec<f64> = y.iter().map(|v| 3.0 * v - 1.0).collect();
        assert!((fairness(&x, &shifted).unwrap() - base).abs() < 1e-9);
        assert!((fairness(&x, &scaled).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn tied_standalone_accuracies_are_undefined() {
        let x = [0.7, 0.7, 0.7];
        let y = [0.1, 0.5, 0.9];
        assert_eq!(fairness(&x, &y).unwrap_err(), NumError::DegenerateVariance);
    }

    #[test]
    fn always_dst_model_scores_full_attack_success() {
        let m = biased_model(3, 4, 2);
        let shard = shard_with_labels(vec![0, 1, 1, 2, 1, 0], 4);
        assert_eq!(attack_success_rate(&m, &shard, 1, 2).unwrap(), 1.0);
        assert_eq!(target_class_accuracy(&m, &shard, 1).unwrap(), 0.0);
    }

    #[test]
    fn never_dst_model_scores_zero_attack_success() {
        let m = biased_model(3, 4, 0);
        let shard = shard_with_labels(vec![0, 1, 1, 2, 1, 0], 4);
        assert_eq!(attack_success_rate(&m, &shard, 1, 2).unwrap(), 0.0);
        assert_eq!(target_class_accuracy(&m, &shard, 1).unwrap(), 0.0);
    }

    #[test]
    fn src_predictions_partition_exactly() {
        // 16 source examples: all three fractions are exact dyadics, so the
        // partition identity holds with no tolerance at all.
        let spec = ModelSpec::new(6, 0, 4);
        let m = init_model(spec, 99);
        let mut labels = vec![1u8; 16];
        labels.extend([0, 2, 3, 0, 2, 3]);
        let n = labels.len();
        let features: Vec<f64> = (0..n * 6)
            .map(|i| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        let shard =
            DataShard::new(Array2::from_shape_vec((n, 6), features).unwrap(), labels).unwrap();

        let asr = attack_success_rate(&m, &shard, 1, 3).unwrap();
        let tca = target_class_accuracy(&m, &shard, 1).unwrap();
        let preds = predict(&m, &shard).unwrap();
        let mut neither_count = 0usize;
        let mut total = 0usize;
        for (&p, &l) in preds.iter().zip(shard.labels()) {
            if l == 1 {
                total += 1;
                if p != 3 && p != 1 {
                    neither_count += 1;
                }
            }
        }
        assert_eq!(total, 16);
        let neither = neither_count as f64 / total as f64;
        assert_eq!(asr + tca + neither, 1.0);
    }

    #[test]
    fn mismatched_shape_is_reported() {
        let m = biased_model(3, 4, 0);
        let shard = shard_with_labels(vec![0, 1], 5);
        assert!(matches!(
            attack_success_rate(&m, &shard, 1, 2),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }
}
