//! Attack behaviors: label poisoning before training and upload corruption
//! after it.
//!
//! Data poisoning (label flips) happens once when shards are dealt; upload
//! corruption transforms the participant's delta each round. Both are pure
//! and deterministic per (seed, round), so an attacked run replays exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataShard;
use crate::numkit::ParamVector;
use crate::seeds;

/// Inverted coordinates are capped at this magnitude to keep norms finite.
pub const INVERT_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryKind {
    /// Trains on `src` images relabeled as `dst`.
    LabelFlip { src: u8, dst: u8 },
    /// Multiplies the upload by a constant.
    Rescale { factor: f64 },
    /// Keeps magnitudes, flips each coordinate's sign on a fair coin.
    SignRandomize,
    /// Replaces each selected coordinate by its capped reciprocal.
    ValueInvert { prob: f64 },
    /// Never trains; uploads iid uniform(-1,1) noise.
    FreeRider,
}

impl AdversaryKind {
    pub fn validate(&self) {
        match *self {
            AdversaryKind::LabelFlip { src, dst } => {
                assert_ne!(src, dst, "label flip must change the label")
            }
            AdversaryKind::Rescale { factor } => {
                assert!(factor != 0.0, "rescale factor must be nonzero")
            }
            AdversaryKind::ValueInvert { prob } => {
                assert!(prob > 0.0 && prob <= 1.0, "invert prob must lie in (0,1]")
            }
            AdversaryKind::SignRandomize | AdversaryKind::FreeRider => {}
        }
    }

    /// Free-riders skip local training entirely.
    pub fn trains(&self) -> bool {
        !matches!(self, AdversaryKind::FreeRider)
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdversaryKind::LabelFlip { .. } => "label_flip",
            AdversaryKind::Rescale { .. } => "rescale",
            AdversaryKind::SignRandomize => "sign_randomize",
            AdversaryKind::ValueInvert { .. } => "value_invert",
            AdversaryKind::FreeRider => "free_rider",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarySpec {
    #[serde(flatten)]
    pub kind: AdversaryKind,
    pub seed: u64,
}

/// Relabels every `src` example as `dst`; features and other labels untouched.
pub fn poison_labels(shard: &DataShard, src: u8, dst: u8) -> DataShard {
    let labels = shard
        .labels()
        .iter()
        .map(|&l| if l == src { dst } else { l })
        .collect();
    shard
        .with_labels(labels)
        .expect("label count is unchanged")
}

/// Applies the upload-time corruption. Label flipping already acted on the
/// data, so it passes the delta through unchanged.
pub fn corrupt_delta(delta: &ParamVector, spec: &AdversarySpec, round: u64) -> ParamVector {
    let mut rng = seeds::stream(spec.seed, seeds::ADVERSARY, round, 0);
    match spec.kind {
        AdversaryKind::LabelFlip { .. } => delta.clone(),
        AdversaryKind::Rescale { factor } => delta.scaled(factor),
        AdversaryKind::SignRandomize => ParamVector::new(
            delta
                .as_slice()
                .iter()
                .map(|&v| if rng.gen::<bool>() { v.abs() } else { -v.abs() })
                .collect(),
        ),
        AdversaryKind::ValueInvert { prob } => ParamVector::new(
            delta
                .as_slice()
                .iter()
                .map(|&v| {
                    if rng.gen::<f64>() < prob && v != 0.0 {
                        (1.0 / v).clamp(-INVERT_CAP, INVERT_CAP)
                    } else {
                        v
                    }
                })
                .collect(),
        ),
        AdversaryKind::FreeRider => ParamVector::new(
            (0..delta.len())
                .map(|_| 2.0 * rng.gen::<f64>() - 1.0)
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn spec(kind: AdversaryKind) -> AdversarySpec {
        AdversarySpec { kind, seed: 77 }
    }

    fn pv(vals: &[f64]) -> ParamVector {
        ParamVector::new(vals.to_vec())
    }

    #[test]
    fn poison_flips_only_the_source_class() {
        let shard = DataShard::new(
            Array2::from_shape_vec((4, 1), vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            vec![1, 1, 7, 3],
        )
        .unwrap();
        let poisoned = poison_labels(&shard, 1, 7);
        assert_eq!(poisoned.labels(), &[7, 7, 7, 3]);
        assert_eq!(poisoned.features(), shard.features());
        // No source labels present: identity.
        let untouched = poison_labels(&shard, 5, 0);
        assert_eq!(untouched.labels(), shard.labels());
    }

    #[test]
    fn rescale_multiplies_exactly() {
        let out = corrupt_delta(
            &pv(&[0.01, -0.02]),
            &spec(AdversaryKind::Rescale { factor: -100.0 }),
            0,
        );
        assert_eq!(out.as_slice(), &[-1.0, 2.0]);
    }

    #[test]
    fn sign_randomize_preserves_magnitudes() {
        let delta = pv(&[0.5, -1.5, 2.0, -0.25, 3.0]);
        let out = corrupt_delta(&delta, &spec(AdversaryKind::SignRandomize), 3);
        for (a, b) in delta.as_slice().iter().zip(out.as_slice()) {
            assert_eq!(a.abs(), b.abs());
        }
        assert!((delta.l2_norm() - out.l2_norm()).abs() < 1e-15);
        // Long input: both signs must actually occur.
        let long = ParamVector::new(vec![1.0; 1000]);
        let out = corrupt_delta(&long, &spec(AdversaryKind::SignRandomize), 0);
        let pos = out.as_slice().iter().filter(|&&v| v > 0.0).count();
        assert!(pos > 400 && pos < 600, "suspicious coin: {pos}/1000");
    }

    #[test]
    fn value_invert_takes_capped_reciprocals() {
        let delta = pv(&[0.5, -0.002, 0.0, 1e-9]);
        let out = corrupt_delta(
            &delta,
            &spec(AdversaryKind::ValueInvert { prob: 1.0 }),
            1,
        );
        assert_eq!(out.as_slice()[0], 2.0);
        assert_eq!(out.as_slice()[1], -500.0);
        assert_eq!(out.as_slice()[2], 0.0);
        assert_eq!(out.as_slice()[3], INVERT_CAP);
    }

    #[test]
    fn value_invert_prob_selects_a_fraction() {
        let delta = ParamVector::new(vec![0.5; 1000]);
        let out = corrupt_delta(
            &delta,
            &spec(AdversaryKind::ValueInvert { prob: 0.5 }),
            2,
        );
        let flipped = out.as_slice().iter().filter(|&&v| v == 2.0).count();
        let kept = out.as_slice().iter().filter(|&&v| v == 0.5).count();
        assert_eq!(flipped + kept, 1000);
        assert!(flipped > 400 && flipped < 600, "{flipped}");
    }

    #[test]
    fn free_rider_ignores_the_true_delta() {
        let s = spec(AdversaryKind::FreeRider);
        let a = corrupt_delta(&pv(&[1.0, 2.0, 3.0]), &s, 5);
        let b = corrupt_delta(&pv(&[-9.0, 0.0, 4.0]), &s, 5);
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn free_rider_noise_is_centered() {
        let s = spec(AdversaryKind::FreeRider);
        let noise = corrupt_delta(&ParamVector::zeros(10_000), &s, 0);
        let mean = noise.as_slice().iter().sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 0.03, "{mean}");
    }

    #[test]
    fn corruption_is_deterministic_per_seed_and_round() {
        let delta = pv(&[0.3, -0.6, 0.9]);
        for kind in [
            AdversaryKind::SignRandomize,
            AdversaryKind::ValueInvert { prob: 0.5 },
            AdversaryKind::FreeRider,
        ] {
            let s = spec(kind);
            assert_eq!(corrupt_delta(&delta, &s, 4), corrupt_delta(&delta, &s, 4));
            assert_ne!(corrupt_delta(&delta, &s, 4), corrupt_delta(&delta, &s, 5));
            let other = AdversarySpec { kind, seed: 78 };
            assert_ne!(
                corrupt_delta(&delta, &s, 4),
                corrupt_delta(&delta, &other, 4)
            );
        }
    }

    #[test]
    fn label_flip_leaves_uploads_alone() {
        let delta = pv(&[0.3, -0.6]);
        let s = spec(AdversaryKind::LabelFlip { src: 1, dst: 7 });
        assert_eq!(corrupt_delta(&delta, &s, 0), delta);
    }
}
