//! One-hidden-layer MLP (or logistic regression at `hidden_dim = 0`) with
//! hand-rolled backprop and mini-batch SGD.
//!
//! Parameters live flattened in a [`ParamVector`] with a fixed layout: layer-1
//! weights row-major, layer-1 bias, layer-2 weights, layer-2 bias. Aggregation
//! never needs to know the structure; only this module maps in and out of it.
//! Training takes and returns deltas (post-training minus pre-training, the
//! learning rate already folded in) so that adding a delta to parameters is a
//! descent step.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataShard;
use crate::numkit::ParamVector;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("expected input dim {expected}, shard has {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u8, num_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// 0 selects plain logistic regression.
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        assert!(input_dim >= 1, "input_dim must be positive");
        assert!(num_classes >= 2, "need at least two classes");
        Self {
            input_dim,
            hidden_dim,
            num_classes,
        }
    }

    pub fn param_count(&self) -> usize {
        if self.hidden_dim == 0 {
            self.input_dim * self.num_classes + self.num_classes
        } else {
            self.input_dim * self.hidden_dim
                + self.hidden_dim
                + self.hidden_dim * self.num_classes
                + self.num_classes
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub params: ParamVector,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SGDConfig {
    pub learning_rate: f64,
    /// Multiplicative per-round decay applied by the orchestrator.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl SGDConfig {
    pub fn validate(&self) {
        assert!(self.learning_rate > 0.0, "learning_rate must be positive");
        assert!(
            self.lr_decay > 0.0 && self.lr_decay <= 1.0,
            "lr_decay must lie in (0, 1]"
        );
        assert!(self.batch_size >= 1, "batch_size must be positive");
        assert!(self.local_epochs >= 1, "local_epochs must be positive");
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_accuracy: BTreeMap<u8, f64>,
    pub loss: f64,
}

/// Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero biases,
/// drawn in layout order from a ChaCha20 stream.
pub fn init_model(spec: ModelSpec, seed: u64) -> ModelState {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(spec.param_count());
    let layer = |fan_in: usize, fan_out: usize, params: &mut Vec<f64>, rng: &mut ChaCha20Rng| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            params.push(limit * (2.0 * rng.gen::<f64>() - 1.0));
        }
        params.extend(std::iter::repeat(0.0).take(fan_out));
    };
    if spec.hidden_dim == 0 {
        layer(spec.input_dim, spec.num_classes, &mut params, &mut rng);
    } else {
        layer(spec.input_dim, spec.hidden_dim, &mut params, &mut rng);
        layer(spec.hidden_dim, spec.num_classes, &mut params, &mut rng);
    }
    ModelState {
        spec,
        params: ParamVector::new(params),
    }
}

struct Layers<'a> {
    w1: ArrayView2<'a, f64>,
    b1: ArrayView1<'a, f64>,
    w2: Option<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)>,
}

fn layers<'a>(spec: &ModelSpec, params: &'a [f64]) -> Layers<'a> {
    assert_eq!(params.len(), spec.param_count(), "parameter layout mismatch");
    if spec.hidden_dim == 0 {
        let wn = spec.input_dim * spec.num_classes;
        Layers {
            w1: ArrayView2::from_shape((spec.num_classes, spec.input_dim), &params[..wn]).unwrap(),
            b1: ArrayView1::from(&params[wn..]),
            w2: None,
        }
    } else {
        let w1n = spec.input_dim * spec.hidden_dim;
        let b1e = w1n + spec.hidden_dim;
        let w2e = b1e + spec.hidden_dim * spec.num_classes;
        Layers {
            w1: ArrayView2::from_shape((spec.hidden_dim, spec.input_dim), &params[..w1n]).unwrap(),
            b1: ArrayView1::from(&params[w1n..b1e]),
            w2: Some((
                ArrayView2::from_shape((spec.num_classes, spec.hidden_dim), &params[b1e..w2e])
                    .unwrap(),
                ArrayView1::from(&params[w2e..]),
            )),
        }
    }
}

struct Forward {
    /// Pre-activation of the hidden layer; absent for logistic regression.
    z1: Option<Array2<f64>>,
    hidden: Option<Array2<f64>>,
    logits: Array2<f64>,
}

fn forward(spec: &ModelSpec, params: &[f64], x: ArrayView2<f64>) -> Forward {
    let l = layers(spec, params);
    match l.w2 {
        None => Forward {
            z1: None,
            hidden: None,
            logits: x.dot(&l.w1.t()) + &l.b1,
        },
        Some((w2, b2)) => {
            let z1 = x.dot(&l.w1.t()) + &l.b1;
            let hidden = z1.mapv(|v| v.max(0.0));
            let logits = hidden.dot(&w2.t()) + &b2;
            Forward {
                z1: Some(z1),
                hidden: Some(hidden),
                logits,
            }
        }
    }
}

/// Mean cross-entropy of logits against labels, and (softmax - onehot)/n if
/// requested: everything downstream of the logits in one stable pass.
fn ce_loss_and_dlogits(
    logits: &Array2<f64>,
    labels: &[u8],
    want_grad: bool,
) -> (f64, Option<Array2<f64>>) {
    let n = labels.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut dlogits = want_grad.then(|| Array2::zeros(logits.raw_dim()));
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += lse - row[labels[i] as usize];
        if let Some(d) = dlogits.as_mut() {
            for (j, &v) in row.iter().enumerate() {
                let p = (v - lse).exp();
                let onehot = f64::from(j == labels[i] as usize);
                d[[i, j]] = (p - onehot) * inv_n;
            }
        }
    }
    (loss * inv_n, dlogits)
}

fn mean_loss(spec: &ModelSpec, params: &[f64], x: ArrayView2<f64>, labels: &[u8]) -> f64 {
    ce_loss_and_dlogits(&forward(spec, params, x).logits, labels, false).0
}

/// Mean cross-entropy and its gradient in flat layout.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    x: ArrayView2<f64>,
    labels: &[u8],
) -> (f64, ParamVector) {
    let fwd = forward(spec, params.as_slice(), x);
    let (loss, dlogits) = ce_loss_and_dlogits(&fwd.logits, labels, true);
    let g = dlogits.expect("gradient requested");
    let mut grad = Vec::with_capacity(spec.param_count());
    match (fwd.z1, fwd.hidden) {
        (None, None) => {
            let dw = g.t().dot(&x);
            grad.extend(dw.iter());
            grad.extend(g.sum_axis(Axis(0)).iter());
        }
        (Some(z1), Some(hidden)) => {
            let l = layers(spec, params.as_slice());
            let (w2, _) = l.w2.expect("hidden model has a second layer");
            let dw2 = g.t().dot(&hidden);
            let db2 = g.sum_axis(Axis(0));
            let mut dz1 = g.dot(&w2);
            dz1.zip_mut_with(&z1, |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            let dw1 = dz1.t().dot(&x);
            let db1 = dz1.sum_axis(Axis(0));
            grad.extend(dw1.iter());
            grad.extend(db1.iter());
            grad.extend(dw2.iter());
            grad.extend(db2.iter());
        }
        _ => unreachable!("hidden state is all-or-nothing"),
    }
    (loss, ParamVector::new(grad))
}

fn check_shard(spec: &ModelSpec, shard: &DataShard) -> Result<(), ModelError> {
    if shard.input_dim() != spec.input_dim {
        return Err(ModelError::ShapeMismatch {
            expected: spec.input_dim,
            found: shard.input_dim(),
        });
    }
    if let Some(&label) = shard.labels().iter().find(|&&l| (l as usize) >= spec.num_classes) {
        return Err(ModelError::LabelOutOfRange {
            label,
            num_classes: spec.num_classes,
        });
    }
    Ok(())
}

/// Mini-batch SGD over a deterministic shuffle; returns the model delta
/// w_after - w_before without mutating the input state.
pub fn local_train(
    m: &ModelState,
    shard: &DataShard,
    cfg: &SGDConfig,
    round_lr: f64,
    rng_seed: u64,
) -> Result<ParamVector, ModelError> {
    check_shard(&m.spec, shard)?;
    assert!(!shard.is_empty(), "cannot train on an empty shard");
    cfg.validate();
    let mut params = m.params.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = shard.features().select(Axis(0), batch);
            batch_labels.clear();
            batch_labels.extend(batch.iter().map(|&i| shard.labels()[i]));
            let (_, grad) = loss_and_grad(&m.spec, &params, x.view(), &batch_labels);
            params.add_scaled(-round_lr, &grad);
        }
    }
    Ok(params.sub(&m.params))
}

/// Number of gradient evaluations one `local_train` call performs.
pub fn train_steps(shard_len: usize, cfg: &SGDConfig) -> u64 {
    (shard_len.div_ceil(cfg.batch_size) * cfg.local_epochs) as u64
}

/// Accuracy (argmax, ties to the lowest class), per-class accuracy over the
/// classes present, and mean cross-entropy.
pub fn evaluate(m: &ModelState, test: &DataShard) -> Result<EvalReport, ModelError> {
    check_shard(&m.spec, test)?;
    assert!(!test.is_empty(), "cannot evaluate on an empty shard");
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let mut per_class: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    let n = test.len();
    let chunk = 2048;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x = test.features().select(Axis(0), &idx);
        let labels = &test.labels()[start..end];
        let fwd = forward(&m.spec, m.params.as_slice(), x.view());
        let (loss, _) = ce_loss_and_dlogits(&fwd.logits, labels, false);
        loss_sum += loss * labels.len() as f64;
        for (row, &label) in fwd.logits.rows().into_iter().zip(labels) {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            let entry = per_class.entry(label).or_insert((0, 0));
            entry.1 += 1;
            if best == label as usize {
                entry.0 += 1;
                correct += 1;
            }
        }
        start = end;
    }
    Ok(EvalReport {
        accuracy: correct as f64 / n as f64,
        per_class_accuracy: per_class
            .into_iter()
            .map(|(c, (ok, total))| (c, ok as f64 / total as f64))
            .collect(),
        loss: loss_sum / n as f64,
    })
}

/// Predicted class per row (argmax, ties to the lowest class).
pub fn predict(m: &ModelState, test: &DataShard) -> Result<Vec<u8>, ModelError> {
    check_shard(&m.spec, test)?;
    let n = test.len();
    let mut out = Vec::with_capacity(n);
    let chunk = 2048;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x = test.features().select(Axis(0), &idx);
        let fwd = forward(&m.spec, m.params.as_slice(), x.view());
        for row in fwd.logits.rows() {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(best as u8);
        }
        start = end;
    }
    Ok(out)
}

/// Central finite differences on every coordinate against the analytic
/// gradient; returns the max relative error |a-d| / max(1e-8, |a|+|d|).
pub fn numeric_gradient_check(m: &ModelState, shard: &DataShard, epsilon: f64) -> f64 {
    let (_, analytic) = loss_and_grad(&m.spec, &m.params, shard.features(), shard.labels());
    gradient_check_against(m, shard, epsilon, &analytic)
}

/// The comparison half of the check, callable with a corrupted gradient to
/// prove the check itself has teeth.
pub fn gradient_check_against(
    m: &ModelState,
    shard: &DataShard,
    epsilon: f64,
    candidate: &ParamVector,
) -> f64 {
    assert!(shard.len() <= 8, "gradient check is meant for tiny shards");
    assert!(
        (1e-7..=1e-4).contains(&epsilon),
        "epsilon outside the trustworthy range"
    );
    let mut params = m.params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params.as_slice()[i];
        params.as_mut_slice()[i] = orig + epsilon;
        let up = mean_loss(&m.spec, params.as_slice(), shard.features(), shard.labels());
        params.as_mut_slice()[i] = orig - epsilon;
        let down = mean_loss(&m.spec, params.as_slice(), shard.features(), shard.labels());
        params.as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let analytic = candidate.as_slice()[i];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
