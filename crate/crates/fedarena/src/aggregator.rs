//! Server-side aggregation rules.
//!
//! The reputation engine weighs uploads by an EMA of their cosine similarity
//! to the aggregate, prunes participants whose weight collapses, and rations
//! the aggregate back out by reputation-proportional coordinate quotas. Next
//! to it: weighted averaging, Multi-Krum, FoolsGold, sign voting, coordinate
//! median, and loss-reweighted averaging as baselines.
//!
//! Participants are identified by `usize` ids; every reduction iterates maps
//! in ascending id order (BTreeMap), so results are bit-reproducible.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::numkit::{
    coordinate_median, cos_sim, largest_k, mask_apply, CoordinateMask, NumError, ParamVector,
    NORM_EPSILON,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggError {
    #[error("no active participants to aggregate")]
    EmptyActiveSet,
    #[error("reputation pruning removed every participant; threshold misconfigured")]
    AllRemoved,
    #[error("{n} participants cannot support {f} byzantine with 2 spare neighbors")]
    TooFewParticipants { n: usize, f: usize },
}

/// Reputation bookkeeping for the pruning aggregator.
///
/// `raw` holds the EMA values (starting at 0); `weights` holds their
/// normalization over the active set, except in round 1 where weights are
/// uniform because every EMA is still 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ReputationState {
    raw: BTreeMap<usize, f64>,
    weights: BTreeMap<usize, f64>,
    active: BTreeSet<usize>,
    alpha: f64,
    threshold_fraction: f64,
}

impl ReputationState {
    pub fn new(ids: impl IntoIterator<Item = usize>, alpha: f64, threshold_fraction: f64) -> Self {
        assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0,1]");
        assert!(
            (0.0..1.0).contains(&threshold_fraction),
            "threshold fraction must lie in [0,1)"
        );
        let active: BTreeSet<usize> = ids.into_iter().collect();
        assert!(!active.is_empty(), "need at least one participant");
        let uniform = 1.0 / active.len() as f64;
        Self {
            raw: active.iter().map(|&i| (i, 0.0)).collect(),
            weights: active.iter().map(|&i| (i, uniform)).collect(),
            active,
            alpha,
            threshold_fraction,
        }
    }

    pub fn active(&self) -> &BTreeSet<usize> {
        &self.active
    }

    pub fn weights(&self) -> &BTreeMap<usize, f64> {
        &self.weights
    }

    pub fn raw(&self) -> &BTreeMap<usize, f64> {
        &self.raw
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn weight(&self, id: usize) -> f64 {
        self.weights.get(&id).copied().unwrap_or(0.0)
    }
}

/// Reputation-weighted sum of the active uploads.
pub fn rffl_aggregate(
    deltas: &BTreeMap<usize, ParamVector>,
    state: &ReputationState,
) -> Result<ParamVector, AggError> {
    let mut iter = state.active.iter().filter_map(|i| deltas.get(i));
    let first = iter.next().ok_or(AggError::EmptyActiveSet)?;
    let mut agg = ParamVector::zeros(first.len());
    for (&id, delta) in deltas {
        assert!(state.active.contains(&id), "upload from inactive id {id}");
        agg.add_scaled(state.weight(id), delta);
    }
    Ok(agg)
}

/// One EMA step plus pruning.
///
/// Every active participant's cosine against the aggregate feeds the EMA
/// (degenerate zero uploads count as similarity 0). Raw values clip at 0,
/// normalize into weights, and anyone below `threshold_fraction` of the
/// uniform share is expelled for good, with weights renormalized over the
/// survivors.
pub fn rffl_update_reputation(
    mut state: ReputationState,
    deltas: &BTreeMap<usize, ParamVector>,
    agg: &ParamVector,
) -> Result<(ReputationState, BTreeSet<usize>), AggError> {
    assert!(agg.l2_norm() >= NORM_EPSILON, "aggregate has no direction");
    for id in &state.active {
        let delta = deltas
            .get(id)
            .unwrap_or_else(|| panic!("active participant {id} uploaded nothing"));
        let c = match cos_sim(agg, delta) {
            Ok(c) => c,
            Err(NumError::ZeroNorm) => 0.0,
            Err(e) => unreachable!("cosine only fails on zero norms: {e}"),
        };
        let raw = state.raw.get_mut(id).expect("raw tracks active");
        *raw = (state.alpha * *raw + (1.0 - state.alpha) * c).max(0.0);
    }

    let total: f64 = state.active.iter().map(|i| state.raw[i]).sum();
    if total <= 0.0 {
        return Err(AggError::AllRemoved);
    }
    let cutoff = state.threshold_fraction / state.active.len() as f64;
    let mut removed = BTreeSet::new();
    for &id in &state.active {
        if state.raw[&id] / total < cutoff {
            removed.insert(id);
        }
    }
    if removed.len() == state.active.len() {
        return Err(AggError::AllRemoved);
    }
    for id in &removed {
        state.active.remove(id);
        state.raw.remove(id);
        state.weights.remove(id);
    }
    let survivor_total: f64 = state.active.iter().map(|i| state.raw[i]).sum();
    state.weights = state
        .active
        .iter()
        .map(|&i| (i, state.raw[&i] / survivor_total))
        .collect();
    Ok((state, removed))
}

/// What one participant gets back from a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub quota: usize,
    pub mask: CoordinateMask,
    /// Masked aggregate minus the participant's own (weighted) contribution
    /// on those same coordinates.
    pub update: ParamVector,
}

/// Quota-rationed download: participant i receives the largest-magnitude
/// floor((w_i / w_max) * D) coordinates of the aggregate, minus its own
/// weighted upload on exactly those coordinates.
///
/// The floor gets a 1e-9 slack so weight ratios that are exact in real
/// arithmetic cannot lose a coordinate to f64 representation error. The top
/// participant's ratio is 1, so its mask always covers all of the aggregate.
pub fn rffl_allocate(
    agg: &ParamVector,
    deltas: &BTreeMap<usize, ParamVector>,
    state_prev: &ReputationState,
    state_new: &ReputationState,
) -> BTreeMap<usize, Allocation> {
    let d = agg.len();
    let max_weight = state_new
        .active
        .iter()
        .map(|i| state_new.weights[i])
        .fold(0.0f64, f64::max);
    assert!(max_weight > 0.0, "allocation needs a positive top weight");
    let mut out = BTreeMap::new();
    for &id in &state_new.active {
        let ratio = state_new.weights[&id] / max_weight;
        let quota = ((ratio * d as f64) + 1e-9).floor().min(d as f64) as usize;
        let mask = largest_k(agg, quota);
        let mut update = mask_apply(agg, &mask);
        if let Some(delta) = deltas.get(&id) {
            let own = mask_apply(delta, &mask);
            update.add_scaled(-state_prev.weight(id), &own);
        }
        out.insert(
            id,
            Allocation {
                quota,
                mask,
                update,
            },
        );
    }
    out
}

/// Plain federated averaging: weights proportional to shard sizes.
pub fn fedavg(
    deltas: &BTreeMap<usize, ParamVector>,
    sizes: &BTreeMap<usize, usize>,
) -> Result<ParamVector, AggError> {
    let first = deltas.values().next().ok_or(AggError::EmptyActiveSet)?;
    let total: usize = deltas.keys().map(|i| sizes[i]).sum();
    assert!(total > 0, "shard sizes must be positive");
    let mut agg = ParamVector::zeros(first.len());
    for (id, delta) in deltas {
        agg.add_scaled(sizes[id] as f64 / total as f64, delta);
    }
    Ok(agg)
}

/// Multi-Krum: score each upload by the summed squared distances to its
/// n-f-2 nearest peers, then average the m lowest-scoring uploads.
/// Returns the average and the selected indices (ascending).
pub fn multikrum_detailed(
    deltas: &[ParamVector],
    f: usize,
    m: usize,
) -> Result<(ParamVector, Vec<usize>), AggError> {
    let n = deltas.len();
    if n == 0 {
        return Err(AggError::EmptyActiveSet);
    }
    assert!(m >= 1 && m <= n, "must select between 1 and n uploads");
    let neighbors = n
        .checked_sub(f + 2)
        .filter(|&k| k >= 1)
        .ok_or(AggError::TooFewParticipants { n, f })?;

    let mut scores = Vec::with_capacity(n);
    for (i, a) in deltas.iter().enumerate() {
        let mut dists: Vec<f64> = deltas
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, b)| {
                let diff = a.sub(b);
                diff.dot(&diff)
            })
            .collect();
        dists.sort_unstable_by(f64::total_cmp);
        scores.push((dists[..neighbors].iter().sum::<f64>(), i));
    }
    scores.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut selected: Vec<usize> = scores[..m].iter().map(|&(_, i)| i).collect();
    selected.sort_unstable();

    let mut agg = ParamVector::zeros(deltas[0].len());
    for &i in &selected {
        agg.add_scaled(1.0 / m as f64, &deltas[i]);
    }
    Ok((agg, selected))
}

pub fn multikrum(deltas: &[ParamVector], f: usize, m: usize) -> Result<ParamVector, AggError> {
    multikrum_detailed(deltas, f, m).map(|(agg, _)| agg)
}

/// FoolsGold weights from cumulative upload histories: colluding uploads
/// (persistently similar histories) get their weight driven toward zero.
/// Returns the per-participant weights in [0,1], keyed like `history`.
pub fn foolsgold_weights(
    history: &BTreeMap<usize, ParamVector>,
    confidence: f64,
) -> BTreeMap<usize, f64> {
    let ids: Vec<usize> = history.keys().copied().collect();
    let n = ids.len();
    if n == 1 {
        return BTreeMap::from([(ids[0], 1.0)]);
    }
    // Pairwise cosine of histories; degenerate (zero) histories count as 0.
    let mut cs = vec![vec![0.0f64; n]; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let c = cos_sim(&history[&ids[a]], &history[&ids[b]]).unwrap_or(0.0);
            cs[a][b] = c;
            cs[b][a] = c;
        }
    }
    let row_max = |cs: &Vec<Vec<f64>>, i: usize| -> f64 {
        (0..n)
            .filter(|&j| j != i)
            .map(|j| cs[i][j])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let v: Vec<f64> = (0..n).map(|i| row_max(&cs, i)).collect();
    // Pardoning: an honest row's similarity to a Sybil is scaled down by the
    // ratio of their peak similarities.
    for i in 0..n {
        for j in 0..n {
            if i != j && v[j] > v[i] && v[j] > 0.0 {
                cs[i][j] *= v[i].max(0.0) / v[j];
            }
        }
    }
    let mut wv: Vec<f64> = (0..n)
        .map(|i| (1.0 - row_max(&cs, i)).clamp(0.0, 1.0))
        .collect();
    let top = wv.iter().copied().fold(0.0f64, f64::max);
    if top <= 0.0 {
        // Everyone looked like a Sybil; fall back to uniform trust.
        return ids.iter().map(|&id| (id, 1.0)).collect();
    }
    for w in &mut wv {
        *w /= top;
        if *w >= 1.0 {
            *w = 0.99;
        }
        // Logit sharpening, clipped back into [0,1].
        *w = (confidence * ((*w / (1.0 - *w)).ln() + 0.5)).clamp(0.0, 1.0);
    }
    ids.into_iter().zip(wv).collect()
}

/// FoolsGold aggregation: weight the current deltas by the history scores.
pub fn foolsgold(
    history: &BTreeMap<usize, ParamVector>,
    deltas: &BTreeMap<usize, ParamVector>,
    confidence: f64,
) -> Result<ParamVector, AggError> {
    let first = deltas.values().next().ok_or(AggError::EmptyActiveSet)?;
    let weights = foolsgold_weights(history, confidence);
    let total: f64 = deltas.keys().map(|i| weights[i]).sum();
    let mut agg = ParamVector::zeros(first.len());
    if total <= 0.0 {
        for delta in deltas.values() {
            agg.add_scaled(1.0 / deltas.len() as f64, delta);
        }
    } else {
        for (id, delta) in deltas {
            agg.add_scaled(weights[id] / total, delta);
        }
    }
    Ok(agg)
}

/// Per-coordinate sign majority vote, scaled by the server learning rate.
pub fn signsgd(deltas: &[ParamVector], server_lr: f64) -> Result<ParamVector, AggError> {
    let first = deltas.first().ok_or(AggError::EmptyActiveSet)?;
    let mut out = ParamVector::zeros(first.len());
    for k in 0..first.len() {
        let votes: f64 = deltas.iter().map(|d| d.as_slice()[k].signum_or_zero()).sum();
        out.as_mut_slice()[k] = server_lr * votes.signum_or_zero();
    }
    Ok(out)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    /// f64::signum maps 0.0 to 1.0; the vote needs a true zero.
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

/// Coordinate-wise median of the uploads.
pub fn median_agg(deltas: &[ParamVector]) -> Result<ParamVector, AggError> {
    coordinate_median(deltas).map_err(|_| AggError::EmptyActiveSet)
}

/// Loss-reweighted averaging: participants with higher local loss pull the
/// aggregate harder. `lipschitz` is the curvature estimate (1/lr in practice).
pub fn qffl(
    deltas: &BTreeMap<usize, ParamVector>,
    losses: &BTreeMap<usize, f64>,
    q: f64,
    lipschitz: f64,
) -> Result<ParamVector, AggError> {
    let first = deltas.values().next().ok_or(AggError::EmptyActiveSet)?;
    assert!(q >= 0.0, "q must be nonnegative");
    assert!(lipschitz > 0.0, "lipschitz estimate must be positive");
    let mut numer = ParamVector::zeros(first.len());
    let mut denom = 0.0;
    for (id, delta) in deltas {
        let loss = losses[id].max(1e-10);
        let lq = loss.powf(q);
        numer.add_scaled(lipschitz * lq, delta);
        denom += q * loss.powf(q - 1.0) * delta.dot(delta) * lipschitz * lipschitz
            + lq * lipschitz;
    }
    Ok(numer.scaled(1.0 / denom))
}

/// Equalizes upload magnitudes to the round's median norm, keeping their
/// directions. Zero uploads pass through. This caps how hard any single
/// upload can pull a weighted aggregate, which matters most in round 1 when
/// reputation weights are still uniform.
pub fn rescale_to_median_norm(
    deltas: &BTreeMap<usize, ParamVector>,
) -> BTreeMap<usize, ParamVector> {
    let mut norms: Vec<f64> = deltas.values().map(ParamVector::l2_norm).collect();
    norms.sort_unstable_by(f64::total_cmp);
    if norms.is_empty() {
        return BTreeMap::new();
    }
    let n = norms.len();
    let median = if n % 2 == 1 {
        norms[n / 2]
    } else {
        0.5 * (norms[n / 2 - 1] + norms[n / 2])
    };
    deltas
        .iter()
        .map(|(&id, delta)| {
            let norm = delta.l2_norm();
            if norm < NORM_EPSILON {
                (id, delta.clone())
            } else {
                (id, delta.scaled(median / norm))
            }
        })
        .collect()
}
