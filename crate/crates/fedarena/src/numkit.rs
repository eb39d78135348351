//! Dense vector kernels shared by the model, aggregation, and metrics code.
//!
//! Everything in here is deterministic: reductions run in index order and all
//! selection ties break toward the lowest index, so repeated runs produce
//! bit-identical results.

use std::collections::BTreeSet;

use thiserror::Error;

/// Norms below this are treated as zero when a direction is required.
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NumError {
    /// An operation needed a direction but got a (near-)zero vector.
    #[error("vector norm below {NORM_EPSILON:e}, direction undefined")]
    ZeroNorm,
    /// A reduction over zero vectors was requested.
    #[error("operation requires at least one input vector")]
    EmptyInput,
    /// Correlation of a constant sequence is undefined.
    #[error("sample standard deviation is zero, correlation undefined")]
    DegenerateVariance,
}

/// A flat parameter (or gradient) vector.
///
/// Models store their weights flattened into one of these; aggregation rules
/// and the allocation step manipulate them directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len(), "dot: dimension mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Returns `self * c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }

    /// In-place `self += c * other`.
    pub fn add_scaled(&mut self, c: f64, other: &Self) {
        assert_eq!(self.len(), other.len(), "add_scaled: dimension mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "add: dimension mismatch");
        Self::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "sub: dimension mismatch");
        Self::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

/// A sorted, duplicate-free set of coordinate indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordinateMask {
    indices: Vec<usize>,
}

impl CoordinateMask {
    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }
}

/// Cosine similarity, clamped to [-1, 1].
///
/// Either input with norm below [`NORM_EPSILON`] yields [`NumError::ZeroNorm`]
/// since its direction is undefined.
pub fn cos_sim(a: &ParamVector, b: &ParamVector) -> Result<f64, NumError> {
    assert_eq!(a.len(), b.len(), "cos_sim: dimension mismatch");
    let (na, nb) = (a.l2_norm(), b.l2_norm());
    if na < NORM_EPSILON || nb < NORM_EPSILON {
        return Err(NumError::ZeroNorm);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Indices of the `k` largest-magnitude coordinates.
///
/// Ties break toward the lower index so the selection is deterministic.
pub fn largest_k(v: &ParamVector, k: usize) -> CoordinateMask {
    assert!(k <= v.len(), "largest_k: k={} exceeds dim {}", k, v.len());
    let mut order: Vec<usize> = (0..v.len()).collect();
    let vals = v.as_slice();
    order.sort_unstable_by(|&i, &j| {
        vals[j]
            .abs()
            .total_cmp(&vals[i].abs())
            .then(i.cmp(&j))
    });
    order.truncate(k);
    CoordinateMask::from_indices(order)
}

/// Keeps `v` on the masked coordinates, zeroes everywhere else.
pub fn mask_apply(v: &ParamVector, mask: &CoordinateMask) -> ParamVector {
    let mut out = ParamVector::zeros(v.len());
    let (src, dst) = (v.as_slice(), out.as_mut_slice());
    for &idx in mask.indices() {
        assert!(idx < src.len(), "mask_apply: index {idx} out of bounds");
        dst[idx] = src[idx];
    }
    out
}

/// Coordinate-wise median of a non-empty set of equal-length vectors.
///
/// Even counts take the mean of the two middle values.
pub fn coordinate_median(vectors: &[ParamVector]) -> Result<ParamVector, NumError> {
    let first = vectors.first().ok_or(NumError::EmptyInput)?;
    let dim = first.len();
    for v in vectors {
        assert_eq!(v.len(), dim, "coordinate_median: dimension mismatch");
    }
    let n = vectors.len();
    let mut column = vec![0.0; n];
    let mut out = ParamVector::zeros(dim);
    for k in 0..dim {
        for (row, v) in vectors.iter().enumerate() {
            column[row] = v.as_slice()[k];
        }
        column.sort_unstable_by(f64::total_cmp);
        out.as_mut_slice()[k] = if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        };
    }
    Ok(out)
}

/// Pearson correlation with the corrected (n-1) standard deviation, clamped
/// to [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, NumError> {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    assert!(x.len() >= 2, "pearson: need at least two samples");
    // Variance is zero exactly when all values tie; testing that directly
    // dodges the rounding noise the mean would otherwise introduce.
    if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
        return Err(NumError::DegenerateVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        cov += da * db;
        vx += da * da;
        vy += db * db;
    }
    let denom = n - 1.0;
    let (sx, sy) = ((vx / denom).sqrt(), (vy / denom).sqrt());
    if sx == 0.0 || sy == 0.0 {
        return Err(NumError::DegenerateVariance);
    }
    Ok((cov / (denom * sx * sy)).clamp(-1.0, 1.0))
}

/// Deterministic seed derivation: one master seed fans out into independent
/// streams keyed by a domain tag and up to two indices.
pub fn subseed(master: u64, tag: u64, a: u64, b: u64) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut s = splitmix64(master);
    for part in [tag, a, b] {
        s = splitmix64(s ^ part.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    s
}

/// Convenience: masked coordinate set as a BTreeSet (used by a few tests and
/// the trace tooling).
pub fn mask_set(mask: &CoordinateMask) -> BTreeSet<usize> {
    mask.indices().iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(vals: &[f64]) -> ParamVector {
        ParamVector::new(vals.to_vec())
    }

    #[test]
    fn cosine_of_worked_example() {
        let c = cos_sim(&pv(&[1.0, 2.0, 2.0]), &pv(&[2.0, 1.0, 2.0])).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_orthogonal_and_opposite() {
        assert_eq!(cos_sim(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(), 0.0);
        let opp = cos_sim(&pv(&[1.0, 1.0]), &pv(&[-1.0, -1.0])).unwrap();
        assert!((opp + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        assert_eq!(
            cos_sim(&pv(&[0.0, 0.0]), &pv(&[1.0, 0.0])),
            Err(NumError::ZeroNorm)
        );
        // Just under the threshold on one side.
        assert_eq!(
            cos_sim(&pv(&[1e-13, 0.0]), &pv(&[1.0, 0.0])),
            Err(NumError::ZeroNorm)
        );
    }

    #[test]
    fn largest_k_by_magnitude() {
        let m = largest_k(&pv(&[0.5, -3.0, 2.0, -0.1]), 2);
        assert_eq!(m.indices(), &[1, 2]);
    }

    #[test]
    fn largest_k_breaks_ties_toward_low_index() {
        let m = largest_k(&pv(&[1.0, -1.0, 1.0]), 2);
        assert_eq!(m.indices(), &[0, 1]);
    }

    #[test]
    fn largest_k_zero_and_full() {
        let v = pv(&[3.0, 1.0, 2.0]);
        assert!(largest_k(&v, 0).is_empty());
        assert_eq!(largest_k(&v, 3).indices(), &[0, 1, 2]);
    }

    #[test]
    fn mask_apply_zeroes_complement() {
        let out = mask_apply(
            &pv(&[1.0, 2.0, 3.0]),
            &CoordinateMask::from_indices(vec![0, 2]),
        );
        assert_eq!(out.as_slice(), &[1.0, 0.0, 3.0]);
    }

    #[test]
    fn median_odd_count() {
        let med = coordinate_median(&[pv(&[1.0, 5.0]), pv(&[2.0, 6.0]), pv(&[9.0, 7.0])]).unwrap();
        assert_eq!(med.as_slice(), &[2.0, 6.0]);
    }

    #[test]
    fn median_even_count_averages_middles() {
        let med = coordinate_median(&[pv(&[1.0]), pv(&[2.0]), pv(&[10.0]), pv(&[3.0])]).unwrap();
        assert_eq!(med.as_slice(), &[2.5]);
    }

    #[test]
    fn median_empty_is_error() {
        assert_eq!(coordinate_median(&[]), Err(NumError::EmptyInput));
    }

    #[test]
    fn pearson_worked_example() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pearson_perfect_and_degenerate() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            pearson(&x, &[5.0, 5.0, 5.0]),
            Err(NumError::DegenerateVariance)
        );
    }

    #[test]
    fn subseed_streams_are_distinct() {
        let s = subseed(42, 1, 0, 0);
        assert_ne!(s, subseed(42, 2, 0, 0));
        assert_ne!(s, subseed(42, 1, 1, 0));
        assert_ne!(s, subseed(42, 1, 0, 1));
        assert_eq!(s, subseed(42, 1, 0, 0));
    }

    // Reference implementation for the property tests: direct evaluation of
    // the textbook formula without the shared helper code.
    fn pearson_direct(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sx: f64 = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sy: f64 = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        num / ((n - 1.0) * sx * sy)
    }

    proptest! {
        #[test]
        fn cosine_is_bounded(pairs in prop::collection::vec(
            (-100.0f64..100.0, -100.0f64..100.0), 1..32)) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(c) = cos_sim(&ParamVector::new(a), &ParamVector::new(b)) {
                prop_assert!((-1.0..=1.0).contains(&c));
            }
        }

        #[test]
        fn cosine_is_scale_invariant(v in prop::collection::vec(0.1f64..10.0, 2..16),
                                     c in 0.5f64..20.0) {
            let a = ParamVector::new(v.clone());
            let b = ParamVector::new(v.iter().map(|x| x + 1.0).collect());
            let lhs = cos_sim(&a.scaled(c), &b).unwrap();
            let rhs = cos_sim(&a, &b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn largest_k_dominates_complement(v in prop::collection::vec(-50.0f64..50.0, 1..24),
                                          kf in 0.0f64..1.0) {
            let k = (kf * v.len() as f64) as usize;
            let vec = ParamVector::new(v.clone());
            let mask = largest_k(&vec, k);
            prop_assert_eq!(mask.len(), k);
            let min_in = mask.indices().iter().map(|&i| v[i].abs()).fold(f64::INFINITY, f64::min);
            let max_out = (0..v.len())
                .filter(|i| !mask.contains(*i))
                .map(|i| v[i].abs())
                .fold(0.0f64, f64::max);
            if k > 0 && k < v.len() {
                prop_assert!(min_in >= max_out);
            }
        }

        #[test]
        fn median_is_an_actual_center(cols in prop::collection::vec(
            prop::collection::vec(-100.0f64..100.0, 3usize), 1..9)) {
            // Three vectors of arbitrary dim: per coordinate, at least half the
            // values lie on each side of the median.
            let vectors: Vec<ParamVector> = (0..3)
                .map(|r| ParamVector::new(cols.iter().map(|c| c[r]).collect()))
                .collect();
            let med = coordinate_median(&vectors).unwrap();
            for (k, m) in med.as_slice().iter().enumerate() {
                let below = vectors.iter().filter(|v| v.as_slice()[k] <= *m).count();
                let above = vectors.iter().filter(|v| v.as_slice()[k] >= *m).count();
                prop_assert!(below >= 2 && above >= 2);
            }
        }

        #[test]
        fn pearson_matches_direct_formula(pairs in prop::collection::vec(
            (-100.0f64..100.0, -100.0f64..100.0), 2..40)) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            match pearson(&x, &y) {
                Ok(r) => {
                    let direct = pearson_direct(&x, &y).clamp(-1.0, 1.0);
                    prop_assert!((r - direct).abs() < 1e-12);
                }
                Err(NumError::DegenerateVariance) => {}
                Err(e) => return Err(TestCaseError::fail(format!("unexpected {e:?}"))),
            }
        }

        #[test]
        fn pearson_positive_affine_invariance(xs in prop::collection::vec(-10.0f64..10.0, 3..20),
                                              a in 0.1f64..5.0, b in -10.0f64..10.0) {
            let ys: Vec<f64> = xs.iter().map(|x| x * 1.5 + 2.0).collect();
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            if let (Ok(r1), Ok(r2)) = (pearson(&xs, &ys), pearson(&scaled, &ys)) {
                prop_assert!((r1 - r2).abs() < 1e-9);
            }
        }
    }
}
