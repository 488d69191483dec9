//! Vector outcomes and Pareto-order operations.
//!
//! All objectives are maximized. Dominance is evaluated exactly on the
//! floating-point values; approximate notions go through [`eps_dominated`].

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A length-`d` vector of normalized KPIs (larger is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveVector(Vec<f64>);

impl ObjectiveVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ObjectiveVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ObjectiveVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl AsRef<[f64]> for ObjectiveVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A finite collection of points sharing one dimension, stored row-major.
///
/// Duplicates are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    /// Builds a set from rows; every row must have length `dim`.
    pub fn from_rows<I, R>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f64]>,
    {
        let mut set = Self::with_dim(dim);
        for row in rows {
            set.push(row.as_ref())?;
        }
        Ok(set)
    }

    pub fn push(&mut self, p: &[f64]) -> Result<()> {
        check_dim(self.dim, p.len())?;
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(self.len()));
        }
        self.coords.extend_from_slice(p);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + Clone + '_ {
        // chunks_exact panics on zero; an empty dimension has no points anyway
        self.coords.chunks_exact(self.dim.max(1))
    }

    /// Subset of rows by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::with_dim(self.dim);
        for &i in indices {
            out.coords.extend_from_slice(self.point(i));
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }
}

/// Indices of the nondominated members of a point set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontierIndexSet {
    pub indices: Vec<usize>,
}

impl FrontierIndexSet {
    /// Frontier size `K_P`.
    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.indices.binary_search(&k).is_ok()
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `u` Pareto-dominates `v`: no worse anywhere, strictly better somewhere.
pub fn dominates(u: &[f64], v: &[f64]) -> Result<bool> {
    check_dim(u.len(), v.len())?;
    Ok(dominates_unchecked(u, v))
}

#[inline]
pub(crate) fn dominates_unchecked(u: &[f64], v: &[f64]) -> bool {
    let mut strict = false;
    for (a, b) in u.iter().zip(v) {
        if a < b {
            return false;
        }
        if a > b {
            strict = true;
        }
    }
    strict
}

/// `u ⪰ v` coordinate-wise.
#[inline]
pub(crate) fn weakly_dominates(u: &[f64], v: &[f64]) -> bool {
    u.iter().zip(v).all(|(a, b)| a >= b)
}

/// Indices (ascending) of all points not dominated by another point.
///
/// Exact duplicates of a nondominated point are all kept.
pub fn pareto_front(points: &PointSet) -> Result<FrontierIndexSet> {
    if points.is_empty() {
        return Err(Error::EmptySet);
    }
    let indices = (0..points.len())
        .filter(|&i| {
            let p = points.point(i);
            !points.iter().any(|other| dominates_unchecked(other, p))
        })
        .collect();
    Ok(FrontierIndexSet { indices })
}

/// True iff some point `p` satisfies `p_j >= u_j + eps` for every `j`.
pub fn eps_dominated(u: &[f64], points: &PointSet, eps: f64) -> Result<bool> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidEpsilon(eps));
    }
    if !points.is_empty() {
        check_dim(points.dim(), u.len())?;
    }
    Ok(points
        .iter()
        .any(|p| p.iter().zip(u).all(|(pj, uj)| *pj >= uj + eps)))
}

pub fn linf_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between two finite point sets under the
/// `ℓ∞` point metric.
pub fn hausdorff_linf(a: &PointSet, b: &PointSet) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    check_dim(a.dim(), b.dim())?;
    let directed = |x: &PointSet, y: &PointSet| {
        x.iter()
            .map(|p| {
                y.iter()
                    .map(|r| linf_distance(p, r))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: &[&[f64]]) -> PointSet {
        PointSet::from_rows(rows[0].len(), rows.iter().copied()).unwrap()
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[0.5, 0.5], &[0.4, 0.4]).unwrap());
        assert!(!dominates(&[0.5, 0.5], &[0.5, 0.5]).unwrap());
        assert!(!dominates(&[0.6, 0.3], &[0.3, 0.6]).unwrap());
        assert!(matches!(
            dominates(&[0.5], &[0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn front_examples() {
        let s = set(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5], &[0.3, 0.3]]);
        assert_eq!(pareto_front(&s).unwrap().indices, vec![0, 1, 2]);
        let s = set(&[&[0.2, 0.2]]);
        assert_eq!(pareto_front(&s).unwrap().indices, vec![0]);
        assert!(matches!(
            pareto_front(&PointSet::with_dim(2)),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn front_keeps_duplicates() {
        let s = set(&[&[0.5, 0.5], &[0.5, 0.5], &[0.1, 0.1]]);
        assert_eq!(pareto_front(&s).unwrap().indices, vec![0, 1]);
    }

    #[test]
    fn front_matches_pairwise_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
                .collect();
            let s = PointSet::from_rows(3, &rows).unwrap();
            // brute force: i survives iff no j is >= everywhere and > somewhere
            let expected: Vec<usize> = (0..6)
                .filter(|&i| {
                    !(0..6).any(|j| {
                        (0..3).all(|c| rows[j][c] >= rows[i][c])
                            && (0..3).any(|c| rows[j][c] > rows[i][c])
                    })
                })
                .collect();
            assert_eq!(pareto_front(&s).unwrap().indices, expected);
        }
    }

    #[test]
    fn eps_dominance_examples() {
        let s = set(&[&[0.5, 0.5]]);
        assert!(eps_dominated(&[0.4, 0.4], &s, 0.1).unwrap());
        assert!(!eps_dominated(&[0.4, 0.4], &s, 0.2).unwrap());
        // eps = 0 is weak dominance
        assert!(eps_dominated(&[0.5, 0.5], &s, 0.0).unwrap());
        assert!(!eps_dominated(&[0.5, 0.6], &s, 0.0).unwrap());
        assert!(matches!(
            eps_dominated(&[0.4, 0.4], &s, -0.1),
            Err(Error::InvalidEpsilon(_))
        ));
    }

    #[test]
    fn hausdorff_examples() {
        let a = set(&[&[0.0, 0.0], &[1.0, 0.5]]);
        assert_eq!(hausdorff_linf(&a, &a).unwrap(), 0.0);
        let a = set(&[&[0.0, 0.0]]);
        let b = set(&[&[0.1, 0.05]]);
        assert!((hausdorff_linf(&a, &b).unwrap() - 0.1).abs() < 1e-15);
        assert!(hausdorff_linf(&a, &PointSet::with_dim(2)).is_err());
    }

    #[test]
    fn hausdorff_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..2).map(|_| rng.random::<f64>()).collect())
                .collect();
            let b: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..2).map(|_| rng.random::<f64>()).collect())
                .collect();
            let mut sup = 0.0f64;
            for (x, y) in [(&a, &b), (&b, &a)] {
                for p in x.iter() {
                    let mut best = f64::INFINITY;
                    for r in y.iter() {
                        let d = (p[0] - r[0]).abs().max((p[1] - r[1]).abs());
                        best = best.min(d);
                    }
                    sup = sup.max(best);
                }
            }
            let got = hausdorff_linf(
                &PointSet::from_rows(2, &a).unwrap(),
                &PointSet::from_rows(2, &b).unwrap(),
            )
            .unwrap();
            assert_eq!(got, sup);
        }
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        // coarse grid so that ties and dominance both occur often
        prop::collection::vec((0u8..5).prop_map(|x| f64::from(x) / 4.0), 3)
    }

    proptest! {
        #[test]
        fn dominance_is_antisymmetric(u in vec3(), v in vec3()) {
            prop_assert!(!(dominates(&u, &v).unwrap() && dominates(&v, &u).unwrap()));
        }

        #[test]
        fn dominance_is_transitive(u in vec3(), v in vec3(), w in vec3()) {
            if dominates(&u, &v).unwrap() && dominates(&v, &w).unwrap() {
                prop_assert!(dominates(&u, &w).unwrap());
            }
        }

        #[test]
        fn front_is_permutation_stable(rows in prop::collection::vec(vec3(), 1..9), rot in 0usize..9) {
            let s = PointSet::from_rows(3, &rows).unwrap();
            let n = rows.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let shuffled = s.select(&perm);
            let mut a: Vec<Vec<f64>> = pareto_front(&s).unwrap().indices.iter().map(|&i| rows[i].clone()).collect();
            let mut b: Vec<Vec<f64>> = pareto_front(&shuffled).unwrap().indices.iter().map(|&i| shuffled.point(i).to_vec()).collect();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn front_covers_dominated_points(rows in prop::collection::vec(vec3(), 1..9)) {
            let s = PointSet::from_rows(3, &rows).unwrap();
            let front = pareto_front(&s).unwrap();
            prop_assert!(!front.indices.is_empty());
            for i in 0..rows.len() {
                if !front.contains(i) {
                    prop_assert!(front.indices.iter().any(|&f| dominates_unchecked(&rows[f], &rows[i])));
                }
            }
        }

        #[test]
        fn eps_dominance_is_monotone(u in vec3(), rows in prop::collection::vec(vec3(), 1..5), e1 in 0.0f64..0.5, e2 in 0.0f64..0.5) {
            let s = PointSet::from_rows(3, &rows).unwrap();
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            if eps_dominated(&u, &s, hi).unwrap() {
                prop_assert!(eps_dominated(&u, &s, lo).unwrap());
            }
        }
    }
}
