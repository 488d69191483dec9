//! Dominated hypervolume.
//!
//! Two readings of "the region dominated by a set" are supported:
//!
//! * **boxes**: the union of boxes `[z_ref, p]` over the points, computed
//!   exactly by a dimension sweep (public entry point limited to `d <= 4`);
//! * **convex**: the region dominated by the convex hull of the points. In
//!   two dimensions this is the area under the concave upper envelope and is
//!   exact; for `d >= 3` it is a Monte-Carlo estimate whose membership test
//!   is a small linear feasibility problem (see [`crate::lp`]).
//!
//! [`hv_mc_oracle`] is a deliberately plain estimator used to cross-check
//! both exact paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::dominated_by_hull;
use crate::pareto::{check_dim, weakly_dominates, PointSet};
use crate::rng::{self, Purpose};

/// Largest dimension served by the exact box path.
pub const MAX_EXACT_DIM: usize = 4;
pub const DEFAULT_IN_LOOP_MC_SAMPLES: usize = 20_000;
pub const DEFAULT_ORACLE_MC_SAMPLES: usize = 1_000_000;

/// Reference point `z_ref`; every point passed to an HV routine must be
/// coordinate-wise at least this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferencePoint(Vec<f64>);

impl ReferencePoint {
    pub fn new(z: Vec<f64>) -> Self {
        Self(z)
    }

    pub fn origin(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HvMethod {
    ExactBoxes,
    Exact2dConvex,
    McConvex,
    McOracle,
}

impl HvMethod {
    pub fn is_exact(self) -> bool {
        matches!(self, HvMethod::ExactBoxes | HvMethod::Exact2dConvex)
    }

    pub fn label(self) -> &'static str {
        match self {
            HvMethod::ExactBoxes => "exact-boxes",
            HvMethod::Exact2dConvex => "exact-2d-convex",
            HvMethod::McConvex => "mc-convex",
            HvMethod::McOracle => "mc-oracle",
        }
    }
}

/// A hypervolume value with its Monte-Carlo standard error (0 when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvEstimate {
    pub value: f64,
    pub stderr: f64,
    pub method: HvMethod,
}

impl HvEstimate {
    fn exact(value: f64, method: HvMethod) -> Self {
        Self {
            value,
            stderr: 0.0,
            method,
        }
    }
}

/// Which dominated region to measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HvMode {
    Boxes,
    Convex { mc_samples: usize, mc_seed: u64 },
}

impl HvMode {
    pub fn is_convex(&self) -> bool {
        matches!(self, HvMode::Convex { .. })
    }
}

fn validate(points: &PointSet, reference: &ReferencePoint) -> Result<()> {
    if !points.is_empty() {
        check_dim(reference.dim(), points.dim())?;
    }
    let r = reference.as_slice();
    for (index, p) in points.iter().enumerate() {
        if let Some(coord) = p.iter().zip(r).position(|(pj, rj)| pj < rj) {
            return Err(Error::BelowReference { index, coord });
        }
    }
    Ok(())
}

fn validate_point(p: &[f64], reference: &ReferencePoint, index: usize) -> Result<()> {
    check_dim(reference.dim(), p.len())?;
    if let Some(coord) = p.iter().zip(reference.as_slice()).position(|(a, b)| a < b) {
        return Err(Error::BelowReference { index, coord });
    }
    Ok(())
}

/// Exact volume of the union of boxes `[z_ref, p]`.
pub fn hv_boxes(points: &PointSet, reference: &ReferencePoint) -> Result<HvEstimate> {
    validate(points, reference)?;
    if reference.dim() > MAX_EXACT_DIM {
        return Err(Error::DimensionTooHigh(reference.dim()));
    }
    let value = box_union_volume(points.iter(), reference.as_slice());
    Ok(HvEstimate::exact(value, HvMethod::ExactBoxes))
}

/// Volume dominated by `conv(points)`: exact in 2-D, Monte-Carlo otherwise.
pub fn hv_convex(
    points: &PointSet,
    reference: &ReferencePoint,
    mc_samples: usize,
    mc_seed: u64,
) -> Result<HvEstimate> {
    validate(points, reference)?;
    let r = reference.as_slice();
    match reference.dim() {
        1 => Ok(HvEstimate::exact(
            box_union_volume(points.iter(), r),
            HvMethod::Exact2dConvex,
        )),
        2 => Ok(HvEstimate::exact(
            convex_area_2d(points.iter(), r),
            HvMethod::Exact2dConvex,
        )),
        _ => {
            if mc_samples == 0 {
                return Err(Error::InvalidParameter(
                    "mc_samples must be >= 1 for convex hypervolume in d >= 3".into(),
                ));
            }
            Ok(convex_mc(points, r, mc_samples, mc_seed))
        }
    }
}

/// Hypervolume under the given mode.
pub fn hv(points: &PointSet, reference: &ReferencePoint, mode: HvMode) -> Result<HvEstimate> {
    match mode {
        HvMode::Boxes => hv_boxes(points, reference),
        HvMode::Convex {
            mc_samples,
            mc_seed,
        } => hv_convex(points, reference, mc_samples, mc_seed),
    }
}

/// `HV(archive ∪ {candidate}) − HV(archive)`; never negative.
///
/// In convex mode with `d >= 3` both volumes are estimated from the same
/// Monte-Carlo samples, so the difference is itself nonnegative.
pub fn hv_marginal(
    archive: &PointSet,
    candidate: &[f64],
    reference: &ReferencePoint,
    mode: HvMode,
) -> Result<f64> {
    validate(archive, reference)?;
    validate_point(candidate, reference, archive.len())?;
    Ok(marginal_unchecked(
        archive.iter(),
        candidate,
        reference.as_slice(),
        mode,
    ))
}

pub(crate) fn marginal_unchecked<'a, I>(archive: I, candidate: &'a [f64], r: &[f64], mode: HvMode) -> f64
where
    I: IntoIterator<Item = &'a [f64]> + Clone,
{
    match mode {
        HvMode::Boxes => exclusive_box_volume(archive, candidate, r),
        HvMode::Convex {
            mc_samples,
            mc_seed,
        } => match r.len() {
            1 => exclusive_box_volume(archive, candidate, r),
            2 => {
                let before = convex_area_2d(archive.clone(), r);
                let after = convex_area_2d(
                    archive.into_iter().chain(std::iter::once(candidate)),
                    r,
                );
                (after - before).max(0.0)
            }
            _ => convex_marginal_mc(archive, candidate, r, mc_samples, mc_seed),
        },
    }
}

/// Plain Monte-Carlo estimate over the box `[z_ref, max-corner]`.
///
/// Kept independent of the exact routines: no frontier filtering, its own
/// seed derivation, and a direct membership test per sample.
pub fn hv_mc_oracle(
    points: &PointSet,
    reference: &ReferencePoint,
    n_samples: usize,
    seed: u64,
    convexified: bool,
) -> Result<HvEstimate> {
    if n_samples < 1000 {
        return Err(Error::InvalidParameter(format!(
            "oracle needs at least 1000 samples, got {n_samples}"
        )));
    }
    validate(points, reference)?;
    let r = reference.as_slice();
    if points.is_empty() {
        return Ok(HvEstimate {
            value: 0.0,
            stderr: 0.0,
            method: HvMethod::McOracle,
        });
    }
    let upper = max_corner(points.iter(), r);
    let volume: f64 = upper.iter().zip(r).map(|(u, l)| u - l).product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = vec![0.0; r.len()];
    let mut hits = 0usize;
    for _ in 0..n_samples {
        for ((yj, lo), hi) in y.iter_mut().zip(r).zip(&upper) {
            *yj = lo + (hi - lo) * rng.random::<f64>();
        }
        let inside = if convexified {
            dominated_by_hull(points.iter(), &y)
        } else {
            points.iter().any(|p| weakly_dominates(p, &y))
        };
        hits += usize::from(inside);
    }
    let p = hits as f64 / n_samples as f64;
    Ok(HvEstimate {
        value: p * volume,
        stderr: (p * (1.0 - p) / n_samples as f64).sqrt() * volume,
        method: HvMethod::McOracle,
    })
}

fn max_corner<'a, I: IntoIterator<Item = &'a [f64]>>(points: I, r: &[f64]) -> Vec<f64> {
    let mut upper = r.to_vec();
    for p in points {
        for (u, &x) in upper.iter_mut().zip(p) {
            *u = u.max(x);
        }
    }
    upper
}

/// Points not weakly dominated by an earlier kept point (duplicates and
/// dominated points removed), as a flat buffer.
fn nondominated_flat<'a, I: IntoIterator<Item = &'a [f64]>>(points: I, d: usize) -> Vec<f64> {
    let mut kept: Vec<f64> = Vec::new();
    for p in points {
        let n = kept.len() / d;
        if (0..n).any(|i| weakly_dominates(&kept[i * d..(i + 1) * d], p)) {
            continue;
        }
        let mut w = 0;
        for i in 0..n {
            let keep = !weakly_dominates(p, &kept[i * d..(i + 1) * d]);
            if keep {
                if w != i {
                    kept.copy_within(i * d..(i + 1) * d, w * d);
                }
                w += 1;
            }
        }
        kept.truncate(w * d);
        kept.extend_from_slice(p);
    }
    kept
}

/// Exact volume of a union of boxes, any dimension.
pub(crate) fn box_union_volume<'a, I: IntoIterator<Item = &'a [f64]>>(points: I, r: &[f64]) -> f64 {
    let d = r.len();
    let flat = nondominated_flat(points, d);
    sweep(flat, d, r)
}

/// Dimension sweep on a nondominated flat buffer: slice along the last
/// coordinate and recurse on the remaining ones.
fn sweep(mut flat: Vec<f64>, d: usize, r: &[f64]) -> f64 {
    let n = flat.len() / d;
    if n == 0 {
        return 0.0;
    }
    match d {
        1 => flat.iter().fold(r[0], |m, &x| m.max(x)) - r[0],
        2 => {
            let mut pts: Vec<(f64, f64)> = flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
            pts.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut area = 0.0;
            let mut ymax = r[1];
            for i in 0..pts.len() {
                ymax = ymax.max(pts[i].1);
                let next_x = if i + 1 < pts.len() { pts[i + 1].0 } else { r[0] };
                area += (pts[i].0 - next_x) * (ymax - r[1]);
            }
            area
        }
        _ => {
            let last = d - 1;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| flat[b * d + last].total_cmp(&flat[a * d + last]));
            let sorted: Vec<f64> = order
                .iter()
                .flat_map(|&i| flat[i * d..(i + 1) * d].iter().copied())
                .collect();
            flat = sorted;
            let dm = d - 1;
            let mut active: Vec<f64> = Vec::with_capacity(n * dm);
            let mut volume = 0.0;
            for i in 0..n {
                let p = &flat[i * d..i * d + dm];
                let na = active.len() / dm;
                if !(0..na).any(|a| weakly_dominates(&active[a * dm..(a + 1) * dm], p)) {
                    let mut w = 0;
                    for a in 0..na {
                        if !weakly_dominates(p, &active[a * dm..(a + 1) * dm]) {
                            if w != a {
                                active.copy_within(a * dm..(a + 1) * dm, w * dm);
                            }
                            w += 1;
                        }
                    }
                    active.truncate(w * dm);
                    active.extend_from_slice(p);
                }
                let top = flat[i * d + last];
                let bottom = if i + 1 < n { flat[(i + 1) * d + last] } else { r[last] };
                let height = top - bottom;
                if height > 0.0 {
                    volume += sweep(active.clone(), dm, &r[..dm]) * height;
                }
            }
            volume
        }
    }
}

/// Volume the candidate's box adds to the union of the archive's boxes.
pub(crate) fn exclusive_box_volume<'a, I>(archive: I, c: &[f64], r: &[f64]) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let d = r.len();
    let own: f64 = c.iter().zip(r).map(|(a, b)| a - b).product();
    if own <= 0.0 {
        return 0.0;
    }
    // intersections of the candidate box with each archive box
    let mut clipped: Vec<f64> = Vec::new();
    let mut buf = vec![0.0; d];
    for a in archive {
        if weakly_dominates(a, c) {
            return 0.0;
        }
        let mut degenerate = false;
        for j in 0..d {
            buf[j] = a[j].min(c[j]);
            degenerate |= buf[j] <= r[j];
        }
        if !degenerate {
            clipped.extend_from_slice(&buf);
        }
    }
    let covered = if clipped.is_empty() {
        0.0
    } else {
        let nd = nondominated_flat(clipped.chunks_exact(d), d);
        sweep(nd, d, r)
    };
    (own - covered).max(0.0)
}

/// Area under the concave upper envelope of a 2-D point set.
pub(crate) fn convex_area_2d<'a, I: IntoIterator<Item = &'a [f64]>>(points: I, r: &[f64]) -> f64 {
    let flat = nondominated_flat(points, 2);
    let mut pts: Vec<(f64, f64)> = flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    if pts.is_empty() {
        return 0.0;
    }
    // nondominated: x ascending means y descending
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let (x0, y0) = hull[0];
    let mut area = (x0 - r[0]) * (y0 - r[1]);
    for w in hull.windows(2) {
        let (xa, ya) = w[0];
        let (xb, yb) = w[1];
        area += (xb - xa) * (0.5 * (ya + yb) - r[1]);
    }
    area
}

fn in_convex_region(nd: &[f64], d: usize, y: &[f64]) -> bool {
    let mut it = nd.chunks_exact(d);
    if it.any(|p| weakly_dominates(p, y)) {
        return true;
    }
    dominated_by_hull(nd.chunks_exact(d), y)
}

fn convex_mc(points: &PointSet, r: &[f64], n: usize, seed: u64) -> HvEstimate {
    let d = r.len();
    if points.is_empty() {
        return HvEstimate {
            value: 0.0,
            stderr: 0.0,
            method: HvMethod::McConvex,
        };
    }
    let nd = nondominated_flat(points.iter(), d);
    let upper = max_corner(points.iter(), r);
    let volume: f64 = upper.iter().zip(r).map(|(u, l)| u - l).product();
    let mut rng = rng::stream(seed, Purpose::HvMonteCarlo, &[]);
    let mut y = vec![0.0; d];
    let mut hits = 0usize;
    for _ in 0..n {
        for ((yj, lo), hi) in y.iter_mut().zip(r).zip(&upper) {
            *yj = lo + (hi - lo) * rng.random::<f64>();
        }
        hits += usize::from(in_convex_region(&nd, d, &y));
    }
    let p = hits as f64 / n as f64;
    HvEstimate {
        value: p * volume,
        stderr: (p * (1.0 - p) / n as f64).sqrt() * volume,
        method: HvMethod::McConvex,
    }
}

fn convex_marginal_mc<'a, I>(archive: I, c: &[f64], r: &[f64], n: usize, seed: u64) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let d = r.len();
    let before = nondominated_flat(archive, d);
    if before.chunks_exact(d).any(|a| weakly_dominates(a, c)) {
        return 0.0;
    }
    let mut after = before.clone();
    after.extend_from_slice(c);
    let after = nondominated_flat(after.chunks_exact(d), d);
    let upper = max_corner(after.chunks_exact(d), r);
    let volume: f64 = upper.iter().zip(r).map(|(u, l)| u - l).product();
    let mut rng = rng::stream(seed, Purpose::HvMonteCarlo, &[]);
    let mut y = vec![0.0; d];
    let mut gained = 0usize;
    for _ in 0..n.max(1) {
        for ((yj, lo), hi) in y.iter_mut().zip(r).zip(&upper) {
            *yj = lo + (hi - lo) * rng.random::<f64>();
        }
        if !before.is_empty() && in_convex_region(&before, d, &y) {
            continue;
        }
        gained += usize::from(in_convex_region(&after, d, &y));
    }
    gained as f64 / n.max(1) as f64 * volume
}
