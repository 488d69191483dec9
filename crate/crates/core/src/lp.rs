//! A small dense simplex solver and the convex-dominance membership test
//! built on it.

const TOL: f64 = 1e-12;

/// Result of [`maximize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LpOutcome {
    Optimal(f64),
    Unbounded,
}

/// Maximizes `c·x` subject to `A x <= b`, `x >= 0`, with `b >= 0`
/// (so the origin is feasible and no phase one is needed).
///
/// Uses Bland's rule, which cannot cycle on the degenerate problems the
/// membership test produces.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> LpOutcome {
    let n = c.len();
    let rows = a.len();
    debug_assert_eq!(b.len(), rows);
    debug_assert!(b.iter().all(|&x| x >= 0.0));
    let width = n + rows + 1;
    let rhs = width - 1;
    let mut t = vec![0.0; (rows + 1) * width];
    for (i, row) in a.iter().enumerate() {
        debug_assert_eq!(row.len(), n);
        t[i * width..i * width + n].copy_from_slice(row);
        t[i * width + n + i] = 1.0;
        t[i * width + rhs] = b[i];
    }
    let obj = rows * width;
    for (j, &cj) in c.iter().enumerate() {
        t[obj + j] = -cj;
    }
    let mut basis: Vec<usize> = (n..n + rows).collect();

    let max_iter = 64 * (n + rows + 1);
    for _ in 0..max_iter {
        let Some(enter) = (0..rhs).find(|&j| t[obj + j] < -TOL) else {
            return LpOutcome::Optimal(t[obj + rhs]);
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let coef = t[i * width + enter];
            if coef > TOL {
                let ratio = t[i * width + rhs] / coef;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - TOL || (ratio <= lr + TOL && basis[i] < basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
        }
        let Some((pr, _)) = leave else {
            return LpOutcome::Unbounded;
        };
        let piv = t[pr * width + enter];
        for j in 0..width {
            t[pr * width + j] /= piv;
        }
        for i in 0..=rows {
            if i == pr {
                continue;
            }
            let f = t[i * width + enter];
            if f != 0.0 {
                for j in 0..width {
                    t[i * width + j] -= f * t[pr * width + j];
                }
            }
        }
        basis[pr] = enter;
    }
    log::warn!("simplex iteration limit reached");
    LpOutcome::Optimal(t[obj + rhs])
}

/// Whether `y` is weakly dominated by some convex combination of `points`,
/// i.e. `∃λ ∈ Δ: Σ λ_i p_i ⪰ y`.
///
/// Solved as `max Σμ` s.t. `Σ μ_i (y − p_i) <= 0`, `Σ μ <= 1`, `μ >= 0`:
/// the optimum is positive exactly when a feasible direction exists.
pub fn dominated_by_hull<'a, I>(points: I, y: &[f64]) -> bool
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let d = y.len();
    let mut diffs: Vec<Vec<f64>> = Vec::new();
    let mut reach = vec![false; d];
    for p in points {
        let a: Vec<f64> = p.iter().zip(y).map(|(pj, yj)| pj - yj).collect();
        if a.iter().all(|&x| x >= 0.0) {
            return true;
        }
        for (r, &x) in reach.iter_mut().zip(&a) {
            *r |= x >= 0.0;
        }
        diffs.push(a);
    }
    // some coordinate no point reaches: no convex combination reaches it
    if diffs.is_empty() || reach.iter().any(|r| !r) {
        return false;
    }
    let m = diffs.len();
    let mut rows: Vec<Vec<f64>> = (0..d)
        .map(|j| diffs.iter().map(|a| -a[j]).collect())
        .collect();
    rows.push(vec![1.0; m]);
    let mut b = vec![0.0; d];
    b.push(1.0);
    match maximize(&vec![1.0; m], &rows, &b) {
        LpOutcome::Optimal(v) => v > 1e-9,
        LpOutcome::Unbounded => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_lp() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6)
        let out = maximize(
            &[3.0, 5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        );
        match out {
            LpOutcome::Optimal(v) => assert!((v - 36.0).abs() < 1e-9),
            LpOutcome::Unbounded => panic!("bounded problem"),
        }
    }

    #[test]
    fn unbounded_lp() {
        let out = maximize(&[1.0, 0.0], &[vec![0.0, 1.0]], &[1.0]);
        assert_eq!(out, LpOutcome::Unbounded);
    }

    #[test]
    fn hull_membership_2d() {
        let pts: Vec<Vec<f64>> = vec![vec![0.5, 1.0], vec![1.0, 0.5]];
        let it = || pts.iter().map(|p| p.as_slice());
        // midpoint (0.75, 0.75) lies on the chord
        assert!(dominated_by_hull(it(), &[0.74, 0.74]));
        assert!(!dominated_by_hull(it(), &[0.76, 0.76]));
        // under a single box
        assert!(dominated_by_hull(it(), &[0.2, 0.9]));
        // beyond every point in one coordinate
        assert!(!dominated_by_hull(it(), &[1.1, 0.0]));
    }

    #[test]
    fn hull_membership_3d_centroid() {
        let pts: Vec<Vec<f64>> = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let it = || pts.iter().map(|p| p.as_slice());
        assert!(dominated_by_hull(it(), &[0.33, 0.33, 0.33]));
        assert!(!dominated_by_hull(it(), &[0.34, 0.34, 0.34]));
        assert!(dominated_by_hull(it(), &[0.5, 0.49, 0.0]));
    }
}
