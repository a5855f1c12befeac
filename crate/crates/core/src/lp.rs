//! Strict feasibility of a homogeneous system of strict linear inequalities.
//!
//! `a_j · v > 0` (or `< 0`) for all `j` has a solution iff the margin program
//!
//! ```text
//! maximize t  subject to  s_j â_j · v ≥ t,  ‖v‖_∞ ≤ 1,  0 ≤ t ≤ 1
//! ```
//!
//! has a positive optimum, where `â_j = a_j / ‖a_j‖_∞`. The origin with
//! `t = 0` is always feasible, so a single-phase dense tableau suffices.
//! Pivoting follows Bland's rule; the program is highly degenerate (every
//! inequality row has a zero right-hand side) and Bland's rule guarantees
//! termination there.

use crate::data::dot;

/// Margin below which a system is declared infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sense {
    /// `a · v > 0`
    Positive,
    /// `a · v < 0`
    Negative,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::Positive => 1.0,
            Sense::Negative => -1.0,
        }
    }

    pub fn holds(self, value: f64) -> bool {
        match self {
            Sense::Positive => value > 0.0,
            Sense::Negative => value < 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub v: Vec<f64>,
    /// Optimal margin of the normalized program.
    pub margin: f64,
}

/// Returns a point strictly satisfying every constraint, or `None` if the
/// optimal margin does not exceed [`FEASIBILITY_TOL`].
///
/// All `a_j` must be nonzero, finite and of equal length.
pub fn strict_feasible(constraints: &[(&[f64], Sense)]) -> Option<Witness> {
    let &(first, _) = constraints.first()?;
    let k = first.len();
    let normalized: Vec<(Vec<f64>, f64)> = constraints
        .iter()
        .map(|&(a, sense)| {
            debug_assert_eq!(a.len(), k);
            let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            debug_assert!(scale > 0.0, "zero constraint vector");
            (a.iter().map(|v| v / scale).collect(), sense.sign())
        })
        .collect();

    let (v, margin) = solve_margin(&normalized, k);
    if margin <= FEASIBILITY_TOL {
        return None;
    }
    let ok = constraints
        .iter()
        .all(|&(a, sense)| sense.holds(dot(a, &v)));
    ok.then_some(Witness { v, margin })
}

/// Dense tableau for the margin program. Columns: `v⁺ (k)`, `v⁻ (k)`, `t`,
/// then one slack per row, then the right-hand side.
fn solve_margin(rows: &[(Vec<f64>, f64)], k: usize) -> (Vec<f64>, f64) {
    let n_struct = 2 * k + 1;
    let t_col = 2 * k;
    let m = rows.len() + 2 * k + 1;
    let width = n_struct + m + 1;
    let rhs = width - 1;

    let mut tab = vec![vec![0.0; width]; m + 1];
    for (r, (a, s)) in rows.iter().enumerate() {
        // -s a·v⁺ + s a·v⁻ + t ≤ 0
        for c in 0..k {
            tab[r][c] = -s * a[c];
            tab[r][k + c] = s * a[c];
        }
        tab[r][t_col] = 1.0;
        tab[r][n_struct + r] = 1.0;
    }
    for c in 0..2 * k {
        let r = rows.len() + c;
        tab[r][c] = 1.0;
        tab[r][n_struct + r] = 1.0;
        tab[r][rhs] = 1.0;
    }
    let r = m - 1;
    tab[r][t_col] = 1.0;
    tab[r][n_struct + r] = 1.0;
    tab[r][rhs] = 1.0;
    // objective row: z - t = 0
    tab[m][t_col] = -1.0;

    let mut basis: Vec<usize> = (n_struct..n_struct + m).collect();
    let max_iter = 50 * (m + width);
    for _ in 0..max_iter {
        let Some(enter) = (0..width - 1).find(|&c| tab[m][c] < -PIVOT_TOL) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for (r, row) in tab.iter().enumerate().take(m) {
            let a = row[enter];
            if a > PIVOT_TOL {
                let ratio = row[rhs] / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - PIVOT_TOL
                            || (ratio <= lratio + PIVOT_TOL && basis[r] < basis[lr])
                        {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
        }
        // Bounded by construction; an unbounded direction cannot occur.
        let Some((pr, _)) = leave else { break };
        pivot(&mut tab, pr, enter);
        basis[pr] = enter;
    }

    let mut x = vec![0.0; n_struct];
    for (r, &b) in basis.iter().enumerate() {
        if b < n_struct {
            x[b] = tab[r][rhs];
        }
    }
    let v = (0..k).map(|c| x[c] - x[k + c]).collect();
    (v, x[t_col])
}

fn pivot(tab: &mut [Vec<f64>], pr: usize, pc: usize) {
    let p = tab[pr][pc];
    for v in tab[pr].iter_mut() {
        *v /= p;
    }
    let prow = tab[pr].clone();
    for (r, row) in tab.iter_mut().enumerate() {
        if r == pr {
            continue;
        }
        let f = row[pc];
        if f != 0.0 {
            for (v, pv) in row.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
        }
    }
}
