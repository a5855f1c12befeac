//! Instrument direction sets.
//!
//! For a fixed covariate sample the moment functions depend on an instrument
//! direction `v` only through the sign sequence of `X_i · v`. Directions are
//! therefore interchangeable within each cell of the central hyperplane
//! arrangement `{v : X_i · v = 0}`, and one representative per cell is enough
//! to retain every restriction the data can express.
//!
//! Two constructions are provided: an exact one for two covariates based on
//! the order statistics of the ratios `X_i1 / X_i2`, and an incremental cell
//! enumerator for general `K` that decides which cells survive each inserted
//! hyperplane with a small margin LP (see [`crate::lp`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dot, Covariates};
use crate::error::{Error, Result};
use crate::lp::{strict_feasible, Sense};

/// Representative directions for the upper (`V_u`) and lower (`V_l`)
/// partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSets {
    upper: Vec<Vec<f64>>,
    lower: Vec<Vec<f64>>,
}

impl InstrumentSets {
    pub fn new(upper: Vec<Vec<f64>>, lower: Vec<Vec<f64>>) -> Result<Self> {
        for v in upper.iter().chain(&lower) {
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::validation("instrument direction must be finite"));
            }
            if v.iter().all(|&c| c == 0.0) {
                return Err(Error::validation("instrument direction must be nonzero"));
            }
        }
        Ok(Self { upper, lower })
    }

    /// One set of directions serving both sides.
    pub fn common(v: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(v.clone(), v)
    }

    pub fn empty() -> Self {
        Self {
            upper: Vec::new(),
            lower: Vec::new(),
        }
    }

    pub fn upper(&self) -> &[Vec<f64>] {
        &self.upper
    }

    pub fn lower(&self) -> &[Vec<f64>] {
        &self.lower
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty() && self.lower.is_empty()
    }
}

/// Ratios `Z_i = X_i1 / X_i2` and their order statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioStats {
    pub z: Vec<f64>,
    pub sorted: Vec<f64>,
}

/// `Z_i = X_i1 / X_i2`, with `Z_i = ±∞` by the sign of `X_i1` when
/// `X_i2 = 0`, and `Z_i = 0` when both are zero.
pub fn ratio_stats(x: &Covariates) -> Result<RatioStats> {
    require_two_columns(x)?;
    let z: Vec<f64> = x
        .rows()
        .map(|r| {
            let (a, b) = (r[0], r[1]);
            if b != 0.0 {
                a / b
            } else if a > 0.0 {
                f64::INFINITY
            } else if a < 0.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        })
        .collect();
    let mut sorted = z.clone();
    sorted.sort_by(f64::total_cmp);
    // -0.0 sorts below 0.0 under total_cmp; the two are the same endpoint
    for v in &mut sorted {
        if *v == 0.0 {
            *v = 0.0;
        }
    }
    Ok(RatioStats { z, sorted })
}

/// Exact instrument set for two covariates.
///
/// With `v = (1, v_2)` the boundaries are at `v_2 = -Z_i`; with
/// `v = (-1, v_2)` they are at `v_2 = Z_i`. One interior point of every
/// nonempty open interval between consecutive boundaries is taken on each
/// branch. The resulting set `𝒱` serves as both the upper and lower set.
pub fn build_instruments_2d(x: &Covariates) -> Result<InstrumentSets> {
    let stats = ratio_stats(x)?;
    let upper_ends: Vec<f64> = stats.sorted.iter().rev().map(|z| -z).collect();
    let mut v: Vec<Vec<f64>> = interval_representatives(&upper_ends)
        .into_iter()
        .map(|v2| vec![1.0, v2])
        .collect();
    v.extend(
        interval_representatives(&stats.sorted)
            .into_iter()
            .map(|v2| vec![-1.0, v2]),
    );
    InstrumentSets::common(v)
}

/// One interior point per nonempty interval of the partition of the real
/// line by the ascending `ends` (which may include `±∞`).
fn interval_representatives(ends: &[f64]) -> Vec<f64> {
    let mut bounds = Vec::with_capacity(ends.len() + 2);
    bounds.push(f64::NEG_INFINITY);
    bounds.extend_from_slice(ends);
    bounds.push(f64::INFINITY);
    bounds
        .windows(2)
        .filter(|w| w[0] < w[1])
        .map(|w| interior_point(w[0], w[1]))
        .collect()
}

fn interior_point(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => lo / 2.0 + hi / 2.0,
        (false, true) => hi - 1.0 - hi.abs(),
        (true, false) => lo + 1.0 + lo.abs(),
        (false, false) => 0.0,
    }
}

fn require_two_columns(x: &Covariates) -> Result<()> {
    if x.k() != 2 {
        return Err(Error::validation(format!(
            "two covariates required, got K = {}",
            x.k()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Cell {
    senses: Vec<Sense>,
    witness: Vec<f64>,
}

/// One interior witness per full-dimensional cell of the central arrangement
/// `{v : X_i · v = 0}`.
///
/// Hyperplanes are inserted in row order starting from the two half-spaces of
/// the first row; a cell is split when both sides of the new hyperplane
/// remain strictly feasible. Output order is deterministic. Intended for
/// small problems (roughly `n ≤ 25`, `K ≤ 4`).
pub fn enumerate_cells(x: &Covariates) -> Result<Vec<Vec<f64>>> {
    if let Some(i) = x.rows().position(|r| r.iter().all(|&c| c == 0.0)) {
        return Err(Error::ZeroRow(i));
    }
    let first = x.row(0);
    let mut cells = vec![
        Cell {
            senses: vec![Sense::Positive],
            witness: first.to_vec(),
        },
        Cell {
            senses: vec![Sense::Negative],
            witness: first.iter().map(|c| -c).collect(),
        },
    ];
    for j in 1..x.n() {
        cells = cells
            .par_iter()
            .map(|cell| split_cell(x, cell, j))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
    }
    Ok(cells.into_iter().map(|c| c.witness).collect())
}

fn split_cell(x: &Covariates, cell: &Cell, j: usize) -> Vec<Cell> {
    let row = x.row(j);
    let current = dot(row, &cell.witness);
    let mut out = Vec::with_capacity(2);
    for sense in [Sense::Positive, Sense::Negative] {
        let witness = if sense.holds(current) {
            Some(cell.witness.clone())
        } else {
            let mut cons: Vec<(&[f64], Sense)> = cell
                .senses
                .iter()
                .enumerate()
                .map(|(i, &s)| (x.row(i), s))
                .collect();
            cons.push((row, sense));
            strict_feasible(&cons).map(|w| w.v)
        };
        if let Some(witness) = witness {
            let mut senses = cell.senses.clone();
            senses.push(sense);
            out.push(Cell { senses, witness });
        }
    }
    out
}

/// Instrument set for general `K`: the cell witnesses serve both sides.
pub fn instruments_from_cells(x: &Covariates) -> Result<InstrumentSets> {
    InstrumentSets::common(enumerate_cells(x)?)
}

/// Cover's count of homogeneously linearly separable dichotomies of `n`
/// points in general position in `R^K`: `2 Σ_{j<K} C(n-1, j)`.
pub fn cover_bound(n: u64, k: u64) -> Result<u64> {
    if n == 0 || k == 0 {
        return Err(Error::validation("cover_bound requires n ≥ 1 and K ≥ 1"));
    }
    let mut sum: u64 = 0;
    for j in 0..k.min(n) {
        let c = binomial(n - 1, j).ok_or(Error::Overflow("cover_bound"))?;
        sum = sum.checked_add(c).ok_or(Error::Overflow("cover_bound"))?;
    }
    sum.checked_mul(2).ok_or(Error::Overflow("cover_bound"))
}

fn binomial(m: u64, j: u64) -> Option<u64> {
    if j > m {
        return Some(0);
    }
    let j = j.min(m - j);
    let mut acc: u128 = 1;
    for i in 0..j {
        acc = acc.checked_mul(u128::from(m - i))? / u128::from(i + 1);
    }
    u64::try_from(acc).ok()
}

/// Strict sign vector of `X_i · v`, or `None` if `v` lies on a hyperplane.
pub fn strict_pattern(x: &Covariates, v: &[f64]) -> Option<Vec<bool>> {
    (0..x.n())
        .map(|i| {
            let d = x.dot(i, v);
            (d != 0.0).then_some(d > 0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn mat(rows: &[[f64; 2]]) -> Covariates {
        Covariates::from_rows(rows).unwrap()
    }

    fn patterns(x: &Covariates, vs: &[Vec<f64>]) -> BTreeSet<Vec<bool>> {
        vs.iter().filter_map(|v| strict_pattern(x, v)).collect()
    }

    #[test]
    fn ratio_examples() {
        let r = ratio_stats(&mat(&[[1.0, 2.0], [-3.0, 1.0]])).unwrap();
        assert_eq!(r.z, vec![0.5, -3.0]);
        assert_eq!(r.sorted, vec![-3.0, 0.5]);
        assert_eq!(ratio_stats(&mat(&[[1.0, 0.0]])).unwrap().z, vec![f64::INFINITY]);
        assert_eq!(ratio_stats(&mat(&[[-1.0, 0.0]])).unwrap().z, vec![f64::NEG_INFINITY]);
        assert_eq!(ratio_stats(&mat(&[[0.0, 0.0]])).unwrap().z, vec![0.0]);
    }

    #[test]
    fn ratio_rejects_wrong_k() {
        let x = Covariates::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(ratio_stats(&x).is_err());
        assert!(build_instruments_2d(&x).is_err());
    }

    #[test]
    fn single_ratio_gives_four_directions() {
        let inst = build_instruments_2d(&mat(&[[0.0, 1.0]])).unwrap();
        assert_eq!(
            inst.upper(),
            &[vec![1.0, -1.0], vec![1.0, 1.0], vec![-1.0, -1.0], vec![-1.0, 1.0]]
        );
        assert_eq!(inst.upper(), inst.lower());
    }

    #[test]
    fn three_distinct_ratios_give_six_cells() {
        let x = mat(&[[1.0, 2.0], [-3.0, 1.0], [2.0, -1.0]]);
        let inst = build_instruments_2d(&x).unwrap();
        assert_eq!(inst.upper().len(), 8);
        assert_eq!(patterns(&x, inst.upper()).len(), 6);
        assert_eq!(enumerate_cells(&x).unwrap().len(), 6);
    }

    #[test]
    fn equal_ratios_collapse() {
        let x = mat(&[[1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]]);
        let inst = build_instruments_2d(&x).unwrap();
        assert_eq!(inst.upper().len(), 4);
    }

    #[test]
    fn infinite_ratios_skip_empty_intervals() {
        let x = mat(&[[1.0, 0.0], [-2.0, 0.0], [1.0, 1.0]]);
        let inst = build_instruments_2d(&x).unwrap();
        for v in inst.upper() {
            assert!(v[1].is_finite());
        }
        let cells = enumerate_cells(&x).unwrap();
        assert_eq!(patterns(&x, inst.upper()), patterns(&x, &cells));
    }

    #[test]
    fn representatives_clear_boundaries() {
        assert_eq!(interior_point(f64::NEG_INFINITY, 2.0), -1.0);
        assert_eq!(interior_point(-2.0, f64::INFINITY), 1.0);
        assert_eq!(interior_point(1.0, 3.0), 2.0);
        assert_eq!(interior_point(f64::NEG_INFINITY, f64::INFINITY), 0.0);
    }

    #[test]
    fn cell_examples() {
        assert_eq!(enumerate_cells(&mat(&[[1.0, 0.0]])).unwrap().len(), 2);
        let x = mat(&[[1.0, 0.3], [-0.2, 1.0], [0.7, 0.9], [1.5, -2.0], [0.1, -0.4]]);
        assert_eq!(enumerate_cells(&x).unwrap().len() as u64, cover_bound(5, 2).unwrap());
    }

    #[test]
    fn zero_row_is_an_error() {
        assert!(matches!(
            enumerate_cells(&mat(&[[1.0, 0.0], [0.0, 0.0]])),
            Err(Error::ZeroRow(1))
        ));
    }

    #[test]
    fn cover_bound_values() {
        assert_eq!(cover_bound(3, 2).unwrap(), 6);
        assert_eq!(cover_bound(5, 2).unwrap(), 10);
        for n in 1..20 {
            assert_eq!(cover_bound(n, 1).unwrap(), 2);
        }
        // K ≥ n: every dichotomy is separable
        assert_eq!(cover_bound(4, 6).unwrap(), 16);
        assert!(matches!(cover_bound(200, 100), Err(Error::Overflow(_))));
        assert!(cover_bound(0, 2).is_err());
    }

    #[test]
    fn witnesses_have_distinct_strict_patterns() {
        let x = Covariates::from_rows(&[
            [1.0, 0.2, -0.3],
            [0.4, -1.0, 0.8],
            [-0.5, 0.6, 1.0],
            [0.9, 0.9, 0.1],
        ])
        .unwrap();
        let cells = enumerate_cells(&x).unwrap();
        let pats = patterns(&x, &cells);
        assert_eq!(pats.len(), cells.len());
        assert_eq!(cells.len() as u64, cover_bound(4, 3).unwrap());
    }
}
