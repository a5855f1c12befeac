//! Identified set, violation measure, power guarantees and test inversion.
//!
//! With known conditional probabilities `p_i`, a point `b` belongs to the
//! finite-sample identified set iff every population moment
//!
//! ```text
//! upper:  n⁻¹ Σ (2p_i − 1) 1{X_i·b ≥ 0, X_i·v < 0} ≥ 0,   v ∈ V_u
//! lower:  n⁻¹ Σ (1 − 2p_i) 1{X_i·b ≤ 0, X_i·v > 0} ≥ 0,   v ∈ V_l
//! ```
//!
//! is nonnegative. The largest violation `Q(b)` drives the Hoeffding-type
//! power guarantees in [`power_lower_bound`] and [`power_threshold`].

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sign_pattern, CondProbs, Covariates, ParamPoint, Sample, SignPattern};
use crate::error::{check_dim, Error, Result};
use crate::instruments::{build_instruments_2d, InstrumentSets};
use crate::rng::derive_seed;
use crate::teststat::{
    critical_value, positives_of, InstrumentIndex, MomentSets, RademacherDraws, Side, TestConfig,
};

/// Default number of grid points over `[θ₀ − 3, θ₀ + 3]`.
pub const DEFAULT_GRID_POINTS: usize = 601;

/// Parameter points `b = (sign, θ)` for an ascending list of `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    sign: i8,
    thetas: Vec<f64>,
}

impl ThetaGrid {
    pub fn new(sign: i8, thetas: Vec<f64>) -> Result<Self> {
        if sign != 1 && sign != -1 {
            return Err(Error::validation("sign branch must be +1 or -1"));
        }
        if thetas.is_empty() {
            return Err(Error::validation("theta grid must be nonempty"));
        }
        if thetas.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("theta grid must be finite"));
        }
        if thetas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("theta grid must be strictly increasing"));
        }
        Ok(Self { sign, thetas })
    }

    /// `points` evenly spaced values from `lo` to `hi` inclusive.
    pub fn linspace(sign: i8, lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points == 0 {
            return Err(Error::validation("grid needs at least one point"));
        }
        if points == 1 {
            return Self::new(sign, vec![lo]);
        }
        let span = hi - lo;
        let last = (points - 1) as f64;
        Self::new(
            sign,
            (0..points).map(|j| lo + span * j as f64 / last).collect(),
        )
    }

    /// The default plotting range `[θ₀ − 3, θ₀ + 3]`.
    pub fn around(sign: i8, theta0: f64) -> Result<Self> {
        Self::linspace(sign, theta0 - 3.0, theta0 + 3.0, DEFAULT_GRID_POINTS)
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn point(&self, j: usize) -> Vec<f64> {
        vec![f64::from(self.sign), self.thetas[j]]
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|j| self.point(j))
    }
}

/// Groups grid points by the sign pattern of `X·b`. Returns the distinct
/// patterns in order of first appearance and each point's pattern id.
pub(crate) fn group_by_pattern(
    x: &Covariates,
    grid: &ThetaGrid,
) -> Result<(Vec<SignPattern>, Vec<usize>)> {
    let mut ids: HashMap<SignPattern, usize> = HashMap::new();
    let mut patterns = Vec::new();
    let mut assignment = Vec::with_capacity(grid.len());
    for b in grid.points() {
        let pat = sign_pattern(x, &b)?;
        let id = *ids.entry(pat.clone()).or_insert_with(|| {
            patterns.push(pat);
            patterns.len() - 1
        });
        assignment.push(id);
    }
    Ok((patterns, assignment))
}

/// Conditional expectation of the sample moment at `(b, v)`.
pub fn population_moment(
    p: &CondProbs,
    x: &Covariates,
    b: &[f64],
    v: &[f64],
    side: Side,
) -> Result<f64> {
    let (sum, _) = direct_population_sum(p, x, b, v, side)?;
    Ok(sum / x.n() as f64)
}

fn direct_population_sum(
    p: &CondProbs,
    x: &Covariates,
    b: &[f64],
    v: &[f64],
    side: Side,
) -> Result<(f64, usize)> {
    check_dim(x.n(), p.len())?;
    check_dim(x.k(), b.len())?;
    check_dim(x.k(), v.len())?;
    let p = p.as_slice();
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..x.n() {
        let (xb, xv) = (x.dot(i, b), x.dot(i, v));
        match side {
            Side::Upper if xb >= 0.0 && xv < 0.0 => {
                sum += 2.0 * p[i] - 1.0;
                count += 1;
            }
            Side::Lower if xb <= 0.0 && xv > 0.0 => {
                sum += 1.0 - 2.0 * p[i];
                count += 1;
            }
            _ => {}
        }
    }
    Ok((sum, count))
}

/// Population moments for every instrument of one `b`, from precomputed
/// index sets: `(upper, lower)` values and indicator masses.
struct PopulationMoments {
    upper: Vec<(f64, f64)>,
    lower: Vec<(f64, f64)>,
}

impl PopulationMoments {
    fn new(sets: &MomentSets, p: &[f64]) -> Self {
        let n = sets.n() as f64;
        let eval = |set: &crate::bitset::IndexSet, side: Side| {
            let sum = set.iter().fold(0.0, |acc, i| {
                acc + match side {
                    Side::Upper => 2.0 * p[i] - 1.0,
                    Side::Lower => 1.0 - 2.0 * p[i],
                }
            });
            (sum / n, set.count() as f64 / n)
        };
        Self {
            upper: sets.upper().iter().map(|s| eval(s, Side::Upper)).collect(),
            lower: sets.lower().iter().map(|s| eval(s, Side::Lower)).collect(),
        }
    }

    fn all(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.upper.iter().chain(&self.lower)
    }

    fn violation(&self) -> Violation {
        let worst = |v: &[(f64, f64)]| -v.iter().fold(0.0f64, |m, &(val, _)| m.min(val));
        let q_u = worst(&self.upper).max(0.0);
        let q_l = worst(&self.lower).max(0.0);
        Violation {
            q_u,
            q_l,
            q_total: q_u.max(q_l),
        }
    }
}

fn checked_sets(p: &CondProbs, x: &Covariates, b: &[f64], inst: &InstrumentSets) -> Result<MomentSets> {
    check_dim(x.n(), p.len())?;
    MomentSets::new(x, b, inst)
}

/// Whether every instrument moment inequality holds at `b`.
pub fn in_identified_set(
    p: &CondProbs,
    x: &Covariates,
    b: &[f64],
    inst: &InstrumentSets,
) -> Result<bool> {
    for v in inst.upper() {
        if population_moment(p, x, b, v, Side::Upper)? < 0.0 {
            return Ok(false);
        }
    }
    for v in inst.lower() {
        if population_moment(p, x, b, v, Side::Lower)? < 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Identified-set membership along a `K = 2` grid, with instruments from
/// [`build_instruments_2d`].
pub fn identified_set_2d(p: &CondProbs, x: &Covariates, grid: &ThetaGrid) -> Result<Vec<bool>> {
    check_dim(x.n(), p.len())?;
    let inst = build_instruments_2d(x)?;
    let index = InstrumentIndex::new(x, &inst)?;
    let (patterns, assignment) = group_by_pattern(x, grid)?;
    let members: Vec<bool> = patterns
        .par_iter()
        .map(|pat| {
            let sets = MomentSets::from_pattern(&index, pat);
            PopulationMoments::new(&sets, p.as_slice())
                .all()
                .all(|&(m, _)| m >= 0.0)
        })
        .collect();
    Ok(assignment.into_iter().map(|id| members[id]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub q_u: f64,
    pub q_l: f64,
    pub q_total: f64,
}

/// Largest violations `Q_u(b)`, `Q_l(b)` and `Q(b) = max{Q_u, Q_l}`.
pub fn violation_q(
    p: &CondProbs,
    x: &Covariates,
    b: &[f64],
    inst: &InstrumentSets,
) -> Result<Violation> {
    let sets = checked_sets(p, x, b, inst)?;
    Ok(PopulationMoments::new(&sets, p.as_slice()).violation())
}

/// `(1 + q²/n)^{-1/2}`, floored at `ε`.
fn q_factor(n: usize, q: f64, floor: f64) -> f64 {
    floor.max((1.0 + q * q / n as f64).powf(-0.5))
}

/// Violation threshold `C(γ)` above which power is at least `γ`:
/// `n^{-1/2} (q·max{ε, (1 + q²/n)^{-1/2}} + √(−2 log(1 − γ)))`.
pub fn power_threshold(n: usize, q: f64, epsilon: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::validation("gamma must be in (0,1)"));
    }
    if n == 0 {
        return Err(Error::validation("n ≥ 1 required"));
    }
    let tail = (-2.0 * (1.0 - gamma).ln()).sqrt();
    Ok((q * q_factor(n, q, epsilon) + tail) / (n as f64).sqrt())
}

fn hoeffding_bound(shortfall: f64) -> f64 {
    let s = shortfall.max(0.0);
    (1.0 - (-0.5 * s * s).exp()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBounds {
    /// Per-direction bound, maximized over both instrument sets.
    pub cor1: f64,
    /// Bound through the scalar violation `Q(b)`.
    pub cor2: f64,
}

/// Lower bounds on `P(T_n(b) > q | X)` for `b` outside the identified set.
/// Directions whose indicator set is empty are skipped.
pub fn power_lower_bound(
    p: &CondProbs,
    x: &Covariates,
    b: &[f64],
    inst: &InstrumentSets,
    q: f64,
    epsilon: f64,
) -> Result<PowerBounds> {
    let sets = checked_sets(p, x, b, inst)?;
    let pm = PopulationMoments::new(&sets, p.as_slice());
    Ok(bounds_from(&pm, x.n(), q, epsilon))
}

fn bounds_from(pm: &PopulationMoments, n: usize, q: f64, epsilon: f64) -> PowerBounds {
    let root_n = (n as f64).sqrt();
    let cor1 = pm
        .all()
        .filter(|&&(_, mass)| mass > 0.0)
        .map(|&(m, mass)| {
            let scale = mass.sqrt();
            let zeta = -m / scale;
            let eps_tilde = epsilon / scale;
            hoeffding_bound(root_n * zeta - q * q_factor(n, q, eps_tilde))
        })
        .fold(0.0f64, f64::max);
    let viol = pm.violation().q_total;
    let cor2 = hoeffding_bound(root_n * viol - q * q_factor(n, q, epsilon));
    PowerBounds { cor1, cor2 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub schema_version: u32,
    pub q_u: f64,
    pub q_l: f64,
    pub q_total: f64,
    pub c_gamma: f64,
    pub bound_cor1: f64,
    pub bound_cor2: f64,
}

/// Violation measure, `C(γ)` and both power bounds at `b` for critical
/// value `q`.
pub fn power_report(
    p: &CondProbs,
    x: &Covariates,
    b: &[f64],
    inst: &InstrumentSets,
    q: f64,
    epsilon: f64,
    gamma: f64,
) -> Result<PowerReport> {
    let sets = checked_sets(p, x, b, inst)?;
    let pm = PopulationMoments::new(&sets, p.as_slice());
    let v = pm.violation();
    let bounds = bounds_from(&pm, x.n(), q, epsilon);
    Ok(PowerReport {
        schema_version: 1,
        q_u: v.q_u,
        q_l: v.q_l,
        q_total: v.q_total,
        c_gamma: power_threshold(x.n(), q, epsilon, gamma)?,
        bound_cor1: bounds.cor1,
        bound_cor2: bounds.cor2,
    })
}

/// How Rademacher draws are allotted across grid points during inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawMode {
    /// One draw matrix for the whole grid; decisions are then constant on
    /// each arrangement cell.
    Shared,
    /// Fresh draws per grid point, seeded from the point index.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionRow {
    pub s: i8,
    pub theta: f64,
    pub t_stat: f64,
    pub q: f64,
    pub reject: bool,
    /// Index of the sign pattern of `X·b` among the grid's distinct patterns.
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub rows: Vec<InversionRow>,
    /// Number of distinct arrangement cells visited by the grid.
    pub cells: usize,
}

impl Inversion {
    /// Grid points where `H0: β = b` is not rejected.
    pub fn confidence_set(&self) -> Vec<(i8, f64)> {
        self.rows
            .iter()
            .filter(|r| !r.reject)
            .map(|r| (r.s, r.theta))
            .collect()
    }
}

/// Runs the test at every grid point and collects the non-rejected ones.
pub fn invert_test(
    sample: &Sample,
    grid: &ThetaGrid,
    config: &TestConfig,
    mode: DrawMode,
) -> Result<Inversion> {
    config.validate()?;
    let x = sample.x();
    let inst = build_instruments_2d(x)?;
    let index = InstrumentIndex::new(x, &inst)?;
    let positives = positives_of(sample.y());
    let (patterns, assignment) = group_by_pattern(x, grid)?;
    let eps = config.epsilon;

    let rows: Vec<(f64, f64)> = match mode {
        DrawMode::Shared => {
            let draws = RademacherDraws::generate(x.n(), config.draws, config.seed);
            let per_cell = patterns
                .par_iter()
                .map(|pat| {
                    let sets = MomentSets::from_pattern(&index, pat);
                    let q = critical_value(&sets, &draws, config.alpha, eps)?.q;
                    Ok((sets.statistic(&positives, eps), q))
                })
                .collect::<Result<Vec<_>>>()?;
            assignment.iter().map(|&id| per_cell[id]).collect()
        }
        DrawMode::Independent => assignment
            .par_iter()
            .enumerate()
            .map(|(j, &id)| {
                let sets = MomentSets::from_pattern(&index, &patterns[id]);
                let draws =
                    RademacherDraws::generate(x.n(), config.draws, derive_seed(config.seed, j as u64));
                let q = critical_value(&sets, &draws, config.alpha, eps)?.q;
                Ok((sets.statistic(&positives, eps), q))
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let rows = rows
        .into_iter()
        .zip(&assignment)
        .enumerate()
        .map(|(j, ((t_stat, q), &cell))| InversionRow {
            s: grid.sign(),
            theta: grid.thetas()[j],
            t_stat,
            q,
            reject: t_stat > q,
            cell,
        })
        .collect();
    Ok(Inversion {
        rows,
        cells: patterns.len(),
    })
}

/// Builds a [`ParamPoint`] for each grid value.
pub fn grid_params(grid: &ThetaGrid) -> Result<Vec<ParamPoint>> {
    grid.points().map(ParamPoint::new).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x1(rows: &[[f64; 2]]) -> Covariates {
        Covariates::from_rows(rows).unwrap()
    }

    #[test]
    fn population_moment_examples() {
        let half = CondProbs::uniform_half(2);
        let x = x1(&[[1.0, 0.0], [-1.0, 0.0]]);
        for side in [Side::Upper, Side::Lower] {
            assert_eq!(population_moment(&half, &x, &[1.0, 0.3], &[-1.0, 0.2], side).unwrap(), 0.0);
        }
        let p = CondProbs::new(vec![0.8]).unwrap();
        let m = population_moment(&p, &x1(&[[1.0, 0.0]]), &[1.0, 0.0], &[-1.0, 0.0], Side::Upper)
            .unwrap();
        assert!((m - 0.6).abs() < 1e-15);
        let p = CondProbs::new(vec![0.8, 0.3]).unwrap();
        let m = population_moment(&p, &x, &[1.0, 0.0], &[-1.0, 0.0], Side::Upper).unwrap();
        assert!((m - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_observation_membership() {
        let p = CondProbs::new(vec![0.8]).unwrap();
        let x = x1(&[[1.0, 0.0]]);
        let inst = InstrumentSets::common(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert!(in_identified_set(&p, &x, &[1.0, 0.0], &inst).unwrap());
        assert!(!in_identified_set(&p, &x, &[-1.0, 0.0], &inst).unwrap());
        let m = population_moment(&p, &x, &[-1.0, 0.0], &[1.0, 0.0], Side::Lower).unwrap();
        assert!((m + 0.6).abs() < 1e-15);

        let v = violation_q(&p, &x, &[-1.0, 0.0], &inst).unwrap();
        assert!((v.q_l - 0.6).abs() < 1e-15);
        assert_eq!(v.q_u, 0.0);
        assert_eq!(v.q_total, v.q_l);
        assert_eq!(violation_q(&p, &x, &[1.0, 0.0], &inst).unwrap().q_total, 0.0);
        let scaled = violation_q(&p, &x, &[-3.5, 0.0], &inst).unwrap();
        assert_eq!(scaled, v);
    }

    #[test]
    fn centered_probabilities_admit_everything() {
        let x = x1(&[[0.3, 1.0], [-1.2, 0.5], [0.9, -0.4]]);
        let grid = ThetaGrid::linspace(1, -3.0, 3.0, 61).unwrap();
        let members = identified_set_2d(&CondProbs::uniform_half(3), &x, &grid).unwrap();
        assert!(members.iter().all(|&m| m));
    }

    #[test]
    fn threshold_formula() {
        let c = power_threshold(100, 2.0, 2.2e-16, 0.9).unwrap();
        let expected = (2.0 * (1.04f64).powf(-0.5) + (2.0 * 10f64.ln()).sqrt()) / 10.0;
        assert!((c - expected).abs() < 1e-14);
        assert!(power_threshold(100, 0.0, 1e-16, 1e-12).unwrap() < 1e-5);
        let mut prev = 0.0;
        for g in 1..100 {
            let c = power_threshold(50, 1.5, 1e-16, g as f64 / 100.0).unwrap();
            assert!(c > prev);
            prev = c;
        }
        assert!(power_threshold(50, 1.0, 1e-16, 1.0).is_err());
    }

    #[test]
    fn bounds_vanish_inside_identified_set() {
        let p = CondProbs::new(vec![0.8, 0.3]).unwrap();
        let x = x1(&[[1.0, 0.2], [-1.0, 0.4]]);
        let inst = build_instruments_2d(&x).unwrap();
        let b = [1.0, 0.0];
        assert!(in_identified_set(&p, &x, &b, &inst).unwrap());
        let pb = power_lower_bound(&p, &x, &b, &inst, 1.0, 1e-16).unwrap();
        assert_eq!((pb.cor1, pb.cor2), (0.0, 0.0));
    }

    #[test]
    fn grid_validation() {
        assert!(ThetaGrid::new(1, vec![]).is_err());
        assert!(ThetaGrid::new(1, vec![0.0, 0.0]).is_err());
        assert!(ThetaGrid::new(2, vec![0.0]).is_err());
        let g = ThetaGrid::around(1, 1.0).unwrap();
        assert_eq!(g.len(), 601);
        assert_eq!(g.thetas()[300], 1.0);
        assert_eq!(g.thetas()[0], -2.0);
        assert_eq!(g.thetas()[600], 4.0);
    }
}
