//! Sample moments, the studentized test statistic `T_n(b)`, its Rademacher
//! reference statistic `T*_n(b)` and the critical value `q_{1-α}`.
//!
//! Given the covariates, `b` and the instrument directions, every moment is a
//! signed count over a fixed index set:
//!
//! ```text
//! upper:  S_u(v) = {i : X_i·b ≥ 0, X_i·v < 0},  m̂_u = Σ_{S_u} (2Y_i - 1) / n
//! lower:  S_l(v) = {i : X_i·b ≤ 0, X_i·v > 0},  m̂_l = Σ_{S_l} (1 - 2Y_i) / n
//! ```
//!
//! The statistic depends on the outcomes only through the set of indices with
//! `2Y_i - 1 = +1`, which is also how a Rademacher draw is represented. The
//! sums are integers, so `T_n` and `T*_n` do not depend on evaluation order.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitset::IndexSet;
use crate::data::{sign_pattern, Covariates, Sample, SignPattern};
use crate::error::{check_dim, Error, Result};
use crate::instruments::InstrumentSets;
use crate::rng::substream;

/// Default denominator floor: the double-precision machine epsilon.
pub const DEFAULT_EPSILON: f64 = 2.220446049250313e-16;

/// Largest `n` for which the full `2^n` sign enumeration is attempted.
pub const MAX_EXACT_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub alpha: f64,
    pub epsilon: f64,
    /// Number of Rademacher draws `B` for the critical value.
    pub draws: usize,
    pub seed: u64,
}

impl TestConfig {
    pub fn new(alpha: f64, epsilon: f64, draws: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            alpha,
            epsilon,
            draws,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::validation("epsilon must be positive"));
        }
        if self.draws == 0 {
            return Err(Error::validation("number of draws must be at least 1"));
        }
        Ok(())
    }
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.10,
            epsilon: DEFAULT_EPSILON,
            draws: 500,
            seed: 0,
        }
    }
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::validation("alpha must be in (0,1)"))
    }
}

/// Per-direction diagnostics retained by [`t_statistic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub side: Side,
    pub v: Vec<f64>,
    pub m_hat: f64,
    pub sigma_hat: f64,
    pub studentized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub t_stat: f64,
    pub argmax_side: Option<Side>,
    pub argmax_v: Option<Vec<f64>>,
    pub diagnostics: Vec<MomentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub t_stat: f64,
    pub q: f64,
    pub reject: bool,
    pub argmax_side: Option<Side>,
    pub argmax_v: Option<Vec<f64>>,
    pub diagnostics: Vec<MomentRecord>,
}

/// Studentized violation `√n · (−m) / max{√(s − m²), ε}`, taken as 0 when
/// `m = 0`. `s` is the indicator mass of the moment.
pub fn studentized(m: f64, mass: f64, n: usize, epsilon: f64) -> f64 {
    if m == 0.0 {
        return 0.0;
    }
    let sd = (mass - m * m).max(0.0).sqrt();
    (n as f64).sqrt() * (-m) / sd.max(epsilon)
}

/// `max{0, √n · (−t) / max{ε, √(s − t²)}}`; weakly decreasing in `t`.
pub fn violation_ratio(t: f64, s: f64, n: usize, epsilon: f64) -> f64 {
    studentized(t, s, n, epsilon).max(0.0)
}

/// `m̂_c(b, v)` evaluated directly from the data.
pub fn moment(sample: &Sample, b: &[f64], v: &[f64], side: Side) -> Result<f64> {
    let (sum, _) = direct_sum(sample, b, v, side)?;
    Ok(sum as f64 / sample.n() as f64)
}

/// `σ̂_c(b, v) = √max{0, E_n[indicator] − m̂²}`.
pub fn sigma(sample: &Sample, b: &[f64], v: &[f64], side: Side) -> Result<f64> {
    let (sum, count) = direct_sum(sample, b, v, side)?;
    let n = sample.n() as f64;
    let m = sum as f64 / n;
    Ok((count as f64 / n - m * m).max(0.0).sqrt())
}

fn direct_sum(sample: &Sample, b: &[f64], v: &[f64], side: Side) -> Result<(i64, usize)> {
    let x = sample.x();
    check_dim(x.k(), b.len())?;
    check_dim(x.k(), v.len())?;
    let mut sum = 0i64;
    let mut count = 0usize;
    for i in 0..x.n() {
        let (xb, xv) = (x.dot(i, b), x.dot(i, v));
        let selected = match side {
            Side::Upper => xb >= 0.0 && xv < 0.0,
            Side::Lower => xb <= 0.0 && xv > 0.0,
        };
        if selected {
            let sign = 2 * i64::from(sample.y()[i]) - 1;
            sum += match side {
                Side::Upper => sign,
                Side::Lower => -sign,
            };
            count += 1;
        }
    }
    Ok((sum, count))
}

/// Sign sets of the instrument directions, independent of `b`: for upper
/// directions `{i : X_i·v < 0}`, for lower directions `{i : X_i·v > 0}`.
#[derive(Debug, Clone)]
pub struct InstrumentIndex {
    n: usize,
    upper: Vec<IndexSet>,
    lower: Vec<IndexSet>,
}

impl InstrumentIndex {
    pub fn new(x: &Covariates, inst: &InstrumentSets) -> Result<Self> {
        for v in inst.upper().iter().chain(inst.lower()) {
            check_dim(x.k(), v.len())?;
        }
        let n = x.n();
        let upper = inst
            .upper()
            .iter()
            .map(|v| IndexSet::from_fn(n, |i| x.dot(i, v) < 0.0))
            .collect();
        let lower = inst
            .lower()
            .iter()
            .map(|v| IndexSet::from_fn(n, |i| x.dot(i, v) > 0.0))
            .collect();
        Ok(Self { n, upper, lower })
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// The moment index sets `S_u(v)`, `S_l(v)` for one `b`.
#[derive(Debug, Clone)]
pub struct MomentSets {
    n: usize,
    upper: Vec<IndexSet>,
    lower: Vec<IndexSet>,
}

impl MomentSets {
    pub fn new(x: &Covariates, b: &[f64], inst: &InstrumentSets) -> Result<Self> {
        let pattern = sign_pattern(x, b)?;
        Ok(Self::from_pattern(&InstrumentIndex::new(x, inst)?, &pattern))
    }

    /// Everything here depends on `b` only through its sign pattern.
    pub fn from_pattern(index: &InstrumentIndex, pattern: &SignPattern) -> Self {
        let n = index.n;
        let s = pattern.signs();
        let nonneg = IndexSet::from_fn(n, |i| s[i] >= 0);
        let nonpos = IndexSet::from_fn(n, |i| s[i] <= 0);
        Self {
            n,
            upper: index.upper.iter().map(|v| nonneg.intersection(v)).collect(),
            lower: index.lower.iter().map(|v| nonpos.intersection(v)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn upper(&self) -> &[IndexSet] {
        &self.upper
    }

    pub fn lower(&self) -> &[IndexSet] {
        &self.lower
    }

    /// `T(b)` for outcomes whose `+1` signs sit on `positives`.
    pub fn statistic(&self, positives: &IndexSet, epsilon: f64) -> f64 {
        let mut best = 0.0f64;
        for (side, sets) in [(Side::Upper, &self.upper), (Side::Lower, &self.lower)] {
            for set in sets {
                let (m, mass) = self.moment_of(set, positives, side);
                best = best.max(studentized(m, mass, self.n, epsilon));
            }
        }
        best
    }

    fn moment_of(&self, set: &IndexSet, positives: &IndexSet, side: Side) -> (f64, f64) {
        let count = set.count() as i64;
        let pos = set.intersection_count(positives) as i64;
        let sum = match side {
            Side::Upper => 2 * pos - count,
            Side::Lower => count - 2 * pos,
        };
        let n = self.n as f64;
        (sum as f64 / n, count as f64 / n)
    }

    fn detailed(&self, positives: &IndexSet, inst: &InstrumentSets, epsilon: f64) -> Statistic {
        let mut diagnostics = Vec::with_capacity(self.upper.len() + self.lower.len());
        let mut best = 0.0f64;
        let mut arg: Option<(Side, usize)> = None;
        for (side, sets, dirs) in [
            (Side::Upper, &self.upper, inst.upper()),
            (Side::Lower, &self.lower, inst.lower()),
        ] {
            for (j, set) in sets.iter().enumerate() {
                let (m, mass) = self.moment_of(set, positives, side);
                let value = studentized(m, mass, self.n, epsilon);
                if value > best {
                    best = value;
                    arg = Some((side, j));
                }
                diagnostics.push(MomentRecord {
                    side,
                    v: dirs[j].clone(),
                    m_hat: m,
                    sigma_hat: (mass - m * m).max(0.0).sqrt(),
                    studentized: value,
                });
            }
        }
        let argmax_v = arg.map(|(side, j)| match side {
            Side::Upper => inst.upper()[j].clone(),
            Side::Lower => inst.lower()[j].clone(),
        });
        Statistic {
            t_stat: best,
            argmax_side: arg.map(|(s, _)| s),
            argmax_v,
            diagnostics,
        }
    }
}

/// Indices `i` with `2Y_i − 1 = +1`.
pub fn positives_of(y: &[u8]) -> IndexSet {
    IndexSet::from_fn(y.len(), |i| y[i] == 1)
}

/// `T_n(b) = max{0, T̂_u(b, V_u), T̂_l(b, V_l)}` together with the maximizing
/// direction and per-direction diagnostics.
pub fn t_statistic(
    sample: &Sample,
    b: &[f64],
    inst: &InstrumentSets,
    epsilon: f64,
) -> Result<Statistic> {
    let sets = MomentSets::new(sample.x(), b, inst)?;
    Ok(sets.detailed(&positives_of(sample.y()), inst, epsilon))
}

/// A collection of Rademacher sign vectors, each stored as the set of
/// indices drawn as `+1`.
#[derive(Debug, Clone)]
pub struct RademacherDraws {
    n: usize,
    draws: Vec<IndexSet>,
}

impl RademacherDraws {
    /// `count` independent draws; draw `j` comes from stream `j` of `seed`.
    pub fn generate(n: usize, count: usize, seed: u64) -> Self {
        let words = n.div_ceil(64);
        let draws = (0..count)
            .into_par_iter()
            .map(|j| {
                let mut rng = substream(seed, j as u64);
                let raw = (0..words).map(|_| rng.next_u64()).collect();
                IndexSet::from_words(n, raw)
            })
            .collect();
        Self { n, draws }
    }

    /// Every one of the `2^n` sign vectors, in mask order.
    pub fn enumerate_all(n: usize) -> Result<Self> {
        if n > MAX_EXACT_N {
            return Err(Error::TooLarge {
                what: "sample size for sign enumeration",
                got: n,
                limit: MAX_EXACT_N,
            });
        }
        let draws = (0u64..1 << n)
            .map(|mask| IndexSet::from_fn(n, |i| mask >> i & 1 == 1))
            .collect();
        Ok(Self { n, draws })
    }

    pub fn from_sets(n: usize, draws: Vec<IndexSet>) -> Result<Self> {
        for d in &draws {
            check_dim(n, d.len())?;
        }
        Ok(Self { n, draws })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &[IndexSet] {
        &self.draws
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalValue {
    pub q: f64,
    /// `T*` for each draw, in draw order.
    pub draws: Vec<f64>,
}

/// 1-based rank `k = ⌈(1 − α) B⌉` of the order statistic used as `q`.
pub fn quantile_rank(alpha: f64, count: usize) -> usize {
    let target = (1.0 - alpha) * count as f64;
    // absorb the representation error of e.g. 0.9 * 500
    let k = (target - 1e-9).ceil().max(1.0) as usize;
    k.min(count)
}

/// `q` from a shared draw matrix: the `⌈(1 − α)B⌉`-th smallest `T*`.
pub fn critical_value(
    sets: &MomentSets,
    draws: &RademacherDraws,
    alpha: f64,
    epsilon: f64,
) -> Result<CriticalValue> {
    check_dim(sets.n(), draws.n())?;
    if draws.is_empty() {
        return Err(Error::validation("number of draws must be at least 1"));
    }
    let values: Vec<f64> = draws
        .draws()
        .par_iter()
        .map(|d| sets.statistic(d, epsilon))
        .collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let q = sorted[quantile_rank(alpha, sorted.len()) - 1];
    Ok(CriticalValue { q, draws: values })
}

/// Simulated critical value from `config.draws` seeded Rademacher draws.
pub fn simulate_quantile(
    x: &Covariates,
    b: &[f64],
    inst: &InstrumentSets,
    config: &TestConfig,
) -> Result<CriticalValue> {
    config.validate()?;
    let sets = MomentSets::new(x, b, inst)?;
    let draws = RademacherDraws::generate(x.n(), config.draws, config.seed);
    critical_value(&sets, &draws, config.alpha, config.epsilon)
}

/// Exact conditional `1 − α` quantile of `T*_n(b)` by enumerating all `2^n`
/// sign vectors: the smallest support point `c` with `P(T* ≤ c) ≥ 1 − α`.
///
/// Computed by a separate route from [`critical_value`] (direct dot products
/// per row, probability accumulation over the support) so that the two can
/// check each other.
pub fn exact_quantile(
    x: &Covariates,
    b: &[f64],
    inst: &InstrumentSets,
    alpha: f64,
    epsilon: f64,
) -> Result<f64> {
    validate_alpha(alpha)?;
    let n = x.n();
    if n > MAX_EXACT_N {
        return Err(Error::TooLarge {
            what: "sample size for exact quantile",
            got: n,
            limit: MAX_EXACT_N,
        });
    }
    check_dim(x.k(), b.len())?;
    let xb: Vec<f64> = (0..n).map(|i| x.dot(i, b)).collect();
    let mut lists: Vec<(Side, Vec<usize>)> = Vec::new();
    for v in inst.upper() {
        check_dim(x.k(), v.len())?;
        let idx = (0..n).filter(|&i| xb[i] >= 0.0 && x.dot(i, v) < 0.0).collect();
        lists.push((Side::Upper, idx));
    }
    for v in inst.lower() {
        check_dim(x.k(), v.len())?;
        let idx = (0..n).filter(|&i| xb[i] <= 0.0 && x.dot(i, v) > 0.0).collect();
        lists.push((Side::Lower, idx));
    }

    let total = 1u64 << n;
    let mut values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|mask| {
            let mut best = 0.0f64;
            for (side, idx) in &lists {
                let mut sum = 0i64;
                for &i in idx {
                    let s = if mask >> i & 1 == 1 { 1 } else { -1 };
                    sum += if *side == Side::Upper { s } else { -s };
                }
                let m = sum as f64 / n as f64;
                let mass = idx.len() as f64 / n as f64;
                best = best.max(studentized(m, mass, n, epsilon));
            }
            best
        })
        .collect();
    values.sort_by(f64::total_cmp);

    let need = (1.0 - alpha) * total as f64 - 1e-9;
    let mut cum = 0u64;
    let mut i = 0;
    while i < values.len() {
        let c = values[i];
        while i < values.len() && values[i] == c {
            cum += 1;
            i += 1;
        }
        if cum as f64 >= need {
            return Ok(c);
        }
    }
    Ok(*values.last().expect("at least one sign vector"))
}

/// Test of `H0: β = b` with a critical value from fresh seeded draws.
pub fn run_test(
    sample: &Sample,
    b: &[f64],
    inst: &InstrumentSets,
    config: &TestConfig,
) -> Result<TestOutcome> {
    config.validate()?;
    let draws = RademacherDraws::generate(sample.n(), config.draws, config.seed);
    run_test_with_draws(sample, b, inst, &draws, config.alpha, config.epsilon)
}

/// Test of `H0: β = b` against a caller-supplied draw matrix.
pub fn run_test_with_draws(
    sample: &Sample,
    b: &[f64],
    inst: &InstrumentSets,
    draws: &RademacherDraws,
    alpha: f64,
    epsilon: f64,
) -> Result<TestOutcome> {
    validate_alpha(alpha)?;
    let sets = MomentSets::new(sample.x(), b, inst)?;
    let stat = sets.detailed(&positives_of(sample.y()), inst, epsilon);
    let cv = critical_value(&sets, draws, alpha, epsilon)?;
    Ok(TestOutcome {
        t_stat: stat.t_stat,
        q: cv.q,
        reject: stat.t_stat > cv.q,
        argmax_side: stat.argmax_side,
        argmax_v: stat.argmax_v,
        diagnostics: stat.diagnostics,
    })
}
