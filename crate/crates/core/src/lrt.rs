//! Likelihood ratio benchmarks.
//!
//! Conditional on the covariates, a null or alternative hypothesis that pins
//! down every `P(Y_i = 1 | X)` is a product of Bernoulli laws, so the
//! Neyman–Pearson test only needs the two probability vectors. For the
//! composite null `β = b` the least favorable null vector `p̄` keeps
//! `p̄_i = p̃_i` wherever the alternative probability is compatible with the
//! sign of `X_i·b`, and sets `p̄_i = 1/2` otherwise.
//!
//! Only indices with `p̄_i ≠ p̃_i` carry information; every distribution
//! computation below runs over those `n̄` indices alone.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CondProbs, Covariates};
use crate::error::{check_dim, Error, Result};
use crate::rng::substream;
use crate::teststat::validate_alpha;

/// Log-ratio values closer than this are one atom of the null law.
pub const TIE_TOL: f64 = 1e-12;

/// Largest number of contributing indices handled by exact convolution.
pub const MAX_EXACT_NBAR: usize = 20;

/// Least favorable null probabilities against the alternative `p_alt`:
/// `1/2` where `X_i·b (p̃_i − 1/2) < 0` or `X_i·b = 0` with `p̃_i < 1/2`,
/// and `p̃_i` otherwise.
pub fn least_favorable(p_alt: &CondProbs, x: &Covariates, b: &[f64]) -> Result<CondProbs> {
    check_dim(x.n(), p_alt.len())?;
    check_dim(x.k(), b.len())?;
    let p = p_alt
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &pt)| {
            let xb = x.dot(i, b);
            if xb * (pt - 0.5) < 0.0 || (xb == 0.0 && pt < 0.5) {
                0.5
            } else {
                pt
            }
        })
        .collect();
    CondProbs::new(p)
}

/// How the null law of the log likelihood ratio is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullDist {
    /// Exact convolution over the contributing indices (`n̄ ≤ 20`).
    Exact,
    MonteCarlo { draws: usize, seed: u64 },
}

impl NullDist {
    /// Exact when `n̄` allows it, Monte Carlo otherwise.
    pub fn auto(n_bar: usize, draws: usize, seed: u64) -> Self {
        if n_bar <= MAX_EXACT_NBAR {
            NullDist::Exact
        } else {
            NullDist::MonteCarlo { draws, seed }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtSpec {
    pub p_null: CondProbs,
    pub p_alt: CondProbs,
    pub alpha: f64,
    pub randomized: bool,
    pub null_dist: NullDist,
}

impl LrtSpec {
    pub fn new(
        p_null: CondProbs,
        p_alt: CondProbs,
        alpha: f64,
        randomized: bool,
        null_dist: NullDist,
    ) -> Result<Self> {
        check_dim(p_alt.len(), p_null.len())?;
        validate_alpha(alpha)?;
        if let NullDist::MonteCarlo { draws: 0, .. } = null_dist {
            return Err(Error::validation("number of draws must be at least 1"));
        }
        Ok(Self {
            p_null,
            p_alt,
            alpha,
            randomized,
            null_dist,
        })
    }

    pub fn n(&self) -> usize {
        self.p_null.len()
    }

    /// Indices with `p̄_i ≠ p̃_i`.
    pub fn contributing(&self) -> Vec<usize> {
        let (a, b) = (self.p_null.as_slice(), self.p_alt.as_slice());
        (0..a.len()).filter(|&i| a[i] != b[i]).collect()
    }

    fn terms(&self) -> Vec<Term> {
        let (pn, pa) = (self.p_null.as_slice(), self.p_alt.as_slice());
        self.contributing()
            .into_iter()
            .map(|i| Term {
                index: i,
                if_one: (pa[i] / pn[i]).ln(),
                if_zero: ((1.0 - pa[i]) / (1.0 - pn[i])).ln(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Term {
    index: usize,
    if_one: f64,
    if_zero: f64,
}

fn sum_terms(terms: &[Term], mut outcome: impl FnMut(usize) -> bool) -> f64 {
    let total = terms.iter().fold(0.0, |acc, t| {
        acc + if outcome(t.index) { t.if_one } else { t.if_zero }
    });
    // +∞ and −∞ together: the outcome is impossible under both laws
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// Log likelihood ratio `Λ(y) = Σ_i [y_i log(p̃_i/p̄_i) + (1−y_i) log((1−p̃_i)/(1−p̄_i))]`
/// over contributing indices.
///
/// `+∞` means `y` is impossible under the null (always reject), `−∞` that it
/// is impossible under the alternative (never reject).
pub fn lr_statistic(y: &[u8], spec: &LrtSpec) -> Result<f64> {
    check_dim(spec.n(), y.len())?;
    Ok(sum_terms(&spec.terms(), |i| y[i] == 1))
}

/// Discrete law of `Λ` as ascending `(value, probability)` atoms.
type Atoms = Vec<(f64, f64)>;

fn merge_atoms(mut atoms: Atoms) -> Atoms {
    atoms.retain(|&(_, p)| p > 0.0);
    for a in &mut atoms {
        if a.0.is_nan() {
            a.0 = f64::NEG_INFINITY;
        }
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Atoms = Vec::with_capacity(atoms.len());
    let mut head = f64::NAN;
    for (v, p) in atoms {
        match out.last_mut() {
            Some(last) if v == head || v - head <= TIE_TOL => last.1 += p,
            _ => {
                head = v;
                out.push((v, p));
            }
        }
    }
    out
}

/// Exact law of `Λ` when `Y_i ~ Bernoulli(weights_i)` independently.
fn exact_atoms(terms: &[Term], weights: &[f64]) -> Atoms {
    let mut dist: Atoms = vec![(0.0, 1.0)];
    for t in terms {
        let w = weights[t.index];
        let mut next = Vec::with_capacity(dist.len() * 2);
        for &(v, p) in &dist {
            next.push((v + t.if_one, p * w));
            next.push((v + t.if_zero, p * (1.0 - w)));
        }
        dist = merge_atoms(next);
    }
    dist
}

fn sample_lambdas(terms: &[Term], weights: &[f64], draws: usize, seed: u64) -> Vec<f64> {
    (0..draws)
        .into_par_iter()
        .map(|j| {
            let mut rng = substream(seed, j as u64);
            let ones: Vec<bool> = terms
                .iter()
                .map(|t| rng.random::<f64>() < weights[t.index])
                .collect();
            let mut k = 0;
            sum_terms(terms, |_| {
                let o = ones[k];
                k += 1;
                o
            })
        })
        .collect()
}

fn empirical_atoms(values: &[f64]) -> Atoms {
    let w = 1.0 / values.len() as f64;
    merge_atoms(values.iter().map(|&v| (v, w)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Cutoff on the log likelihood ratio.
    pub k_log: f64,
    /// Rejection probability on `Λ = k`; 0 for the non-randomized test.
    pub xi: f64,
    /// Null rejection probability `P(Λ > k) + ξ·P(Λ = k)` under `p̄`.
    pub size: f64,
    pub n_bar: usize,
    pub exact: bool,
}

fn null_atoms(spec: &LrtSpec, terms: &[Term]) -> Result<(Atoms, bool)> {
    match spec.null_dist {
        NullDist::Exact => {
            if terms.len() > MAX_EXACT_NBAR {
                return Err(Error::TooLarge {
                    what: "contributing indices for exact null law",
                    got: terms.len(),
                    limit: MAX_EXACT_NBAR,
                });
            }
            Ok((exact_atoms(terms, spec.p_null.as_slice()), true))
        }
        NullDist::MonteCarlo { draws, seed } => {
            let values = sample_lambdas(terms, spec.p_null.as_slice(), draws, seed);
            Ok((empirical_atoms(&values), false))
        }
    }
}

/// Chooses `(k, ξ)`.
///
/// Randomized: `P(Λ > k) + ξ·P(Λ = k) = α`. Non-randomized: the smallest
/// `k` with `P(Λ > k) ≤ α`, and `ξ = 0`. `Λ ≡ 0` gives `k = 0`.
pub fn calibrate(spec: &LrtSpec) -> Result<Calibration> {
    let terms = spec.terms();
    let (atoms, exact) = null_atoms(spec, &terms)?;
    Ok(calibrate_atoms(&atoms, spec.alpha, spec.randomized, terms.len(), exact))
}

fn calibrate_atoms(atoms: &Atoms, alpha: f64, randomized: bool, n_bar: usize, exact: bool) -> Calibration {
    // tail[j] = P(Λ > atoms[j]), summed from the top
    let mut tail = vec![0.0; atoms.len()];
    let mut acc = 0.0;
    for j in (0..atoms.len()).rev() {
        tail[j] = acc;
        acc += atoms[j].1;
    }
    let j = (0..atoms.len())
        .find(|&j| tail[j] <= alpha)
        .expect("the largest atom has an empty upper tail");
    let (k_log, at_k) = atoms[j];
    let xi = if randomized {
        ((alpha - tail[j]) / at_k).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Calibration {
        k_log,
        xi,
        size: tail[j] + xi * at_k,
        n_bar,
        exact,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Reject,
    Accept,
    /// `Λ = k` under the randomized test; resolved by the auxiliary uniform.
    RandomizedReject,
    RandomizedAccept,
}

impl Verdict {
    pub fn rejects(self) -> bool {
        matches!(self, Verdict::Reject | Verdict::RandomizedReject)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtDecision {
    pub statistic: f64,
    pub verdict: Verdict,
}

fn classify(value: f64, k: f64) -> std::cmp::Ordering {
    use std::cmp::Ordering::*;
    if value == k || (value - k).abs() <= TIE_TOL {
        Equal
    } else if value > k {
        Greater
    } else {
        Less
    }
}

/// Decision for observed outcomes `y`; ties are broken with a uniform
/// drawn from `aux_seed`.
pub fn lrt_reject(y: &[u8], spec: &LrtSpec, cal: &Calibration, aux_seed: u64) -> Result<LrtDecision> {
    let statistic = lr_statistic(y, spec)?;
    let verdict = match classify(statistic, cal.k_log) {
        std::cmp::Ordering::Greater => Verdict::Reject,
        std::cmp::Ordering::Less => Verdict::Accept,
        std::cmp::Ordering::Equal if spec.randomized => {
            let u: f64 = substream(aux_seed, 0).random();
            if u < cal.xi {
                Verdict::RandomizedReject
            } else {
                Verdict::RandomizedAccept
            }
        }
        std::cmp::Ordering::Equal => Verdict::Accept,
    };
    Ok(LrtDecision { statistic, verdict })
}

fn rejection_probability(atoms: &Atoms, cal: &Calibration) -> f64 {
    atoms.iter().fold(0.0, |acc, &(v, p)| {
        acc + match classify(v, cal.k_log) {
            std::cmp::Ordering::Greater => p,
            std::cmp::Ordering::Equal => cal.xi * p,
            std::cmp::Ordering::Less => 0.0,
        }
    })
}

/// Rejection probability when the outcomes follow `p_true`.
///
/// Exact over the contributing indices when `n̄ ≤ 20`; otherwise the mean
/// of `reps` simulated decisions (ties counted as `ξ`).
pub fn lrt_power(
    p_true: &CondProbs,
    spec: &LrtSpec,
    cal: &Calibration,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    check_dim(spec.n(), p_true.len())?;
    let terms = spec.terms();
    if terms.len() <= MAX_EXACT_NBAR {
        return Ok(rejection_probability(&exact_atoms(&terms, p_true.as_slice()), cal));
    }
    if reps == 0 {
        return Err(Error::validation("number of replications must be at least 1"));
    }
    let values = sample_lambdas(&terms, p_true.as_slice(), reps, seed);
    let total = values.iter().fold(0.0, |acc, &v| {
        acc + match classify(v, cal.k_log) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Equal => cal.xi,
            std::cmp::Ordering::Less => 0.0,
        }
    });
    Ok(total / reps as f64)
}

/// A calibrated test bundled with its precomputed log-ratio terms, for
/// evaluating many outcome vectors.
#[derive(Debug, Clone)]
pub struct CalibratedLrt {
    terms: Vec<Term>,
    pub calibration: Calibration,
}

impl CalibratedLrt {
    pub fn new(spec: &LrtSpec) -> Result<Self> {
        Ok(Self {
            terms: spec.terms(),
            calibration: calibrate(spec)?,
        })
    }

    pub fn statistic(&self, y: &[u8]) -> f64 {
        sum_terms(&self.terms, |i| y[i] == 1)
    }

    /// Non-randomized decision `Λ(y) > k`.
    pub fn rejects(&self, y: &[u8]) -> bool {
        classify(self.statistic(y), self.calibration.k_log) == std::cmp::Ordering::Greater
    }
}
