//! Simulation designs and the experiment driver.
//!
//! Covariates are `X = (X_1, X_2)` with `X_1 ~ N(0, 1)`, `X_2 ~ N(1, 1)`
//! independent, drawn once per experiment. Outcomes are
//! `Y = 1{X·β + U ≥ 0}` with `β = (1, θ₀)` and a median-zero error `U`
//! whose law depends on the design. Every replication redraws `U` only,
//! so the identified set is the same across replications.

use std::io::Write;
use std::path::Path;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bitset::IndexSet;
use crate::data::{CondProbs, Covariates, ParamPoint};
use crate::error::{Error, Result};
use crate::inference::{group_by_pattern, identified_set_2d, ThetaGrid};
use crate::instruments::build_instruments_2d;
use crate::lrt::{CalibratedLrt, LrtSpec, NullDist};
use crate::rng::{derive_seed, substream};
use crate::teststat::{
    critical_value, positives_of, validate_alpha, InstrumentIndex, MomentSets, RademacherDraws,
    DEFAULT_EPSILON,
};

/// Degrees of freedom used by the Student t design unless overridden.
pub const DEFAULT_DF: u32 = 3;

/// Monte Carlo draws for the LRT null law when it cannot be computed exactly.
pub const DEFAULT_LRT_DRAWS: usize = 10_000;

/// Version tag written at the top of experiment CSV files.
pub const CSV_SCHEMA: &str = "maxscore-mc/1";

const LOGISTIC_SCALE: f64 = 0.551_328_895_421_792_1; // √3/π

const DOMAIN_X: u64 = 1;
const DOMAIN_U: u64 = 2;
const DOMAIN_RADEMACHER: u64 = 3;
const DOMAIN_LRT: u64 = 4;

/// Error distributions, each with median zero given `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Design {
    /// Logistic with unit variance.
    Logistic,
    /// Uniform on `[−√3, √3]`.
    Uniform,
    /// Student t scaled to unit variance.
    StudentT { df: u32 },
    /// `0.25(1 + 2Z² + Z⁴)·V`, `Z = X_1 + X_2`, `V` unit-variance logistic.
    Hetero,
}

impl Design {
    /// Designs by number 1–4; `df` is used by design 3 only.
    pub fn from_number(number: u8, df: u32) -> Result<Self> {
        let d = match number {
            1 => Design::Logistic,
            2 => Design::Uniform,
            3 => Design::StudentT { df },
            4 => Design::Hetero,
            _ => return Err(Error::validation("design must be one of 1, 2, 3, 4")),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn number(&self) -> u8 {
        match self {
            Design::Logistic => 1,
            Design::Uniform => 2,
            Design::StudentT { .. } => 3,
            Design::Hetero => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Design::StudentT { df } if *df <= 2 => {
                Err(Error::validation("degrees of freedom must exceed 2"))
            }
            _ => Ok(()),
        }
    }
}

fn t_scale(df: u32) -> f64 {
    ((df as f64 - 2.0) / df as f64).sqrt()
}

fn hetero_scale(x: &[f64]) -> f64 {
    let z = x[0] + x[1];
    let z2 = z * z;
    0.25 * (1.0 + 2.0 * z2 + z2 * z2)
}

fn logistic_cdf(t: f64) -> f64 {
    1.0 / (1.0 + (-t / LOGISTIC_SCALE).exp())
}

fn draw_logistic(rng: &mut impl Rng) -> f64 {
    let w: f64 = rng.sample(Open01);
    LOGISTIC_SCALE * (w / (1.0 - w)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub design: Design,
    /// True parameter is `β = (1, θ₀)`.
    pub theta0: f64,
    pub n: usize,
    /// Seeds the covariates and the errors.
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(design: Design, theta0: f64, n: usize, seed: u64) -> Result<Self> {
        design.validate()?;
        if n == 0 {
            return Err(Error::validation("n ≥ 1 required"));
        }
        if !theta0.is_finite() {
            return Err(Error::validation("theta0 must be finite"));
        }
        Ok(Self {
            design,
            theta0,
            n,
            seed,
        })
    }

    pub fn beta(&self) -> [f64; 2] {
        [1.0, self.theta0]
    }

    /// The covariate draw used by every replication.
    pub fn covariates(&self) -> Covariates {
        gen_x(self.n, derive_seed(self.seed, DOMAIN_X))
    }

    /// Errors for replication `r`.
    pub fn errors(&self, x: &Covariates, r: u64) -> Vec<f64> {
        draw_u(self.design, x, &mut substream(derive_seed(self.seed, DOMAIN_U), r))
    }

    /// Outcomes for replication `r`.
    pub fn outcomes(&self, x: &Covariates, r: u64) -> Vec<u8> {
        let beta = self.beta();
        self.errors(x, r)
            .iter()
            .enumerate()
            .map(|(i, u)| u8::from(x.dot(i, &beta) + u >= 0.0))
            .collect()
    }
}

/// `n` covariate rows: `(N(0, 1), N(1, 1))`, independent.
pub fn gen_x(n: usize, seed: u64) -> Covariates {
    let mut rng = substream(seed, 0);
    let rows: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [a, 1.0 + b]
        })
        .collect();
    Covariates::from_rows(&rows).expect("normal draws are finite")
}

/// Errors for every row of `x` under `design`.
pub fn gen_u(design: Design, x: &Covariates, seed: u64) -> Vec<f64> {
    draw_u(design, x, &mut substream(seed, 0))
}

fn draw_u(design: Design, x: &Covariates, rng: &mut impl Rng) -> Vec<f64> {
    match design {
        Design::Logistic => (0..x.n()).map(|_| draw_logistic(rng)).collect(),
        Design::Uniform => {
            let a = 3f64.sqrt();
            (0..x.n()).map(|_| rng.random_range(-a..a)).collect()
        }
        Design::StudentT { df } => {
            let t = StudentT::new(df as f64).expect("df > 2");
            let s = t_scale(df);
            (0..x.n()).map(|_| s * t.sample(rng)).collect()
        }
        Design::Hetero => x
            .rows()
            .map(|row| hetero_scale(row) * draw_logistic(rng))
            .collect(),
    }
}

/// `p_i = P(U_i ≥ −X_i·β | X)`, which equals `F_U(X_i·β)` for these
/// symmetric designs.
pub fn true_cond_probs(dgp: &DgpSpec, x: &Covariates) -> Result<CondProbs> {
    crate::error::check_dim(2, x.k())?;
    let beta = dgp.beta();
    let t_dist = match dgp.design {
        Design::StudentT { df } => Some(StudentsT::new(0.0, 1.0, df as f64).expect("df > 2")),
        _ => None,
    };
    let p = (0..x.n())
        .map(|i| {
            let t = x.dot(i, &beta);
            match dgp.design {
                Design::Logistic => logistic_cdf(t),
                Design::Uniform => ((t + 3f64.sqrt()) / 12f64.sqrt()).clamp(0.0, 1.0),
                Design::StudentT { df } => t_dist.as_ref().unwrap().cdf(t / t_scale(df)),
                Design::Hetero => logistic_cdf(t / hetero_scale(x.row(i))),
            }
        })
        .collect();
    CondProbs::new(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub alpha: f64,
    pub epsilon: f64,
    /// Rademacher draws per critical value.
    pub draws: usize,
    /// Seeds the Rademacher draws and the LRT null simulation.
    pub seed: u64,
    pub lrt_draws: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            alpha: 0.10,
            epsilon: DEFAULT_EPSILON,
            draws: 500,
            seed: 0,
            lrt_draws: DEFAULT_LRT_DRAWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McMetadata {
    pub design: Design,
    pub theta0: f64,
    pub n: usize,
    pub reps: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub draws: usize,
    pub lrt_draws: usize,
    pub dgp_seed: u64,
    pub test_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub grid: ThetaGrid,
    pub nonrej_proposed: Vec<f64>,
    pub nonrej_lrt: Vec<f64>,
    pub fsid_member: Vec<bool>,
    /// Critical value used at each grid point.
    pub q: Vec<f64>,
    pub metadata: McMetadata,
}

struct PatternPlan {
    sets: MomentSets,
    q: f64,
    lrt: CalibratedLrt,
}

/// Runs `reps` replications and records, at every grid point, how often
/// the proposed test and the non-randomized infeasible LRT fail to reject.
pub fn run_experiment(
    dgp: &DgpSpec,
    grid: &ThetaGrid,
    reps: usize,
    config: &McConfig,
) -> Result<McResult> {
    validate_alpha(config.alpha)?;
    if reps == 0 || config.draws == 0 || config.lrt_draws == 0 {
        return Err(Error::validation("reps and draw counts must be at least 1"));
    }
    let x = dgp.covariates();
    let p_true = true_cond_probs(dgp, &x)?;
    let inst = build_instruments_2d(&x)?;
    let index = InstrumentIndex::new(&x, &inst)?;
    let (patterns, assignment) = group_by_pattern(&x, grid)?;
    let rademacher = RademacherDraws::generate(x.n(), config.draws, derive_seed(config.seed, DOMAIN_RADEMACHER));
    let lrt_seed = derive_seed(config.seed, DOMAIN_LRT);

    let plans: Vec<PatternPlan> = patterns
        .par_iter()
        .enumerate()
        .map(|(id, pat)| {
            let sets = MomentSets::from_pattern(&index, pat);
            let q = critical_value(&sets, &rademacher, config.alpha, config.epsilon)?.q;
            let p_null = least_favorable_signs(&p_true, pat.signs())?;
            let n_bar = (0..x.n())
                .filter(|&i| p_null.as_slice()[i] != p_true.as_slice()[i])
                .count();
            let spec = LrtSpec::new(
                p_null,
                p_true.clone(),
                config.alpha,
                false,
                NullDist::auto(n_bar, config.lrt_draws, derive_seed(lrt_seed, id as u64)),
            )?;
            Ok(PatternPlan {
                sets,
                q,
                lrt: CalibratedLrt::new(&spec)?,
            })
        })
        .collect::<Result<_>>()?;

    let k = plans.len();
    let counts = (0..reps)
        .into_par_iter()
        .map(|r| {
            let y = dgp.outcomes(&x, r as u64);
            let pos: IndexSet = positives_of(&y);
            let mut c = vec![0u32; 2 * k];
            for (j, plan) in plans.iter().enumerate() {
                c[j] = u32::from(plan.sets.statistic(&pos, config.epsilon) <= plan.q);
                c[k + j] = u32::from(!plan.lrt.rejects(&y));
            }
            c
        })
        .reduce(
            || vec![0u32; 2 * k],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(s, t)| *s += t);
                a
            },
        );

    let freq = |c: u32| c as f64 / reps as f64;
    Ok(McResult {
        grid: grid.clone(),
        nonrej_proposed: assignment.iter().map(|&id| freq(counts[id])).collect(),
        nonrej_lrt: assignment.iter().map(|&id| freq(counts[k + id])).collect(),
        fsid_member: identified_set_2d(&p_true, &x, grid)?,
        q: assignment.iter().map(|&id| plans[id].q).collect(),
        metadata: McMetadata {
            design: dgp.design,
            theta0: dgp.theta0,
            n: dgp.n,
            reps,
            alpha: config.alpha,
            epsilon: config.epsilon,
            draws: config.draws,
            lrt_draws: config.lrt_draws,
            dgp_seed: dgp.seed,
            test_seed: config.seed,
        },
    })
}

/// Least favorable null probabilities given the signs of `X_i·b`.
fn least_favorable_signs(p_alt: &CondProbs, signs: &[i8]) -> Result<CondProbs> {
    let p = p_alt
        .as_slice()
        .iter()
        .zip(signs)
        .map(|(&pt, &s)| {
            if f64::from(s) * (pt - 0.5) < 0.0 || (s == 0 && pt < 0.5) {
                0.5
            } else {
                pt
            }
        })
        .collect();
    CondProbs::new(p)
}

impl McResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# schema: {CSV_SCHEMA}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "theta", "nonrej_proposed", "nonrej_lrt", "fsid_member"])?;
        let s = self.grid.sign().to_string();
        for (j, theta) in self.grid.thetas().iter().enumerate() {
            w.write_record([
                s.clone(),
                theta.to_string(),
                self.nonrej_proposed[j].to_string(),
                self.nonrej_lrt[j].to_string(),
                u8::from(self.fsid_member[j]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Grid parameter vectors, for recomputing per-point quantities.
    pub fn params(&self) -> Result<Vec<ParamPoint>> {
        crate::inference::grid_params(&self.grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn var(v: &[f64]) -> f64 {
        let m = mean(v);
        v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() - 1) as f64
    }

    fn median(v: &[f64]) -> f64 {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    }

    #[test]
    fn covariate_moments() {
        let n = 1_000_000;
        let x = gen_x(n, 11);
        let c1: Vec<f64> = x.rows().map(|r| r[0]).collect();
        let c2: Vec<f64> = x.rows().map(|r| r[1]).collect();
        let tol = 4.0 / (n as f64).sqrt();
        assert!(mean(&c1).abs() < tol);
        assert!((mean(&c2) - 1.0).abs() < tol);
        let (m1, m2) = (mean(&c1), mean(&c2));
        let cov = c1.iter().zip(&c2).map(|(a, b)| (a - m1) * (b - m2)).sum::<f64>() / n as f64;
        assert!(cov.abs() < tol);
        assert_eq!(gen_x(5, 3), gen_x(5, 3));
    }

    #[test]
    fn error_medians_and_variances() {
        let n = 1_000_000;
        let x = gen_x(n, 5);
        let tol = 4.0 / (n as f64).sqrt();
        for design in [
            Design::Logistic,
            Design::Uniform,
            Design::StudentT { df: DEFAULT_DF },
            Design::Hetero,
        ] {
            let u = gen_u(design, &x, 9);
            // median within 4/√n on the probability scale
            let below = u.iter().filter(|&&a| a < 0.0).count() as f64 / n as f64;
            assert!((below - 0.5).abs() < tol, "{design:?}");
            assert!(median(&u).abs() < 0.02, "{design:?}");
        }
        let u = gen_u(Design::Uniform, &x, 1);
        assert!((var(&u) - 1.0).abs() < 0.01);
        let u = gen_u(Design::Logistic, &x, 1);
        assert!((var(&u) - 1.0).abs() < 0.02);
        let x0 = Covariates::from_rows(&vec![[0.0, 0.0]; 200_000]).unwrap();
        let u = gen_u(Design::Hetero, &x0, 2);
        assert!((var(&u) - 0.0625).abs() < 0.002);
    }

    #[test]
    fn conditional_probabilities() {
        let x = Covariates::from_rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [-2.0, 0.0]]).unwrap();
        for design in [
            Design::Logistic,
            Design::Uniform,
            Design::StudentT { df: 5 },
            Design::Hetero,
        ] {
            let dgp = DgpSpec::new(design, 1.0, 4, 0).unwrap();
            let p = true_cond_probs(&dgp, &x).unwrap();
            assert_eq!(p.as_slice()[0], 0.5);
            assert!(p.as_slice()[1] > 0.5);
        }
        let dgp = DgpSpec::new(Design::Logistic, 1.0, 4, 0).unwrap();
        let p = true_cond_probs(&dgp, &x).unwrap();
        let want = 1.0 / (1.0 + (-std::f64::consts::PI / 3f64.sqrt()).exp());
        assert!((p.as_slice()[1] - want).abs() < 1e-15);
        let dgp = DgpSpec::new(Design::Uniform, 1.0, 4, 0).unwrap();
        let p = true_cond_probs(&dgp, &x).unwrap();
        assert_eq!((p.as_slice()[2], p.as_slice()[3]), (1.0, 0.0));
    }

    #[test]
    fn simulated_outcomes_match_probabilities() {
        let dgp = DgpSpec::new(Design::Hetero, 1.0, 5, 3).unwrap();
        let x = dgp.covariates();
        let p = true_cond_probs(&dgp, &x).unwrap();
        let reps = 100_000;
        let mut ones = [0usize; 5];
        for r in 0..reps {
            for (i, y) in dgp.outcomes(&x, r).into_iter().enumerate() {
                ones[i] += y as usize;
            }
        }
        for i in 0..5 {
            let f = ones[i] as f64 / reps as f64;
            let pi = p.as_slice()[i];
            assert!((f - pi).abs() <= 4.0 * (pi * (1.0 - pi) / reps as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn df_must_exceed_two() {
        assert!(Design::from_number(3, 2).is_err());
        assert!(Design::from_number(5, 3).is_err());
        assert_eq!(Design::from_number(3, 4).unwrap(), Design::StudentT { df: 4 });
    }

    #[test]
    fn smoke_run() {
        let dgp = DgpSpec::new(Design::Logistic, 1.0, 30, 1).unwrap();
        let grid = ThetaGrid::linspace(1, -1.0, 3.0, 21).unwrap();
        let config = McConfig {
            draws: 50,
            lrt_draws: 200,
            ..McConfig::default()
        };
        let res = run_experiment(&dgp, &grid, 1, &config).unwrap();
        assert_eq!(res.nonrej_proposed.len(), 21);
        assert!(res
            .nonrej_proposed
            .iter()
            .chain(&res.nonrej_lrt)
            .all(|&f| f == 0.0 || f == 1.0));
        assert!(res.fsid_member[10]);
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# schema: maxscore-mc/1");
        assert_eq!(lines[1], "s,theta,nonrej_proposed,nonrej_lrt,fsid_member");
        assert_eq!(lines.len(), 23);
    }
}
