//! Shared fixtures for the benchmarks.

use maxscore::montecarlo::{Design, DgpSpec};
use maxscore::{Covariates, Sample};

/// A design-1 sample of size `n` with `β = (1, 1)`.
pub fn logistic_sample(n: usize, seed: u64) -> Sample {
    let dgp = DgpSpec::new(Design::Logistic, 1.0, n, seed).expect("valid design");
    let x = dgp.covariates();
    let y = dgp.outcomes(&x, 0);
    Sample::new(y, x).expect("binary outcomes")
}

/// `n` rows of `k` covariates in general position.
pub fn generic_covariates(n: usize, k: usize, seed: u64) -> Covariates {
    let x = maxscore::montecarlo::gen_x(n * k, seed);
    let flat: Vec<f64> = x.rows().map(|r| r[0]).collect();
    let rows: Vec<Vec<f64>> = flat.chunks(k).map(<[f64]>::to_vec).collect();
    Covariates::from_rows(&rows).expect("finite draws")
}
