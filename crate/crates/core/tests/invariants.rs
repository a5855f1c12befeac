use std::collections::BTreeSet;

use maxscore::inference::{
    identified_set_2d, in_identified_set, invert_test, violation_q, DrawMode,
};
use maxscore::instruments::strict_pattern;
use maxscore::lrt::{calibrate, least_favorable, lrt_reject, LrtSpec, NullDist};
use maxscore::montecarlo::{run_experiment, true_cond_probs, Design, DgpSpec, McConfig};
use maxscore::teststat::{critical_value, MomentSets, RademacherDraws};
use maxscore::{
    build_instruments_2d, enumerate_cells, CondProbs, Covariates, InstrumentSets, Sample,
    TestConfig, ThetaGrid,
};
use proptest::prelude::*;

fn rows_strategy(n: std::ops::RangeInclusive<usize>, k: usize) -> impl Strategy<Value = Covariates> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, k), n).prop_filter_map(
        "rows bounded away from zero",
        |rows| {
            rows.iter()
                .all(|r| r.iter().any(|v| v.abs() > 1e-3))
                .then(|| Covariates::from_rows(&rows).unwrap())
        },
    )
}

/// Probabilities generated by a parameter `truth`, with some exact halves.
fn model_probs(x: &Covariates, truth: &[f64], u: &[f64]) -> CondProbs {
    let p = (0..x.n())
        .map(|i| {
            let xb = x.dot(i, truth);
            let r = u[i % u.len()];
            if r < 0.2 || xb == 0.0 {
                0.5
            } else if xb > 0.0 {
                0.5 + r / 2.0
            } else {
                r / 2.0
            }
        })
        .collect();
    CondProbs::new(p).unwrap()
}

fn indicator_patterns(x: &Covariates, vs: &[Vec<f64>], upper: bool) -> BTreeSet<Vec<bool>> {
    vs.iter()
        .map(|v| {
            (0..x.n())
                .map(|i| {
                    let d = x.dot(i, v);
                    if upper { d < 0.0 } else { d > 0.0 }
                })
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_direction_search_finds_no_missing_pattern(x in rows_strategy(1..=8, 2)) {
        let inst = build_instruments_2d(&x).unwrap();
        let have_u = indicator_patterns(&x, inst.upper(), true);
        let have_l = indicator_patterns(&x, inst.lower(), false);
        let mut probe = Vec::new();
        for j in 0..=20_000 {
            let angle = std::f64::consts::PI * (j as f64 / 20_000.0 - 0.5) * 0.9999;
            for s in [1.0, -1.0] {
                probe.push(vec![s, s * angle.tan()]);
            }
        }
        for p in indicator_patterns(&x, &probe, true) {
            prop_assert!(have_u.contains(&p), "upper pattern {:?} missing", p);
        }
        for p in indicator_patterns(&x, &probe, false) {
            prop_assert!(have_l.contains(&p), "lower pattern {:?} missing", p);
        }
    }

    #[test]
    fn builder_and_cells_realize_the_same_strict_patterns(x in rows_strategy(1..=7, 2)) {
        let strict = |vs: &[Vec<f64>]| -> BTreeSet<Vec<bool>> {
            vs.iter().filter_map(|v| strict_pattern(&x, v)).collect()
        };
        let inst = build_instruments_2d(&x).unwrap();
        let cells = enumerate_cells(&x).unwrap();
        prop_assert_eq!(strict(inst.upper()), strict(&cells));
    }

    #[test]
    fn violation_is_zero_exactly_on_the_identified_set(
        x in rows_strategy(1..=8, 2),
        truth in (-2.0f64..2.0),
        u in prop::collection::vec(0.0f64..1.0, 8),
        theta in (-3.0f64..3.0),
        s in prop::sample::select(vec![1.0, -1.0]),
    ) {
        let p = model_probs(&x, &[1.0, truth], &u);
        let inst = build_instruments_2d(&x).unwrap();
        let b = [s, s * theta];
        let member = in_identified_set(&p, &x, &b, &inst).unwrap();
        let q = violation_q(&p, &x, &b, &inst).unwrap();
        prop_assert!(q.q_total >= 0.0);
        prop_assert_eq!(q.q_total == 0.0, member);
        prop_assert!(in_identified_set(&p, &x, &[1.0, truth], &inst).unwrap());
    }

    #[test]
    fn membership_changes_only_across_breakpoints(
        x in rows_strategy(1..=6, 2),
        truth in (-2.0f64..2.0),
        u in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let p = model_probs(&x, &[1.0, truth], &u);
        let grid = ThetaGrid::linspace(1, -4.0, 4.0, 401).unwrap();
        let member = identified_set_2d(&p, &x, &grid).unwrap();
        // X_i·(1, θ) changes sign only at θ = −X_i1/X_i2
        let breaks: Vec<f64> = x.rows().filter(|r| r[1] != 0.0).map(|r| -r[0] / r[1]).collect();
        let th = grid.thetas();
        for j in 1..th.len() {
            if member[j] != member[j - 1] {
                prop_assert!(breaks.iter().any(|&z| th[j - 1] <= z && z <= th[j]));
            }
        }
    }

    #[test]
    fn positive_rescaling_of_instruments_changes_nothing(
        x in rows_strategy(2..=20, 2),
        y in prop::collection::vec(0u8..=1, 20),
        theta in (-2.0f64..2.0),
        scale in prop::collection::vec(0.01f64..50.0, 64),
    ) {
        let n = x.n();
        let y = &y[..n];
        let b = [1.0, theta];
        let inst = build_instruments_2d(&x).unwrap();
        let rescale = |vs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            vs.iter()
                .enumerate()
                .map(|(j, v)| v.iter().map(|c| c * scale[j % scale.len()]).collect())
                .collect()
        };
        let scaled = InstrumentSets::new(rescale(inst.upper()), rescale(inst.lower())).unwrap();
        let draws = RademacherDraws::generate(n, 200, 9);
        let pos = maxscore::teststat::positives_of(y);
        let eps = maxscore::DEFAULT_EPSILON;
        let a = MomentSets::new(&x, &b, &inst).unwrap();
        let c = MomentSets::new(&x, &b, &scaled).unwrap();
        prop_assert_eq!(a.statistic(&pos, eps), c.statistic(&pos, eps));
        prop_assert_eq!(
            critical_value(&a, &draws, 0.1, eps).unwrap().q,
            critical_value(&c, &draws, 0.1, eps).unwrap().q
        );
    }

    #[test]
    fn shared_draw_inversion_is_constant_on_cells(
        x in rows_strategy(3..=25, 2),
        y in prop::collection::vec(0u8..=1, 25),
        seed in any::<u64>(),
    ) {
        let sample = Sample::new(y[..x.n()].to_vec(), x).unwrap();
        let grid = ThetaGrid::linspace(-1, -3.0, 3.0, 121).unwrap();
        let config = TestConfig::new(0.1, maxscore::DEFAULT_EPSILON, 100, seed).unwrap();
        let inv = invert_test(&sample, &grid, &config, DrawMode::Shared).unwrap();
        let mut by_cell = std::collections::HashMap::new();
        for r in &inv.rows {
            let prev = by_cell.insert(r.cell, (r.reject, r.t_stat, r.q));
            if let Some(prev) = prev {
                prop_assert_eq!(prev, (r.reject, r.t_stat, r.q));
            }
        }
    }

    #[test]
    fn non_contributing_indices_do_not_matter(
        x in rows_strategy(2..=14, 2),
        p in prop::collection::vec(0.02f64..0.98, 14),
        y in prop::collection::vec(0u8..=1, 14),
        theta in (-2.0f64..2.0),
        randomized in any::<bool>(),
    ) {
        let n = x.n();
        let p_alt = CondProbs::new(p[..n].to_vec()).unwrap();
        let b = [1.0, theta];
        let p_null = least_favorable(&p_alt, &x, &b).unwrap();
        let keep: Vec<usize> =
            (0..n).filter(|&i| p_null.as_slice()[i] != p_alt.as_slice()[i]).collect();
        let pick = |v: &[f64]| CondProbs::new(keep.iter().map(|&i| v[i]).collect()).unwrap();
        let full = LrtSpec::new(p_null.clone(), p_alt.clone(), 0.1, randomized, NullDist::Exact).unwrap();
        let reduced = LrtSpec::new(
            pick(p_null.as_slice()),
            pick(p_alt.as_slice()),
            0.1,
            randomized,
            NullDist::Exact,
        )
        .unwrap();
        let (cf, cr) = (calibrate(&full).unwrap(), calibrate(&reduced).unwrap());
        prop_assert!((cf.k_log - cr.k_log).abs() <= 1e-12 || cf.k_log == cr.k_log);
        prop_assert!((cf.xi - cr.xi).abs() <= 1e-12);
        let y = &y[..n];
        let y_reduced: Vec<u8> = keep.iter().map(|&i| y[i]).collect();
        prop_assert_eq!(
            lrt_reject(y, &full, &cf, 5).unwrap().verdict,
            lrt_reject(&y_reduced, &reduced, &cr, 5).unwrap().verdict
        );
    }
}

#[test]
fn cell_count_never_exceeds_bound_with_repeated_rows() {
    let x = Covariates::from_rows(&[[1.0, 2.0, 0.5], [2.0, 4.0, 1.0], [0.3, -1.0, 2.0], [1.0, 1.0, 1.0]])
        .unwrap();
    let bound = maxscore::instruments::cover_bound(4, 3).unwrap() as usize;
    assert!(enumerate_cells(&x).unwrap().len() < bound);
}

/// Where the violation measure clears `C(γ)`, simulated power is at least `γ`.
#[test]
fn violation_threshold_guarantees_power() {
    let reps = 400;
    let dgp = DgpSpec::new(Design::Logistic, 1.0, 100, 21).unwrap();
    let grid = ThetaGrid::around(1, 1.0).unwrap();
    let config = McConfig { draws: 300, lrt_draws: 1000, ..McConfig::default() };
    let r = run_experiment(&dgp, &grid, reps, &config).unwrap();
    let x = dgp.covariates();
    let p = true_cond_probs(&dgp, &x).unwrap();
    let inst = build_instruments_2d(&x).unwrap();
    let mut checked = [0usize; 2];
    for (j, b) in grid.points().enumerate() {
        for (g, gamma) in [0.5, 0.9].into_iter().enumerate() {
            let rep =
                maxscore::inference::power_report(&p, &x, &b, &inst, r.q[j], config.epsilon, gamma)
                    .unwrap();
            if rep.q_total >= rep.c_gamma {
                checked[g] += 1;
                let rej = 1.0 - r.nonrej_proposed[j];
                let se = (gamma * (1.0 - gamma) / reps as f64).sqrt();
                assert!(rej >= gamma - 3.0 * se, "theta={} rej={rej} gamma={gamma}", grid.thetas()[j]);
            }
        }
    }
    assert!(checked[0] > 0 && checked[1] > 0, "{checked:?}");
}
