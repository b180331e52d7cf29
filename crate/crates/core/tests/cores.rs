use approx::assert_abs_diff_eq;
use maccoop_core::analysis::ReceiverKind;
use maccoop_core::cores::{
    check_core, coalition_demands, core_from_demands, least_core, least_core_from_demands, region_from_demands,
    CoalitionDemands, ExpectationModel, Verdict,
};
use maccoop_core::{Coalition, ReceiverModel, Scenario, UserSpec};
use proptest::prelude::*;

fn sic(k: usize, n0: f64) -> Scenario {
    Scenario::symmetric(k, n0, ReceiverKind::SicFixed.build(k)).unwrap()
}

/// `max_S (v_S - x(S))` for an allocation.
fn excess(d: &CoalitionDemands, x: &[f64]) -> f64 {
    -d.min_slack(x)
}

/// Grid minimax over the efficiency simplex of four players, coarse then fine.
fn brute_force_least_core(d: &CoalitionDemands) -> f64 {
    let v = d.grand_value;
    let search = |center: [f64; 3], half: f64, step: f64| {
        let n = (2.0 * half / step).round() as i64;
        let mut best = (f64::INFINITY, center);
        for i in 0..=n {
            for j in 0..=n {
                for l in 0..=n {
                    let x1 = center[0] - half + i as f64 * step;
                    let x2 = center[1] - half + j as f64 * step;
                    let x3 = center[2] - half + l as f64 * step;
                    let x = [x1, x2, x3, v - x1 - x2 - x3];
                    let e = excess(d, &x);
                    if e < best.0 {
                        best = (e, [x1, x2, x3]);
                    }
                }
            }
        }
        best
    };
    let coarse = search([v / 4.0; 3], v / 4.0, 0.02);
    search(coarse.1, 0.03, 1e-3).0
}

#[test]
fn least_core_matches_grid_oracle() {
    let sc = sic(4, 1.0);
    let d = coalition_demands(&sc, ExpectationModel::Rational).unwrap();
    let lc = least_core(&sc, ExpectationModel::Rational).unwrap();
    assert!(lc.epsilon_star > 0.0);
    let oracle = brute_force_least_core(&d);
    assert!(
        (lc.epsilon_star - oracle).abs() < 2e-3,
        "{} vs {oracle}",
        lc.epsilon_star
    );
    assert_abs_diff_eq!(lc.allocation.iter().sum::<f64>(), d.grand_value, epsilon = 1e-9);
    assert!(excess(&d, &lc.allocation) <= lc.epsilon_star + 1e-9);
}

#[test]
fn symmetric_game_has_symmetric_least_core_point() {
    // time sharing over all orders makes the game symmetric in the users
    for n0 in [1e-3, 0.5] {
        let sc = Scenario::symmetric(4, n0, ReceiverModel::SicTimeShare { weights: None }).unwrap();
        let d = coalition_demands(&sc, ExpectationModel::Rational).unwrap();
        let lc = least_core_from_demands(&d).unwrap();
        assert_abs_diff_eq!(excess(&d, &[d.grand_value / 4.0; 4]), lc.epsilon_star, epsilon = 1e-9);
    }
}

#[test]
fn nonempty_core_has_nonpositive_epsilon() {
    let sc = sic(4, 1e3);
    let r = check_core(&sc, ExpectationModel::Rational).unwrap();
    assert_eq!(r.verdict, Verdict::Nonempty);
    assert!(r.epsilon_star <= 1e-9);
    let x = r.allocation.unwrap();
    assert_abs_diff_eq!(x.iter().sum::<f64>(), r.demands.grand_value, epsilon = 1e-9);
    assert!(r.demands.min_slack(&x) >= -1e-9);
}

#[test]
fn exactly_one_of_witness_or_certificate() {
    for n0 in [1e-2, 0.1, 0.5, 1.0, 3.0, 30.0] {
        for k in 2..=5 {
            let r = check_core(&sic(k, n0), ExpectationModel::Rational).unwrap();
            assert!(r.allocation.is_some() != r.certificate.is_some());
            assert_eq!(r.verdict == Verdict::Empty, r.epsilon_star > 1e-9, "k={k} n0={n0}");
            if let Some(c) = &r.certificate {
                c.validate(k, &r.demands).unwrap();
            }
        }
    }
}

fn single_antenna_sic(gains: &[f64], n0: f64) -> Scenario {
    let k = gains.len();
    let users = gains
        .iter()
        .map(|&g| UserSpec::single_antenna(&[g], 1.0).unwrap())
        .collect();
    Scenario::new(
        users,
        1,
        n0,
        ReceiverModel::SicFixed {
            base_order: (0..k).collect(),
        },
    )
    .unwrap()
}

#[test]
fn single_antenna_core_relations() {
    let sc = single_antenna_sic(&[1.0, 0.7, 1.4], 0.2);
    let merging = coalition_demands(&sc, ExpectationModel::Merging).unwrap();
    let cautious = coalition_demands(&sc, ExpectationModel::Cautious).unwrap();
    for (&(s, a), &(t, b)) in merging.entries.iter().zip(&cautious.entries) {
        assert_eq!(s, t);
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }
    // singleton expectations are looser demands, so the s-core sits inside the m-core
    let singleton = coalition_demands(&sc, ExpectationModel::Singleton).unwrap();
    for (&(_, m), &(_, s)) in merging.entries.iter().zip(&singleton.entries) {
        assert!(s >= m - 1e-12);
    }
    for vertex in region_from_demands(&singleton).unwrap() {
        assert!(merging.min_slack(&vertex) >= -1e-9);
    }
}

#[test]
fn region_vertices_are_tight() {
    let sc = Scenario::symmetric(3, 0.5, ReceiverModel::SicTimeShare { weights: None }).unwrap();
    let d = coalition_demands(&sc, ExpectationModel::Rational).unwrap();
    let poly = region_from_demands(&d).unwrap();
    assert!(!poly.is_empty());
    for v in &poly {
        let tight = d
            .entries
            .iter()
            .filter(|&&(s, dem)| (s.members().map(|i| v[i]).sum::<f64>() - dem).abs() < 1e-8)
            .count();
        assert!(tight >= 2, "{v:?}");
    }
    let empty = region_from_demands(&coalition_demands(&sic(3, 1e-3), ExpectationModel::Rational).unwrap());
    let verdict = check_core(&sic(3, 1e-3), ExpectationModel::Rational).unwrap().verdict;
    assert_eq!(empty.unwrap().is_empty(), verdict == Verdict::Empty);
}

#[test]
fn two_users_every_scenario_nonempty() {
    for n0 in [1e-3, 1.0, 1e3] {
        let sc = single_antenna_sic(&[0.4, 1.9], n0);
        let r = check_core(&sc, ExpectationModel::Rational).unwrap();
        assert_eq!(r.verdict, Verdict::Nonempty);
        let v1 = r.demands.get(Coalition::singleton(0)).unwrap();
        let x = [v1, r.demands.grand_value - v1];
        assert!(r.demands.min_slack(&x) >= -1e-9);
    }
}

fn arb_demands() -> impl Strategy<Value = (CoalitionDemands, Vec<usize>)> {
    (3usize..=5).prop_flat_map(|k| {
        let n = (1usize << k) - 2;
        (
            proptest::collection::vec(0.0f64..3.0, n),
            1.0f64..6.0,
            Just(k),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
            .prop_map(move |(vals, grand, k, perm)| {
                let entries = Coalition::proper_subsets(k)
                    .zip(vals)
                    .map(|(s, v)| (s, v * s.len() as f64 / k as f64 * 1.5))
                    .collect();
                (
                    CoalitionDemands {
                        num_users: k,
                        grand_value: grand,
                        entries,
                    },
                    perm,
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn verdict_ignores_constraint_order((d, perm) in arb_demands()) {
        let shuffled = CoalitionDemands {
            entries: perm.iter().map(|&i| d.entries[i]).collect(),
            ..d.clone()
        };
        let a = core_from_demands(&d, 1e-9).unwrap();
        let b = core_from_demands(&shuffled, 1e-9).unwrap();
        prop_assert_eq!(a.verdict, b.verdict);
        prop_assert!((a.epsilon_star - b.epsilon_star).abs() < 1e-9);
    }

    #[test]
    fn epsilon_decreases_with_grand_value((d, _) in arb_demands(), bump in 0.0f64..2.0) {
        let richer = CoalitionDemands { grand_value: d.grand_value + bump, ..d.clone() };
        let a = least_core_from_demands(&d).unwrap().epsilon_star;
        let b = least_core_from_demands(&richer).unwrap().epsilon_star;
        prop_assert!(b <= a + 1e-9);
    }

    #[test]
    fn least_core_allocation_is_feasible((d, _) in arb_demands()) {
        let lc = least_core_from_demands(&d).unwrap();
        prop_assert!((lc.allocation.iter().sum::<f64>() - d.grand_value).abs() < 1e-9);
        prop_assert!(excess(&d, &lc.allocation) <= lc.epsilon_star + 1e-9);
    }
}
