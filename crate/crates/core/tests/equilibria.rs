use approx::assert_abs_diff_eq;
use maccoop_core::analysis::{random_scenario, RandomScenarioSpec, ReceiverKind};
use maccoop_core::capacity::{best_response, logdet_rate, maximize_per_antenna, waterfill, PerAntennaOptions};
use maccoop_core::equilibrium::{ne_sic, ne_sud, partition_utilities, scenario_fingerprint, utility_table, NeOptions};
use maccoop_core::model::{enumerate_partitions, BELL};
use maccoop_core::{Coalition, Error, Partition, ReceiverModel, Scenario};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn bell_numbers_up_to_twelve() {
    for k in 1..=12 {
        assert_eq!(enumerate_partitions(k).unwrap().len(), BELL[k]);
    }
    assert!(enumerate_partitions(13).is_err());
}

#[test]
fn table_of_three_users() {
    let sc = Scenario::symmetric(3, 1.0, ReceiverKind::SicFixed.build(3)).unwrap();
    let t = utility_table(&sc).unwrap();
    assert_eq!(t.len(), 10);
    assert_eq!(t.fingerprint(), scenario_fingerprint(&sc));
    let rows: Vec<String> = t.entries().map(|(p, s, v)| format!("{p} {s} {v}")).collect();
    let again: Vec<String> = utility_table(&sc)
        .unwrap()
        .entries()
        .map(|(p, s, v)| format!("{p} {s} {v}"))
        .collect();
    assert_eq!(rows, again);
}

#[test]
fn sud_equilibrium_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for per_antenna in [false, true] {
        let spec = RandomScenarioSpec {
            users: 3,
            rx_antennas: 2,
            tx_antennas: 2,
            noise: 0.5,
            receiver: ReceiverKind::Sud,
            per_antenna,
        };
        let sc = random_scenario(&spec, &mut rng).unwrap();
        let p = Partition::singletons(3);
        let eq = ne_sud(&sc, &p).unwrap();
        let m = sc.rx_antennas();
        for (b, &s) in p.blocks().iter().enumerate() {
            let h = maccoop_core::model::coalition_channel(&sc, s);
            let mut others = DMatrix::zeros(m, m);
            for (c, &t) in p.blocks().iter().enumerate() {
                if c != b {
                    let g = maccoop_core::model::coalition_channel(&sc, t);
                    others += &g * &eq.profile.blocks[c] * g.transpose();
                }
            }
            let noise = DMatrix::identity(m, m) * sc.noise() + &others;
            let br = best_response(&h, &noise, &sc.coalition_power(s), &NeOptions::default().solver).unwrap();
            let now = logdet_rate(sc.noise(), &h, &eq.profile.blocks[b], &others).unwrap();
            assert!(br.rate - now < 1e-7, "gain {}", br.rate - now);
        }
    }
}

#[test]
fn sic_utilities_telescope_to_sum_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = RandomScenarioSpec {
        users: 4,
        rx_antennas: 2,
        tx_antennas: 1,
        noise: 0.7,
        receiver: ReceiverKind::SicFixed,
        per_antenna: false,
    };
    let sc = random_scenario(&spec, &mut rng).unwrap();
    for p in enumerate_partitions(4).unwrap() {
        let eq = ne_sic(&sc, &p).unwrap();
        let agg = eq.aggregate_covariance(&sc, &p);
        let total = (DMatrix::identity(2, 2) + agg / sc.noise()).determinant().ln();
        assert_abs_diff_eq!(eq.utilities.iter().sum::<f64>(), total, epsilon = 1e-9);
    }
}

#[test]
fn errors_name_the_partition() {
    let sc = Scenario::symmetric(8, 1.0, ReceiverModel::SicTimeShare { weights: None }).unwrap();
    let err = partition_utilities(&sc, &Partition::singletons(8)).unwrap_err();
    assert!(matches!(err, Error::InPartition { .. }));
    assert!(err.to_string().contains("{{1},{2},{3},{4},{5},{6},{7},{8}}"));
    assert!(err.is_user_error());
}

#[test]
fn wrong_receiver_is_rejected() {
    let sc = Scenario::symmetric(2, 1.0, ReceiverModel::Sud).unwrap();
    assert!(ne_sic(&sc, &Partition::singletons(2)).is_err());
    let sc = sc
        .with_receiver(ReceiverModel::SicFixed { base_order: vec![0, 1] })
        .unwrap();
    assert!(ne_sud(&sc, &Partition::singletons(2)).is_err());
    assert!(sc
        .with_receiver(ReceiverModel::SicFixed { base_order: vec![0, 0] })
        .is_err());
    assert_eq!(Coalition::grand(2), sc.grand_coalition());
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn waterfill_meets_kkt(h in matrix(2, 3), power in 0.1f64..5.0) {
        let w = waterfill(&h, &DMatrix::identity(2, 2), power).unwrap();
        prop_assert!((w.covariance.trace() - power).abs() < 1e-9);
        for (g, p) in w.mode_gains.iter().zip(&w.mode_powers) {
            if *p > 1e-12 {
                prop_assert!((p + 1.0 / g - w.water_level).abs() < 1e-9);
            } else if *g > 0.0 {
                prop_assert!(1.0 / g >= w.water_level - 1e-9);
            }
        }
        let direct = logdet_rate(1.0, &h, &w.covariance, &DMatrix::zeros(2, 2)).unwrap();
        prop_assert!((direct - w.rate).abs() < 1e-9);
    }

    #[test]
    fn per_antenna_solution_is_feasible(h in matrix(2, 2), c0 in 0.1f64..2.0, c1 in 0.1f64..2.0) {
        let caps = [c0, c1];
        let s = maximize_per_antenna(&h, &DMatrix::identity(2, 2), &caps, &PerAntennaOptions::default()).unwrap();
        prop_assert!(s.covariance[(0, 0)] <= c0 + 1e-9);
        prop_assert!(s.covariance[(1, 1)] <= c1 + 1e-9);
        let min_eig = s.covariance.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-10);
        // never worse than uncorrelated full power
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(caps.to_vec()));
        let base = logdet_rate(1.0, &h, &diag, &DMatrix::zeros(2, 2)).unwrap();
        prop_assert!(s.rate >= base - 1e-9);
    }
}
