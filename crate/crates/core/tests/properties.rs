use proptest::prelude::*;

use multical::auditor::check_al_multicalibration;
use multical::bridge::{correlation, label_to_unit, unit_to_label};
use multical::io;
use multical::oracles::{
    gc_empirical, gc_exact, satisfies_contract, EmpiricalGuessCheck, GrayZonePolicy, GuessCheck, GuessCheckQuery,
    GuessCheckResponse, NoiseMode, PrivacyBudget, PrivateOracle, SampleStore,
};
use multical::population::{AttributeKind, GroundTruth, Population, SetPredicate, SubsetCollection};
use multical::predictor::{discretize, fixed_add, quantize, DensePredictor, DiscretizationGrid};

fn boolean_population(rows: &[Vec<bool>]) -> Population {
    let dim = rows[0].len();
    Population::new(
        vec![AttributeKind::Boolean; dim],
        rows.iter()
            .map(|r| r.iter().map(|&b| f64::from(u8::from(b))).collect())
            .collect(),
    )
    .unwrap()
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<bool>>> {
    (1usize..5).prop_flat_map(|dim| prop::collection::vec(prop::collection::vec(any::<bool>(), dim), 1..60))
}

fn unit() -> impl Strategy<Value = f64> {
    0.0f64..=1.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conjunction_members_match_brute_force(rows in rows_strategy(), picks in prop::collection::vec((0usize..8, any::<bool>()), 0..4)) {
        let pop = boolean_population(&rows);
        let literals: Vec<(usize, f64)> = picks.iter().map(|&(a, v)| (a % pop.dim(), f64::from(u8::from(v)))).collect();
        let pred = SetPredicate::conjunction(literals.clone());
        let members = pred.members(&pop).unwrap();
        let brute: Vec<usize> = (0..rows.len())
            .filter(|&i| literals.iter().all(|&(a, v)| rows[i][a] == (v == 1.0)))
            .collect();
        prop_assert_eq!(&members.ids, &brute);
        prop_assert!((members.density - brute.len() as f64 / rows.len() as f64).abs() < 1e-15);
    }

    #[test]
    fn population_csv_round_trips(rows in rows_strategy(), reals in prop::collection::vec(-1e6f64..1e6, 60)) {
        let dim = rows[0].len();
        let mut kinds = vec![AttributeKind::Boolean; dim];
        kinds.push(AttributeKind::Real);
        let data: Vec<Vec<f64>> = rows
            .iter()
            .zip(&reals)
            .map(|(r, &x)| r.iter().map(|&b| f64::from(u8::from(b))).chain([x]).collect())
            .collect();
        let pop = Population::new(kinds, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.csv");
        io::write_population(&path, &pop).unwrap();
        prop_assert_eq!(io::read_population(&path).unwrap(), pop);
    }

    #[test]
    fn predictor_csv_round_trips_exactly(values in prop::collection::vec(unit(), 1..100)) {
        let x = DensePredictor::new(values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        io::write_predictor(&path, &x).unwrap();
        prop_assert_eq!(io::read_predictor(&path).unwrap(), x);
    }

    #[test]
    fn truth_csv_round_trips_at_nine_decimals(values in prop::collection::vec(unit(), 1..100)) {
        let truth = GroundTruth::new(values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        io::write_truth(&path, &truth).unwrap();
        let back = io::read_truth(&path).unwrap();
        for (a, b) in truth.probs().iter().zip(back.probs()) {
            prop_assert!((a - b).abs() <= 5e-10);
        }
    }

    #[test]
    fn discretize_is_idempotent_and_mean_preserving(values in prop::collection::vec(unit(), 1..200), lambda in 0.01f64..=1.0) {
        let x = DensePredictor::new(values).unwrap();
        let grid = DiscretizationGrid::new(lambda).unwrap();
        let d = discretize(&x, &grid);
        let dd = discretize(&d, &grid);
        prop_assert_eq!(&d, &dd);
        let all: Vec<usize> = (0..x.len()).collect();
        for bucket in grid.bucket(&x, &all) {
            let before: f64 = bucket.iter().map(|&i| x.values()[i]).sum();
            let after: f64 = bucket.iter().map(|&i| d.values()[i]).sum();
            prop_assert!((before - after).abs() <= 1e-9 * bucket.len().max(1) as f64);
            // Every member keeps its interval.
            for &i in &bucket {
                prop_assert_eq!(grid.cell_of(d.values()[i]).unwrap(), grid.cell_of(x.values()[i]).unwrap());
            }
        }
    }

    #[test]
    fn fixed_point_addition_stays_on_lattice(a in unit(), d in -1.0f64..1.0, bits in 20u32..40) {
        let v = quantize(a, bits);
        let r = fixed_add(v, quantize(d, bits), bits);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(quantize(r, bits), r);
    }

    #[test]
    fn exact_guess_check_meets_contract(
        probs in prop::collection::vec(unit(), 1..80),
        mask in prop::collection::vec(any::<bool>(), 80),
        guess in unit(),
        window in 1e-4f64..0.3,
        answer_gray in any::<bool>(),
    ) {
        let n = probs.len();
        let truth = GroundTruth::new(probs).unwrap();
        let members: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        prop_assume!(!members.is_empty());
        let policy = if answer_gray { GrayZonePolicy::Answer } else { GrayZonePolicy::Accept };
        let q = GuessCheckQuery { members: &members, guess, window };
        let r = gc_exact(&truth, q, 1e-6, policy).unwrap();
        prop_assert!(satisfies_contract(r, truth.sum_over(&members), members.len(), guess, window, n));
    }

    #[test]
    fn empirical_guess_check_meets_contract_on_its_estimate(
        outcomes in prop::collection::vec(0u8..2, 1..80),
        guess in unit(),
        window in 1e-4f64..0.3,
    ) {
        let store = SampleStore::full(&outcomes);
        let members: Vec<usize> = (0..outcomes.len()).step_by(2).collect();
        let q = GuessCheckQuery { members: &members, guess, window };
        let r = gc_empirical(&store, q, 1e-6, GrayZonePolicy::Accept).unwrap();
        let reference = store.estimate(&members).unwrap();
        prop_assert!(satisfies_contract(r, reference, members.len(), guess, window, outcomes.len()));
    }

    #[test]
    fn audit_violations_shrink_as_alpha_grows(
        values in prop::collection::vec(unit(), 20..80),
        probs in prop::collection::vec(unit(), 80),
        lambda in 0.05f64..=1.0,
        a in 0.01f64..0.5,
        b in 0.01f64..0.5,
    ) {
        let n = values.len();
        let x = DensePredictor::new(values).unwrap();
        let truth = GroundTruth::new(probs[..n].to_vec()).unwrap();
        let pop = Population::featureless(n).unwrap();
        let coll = SubsetCollection {
            gamma: 0.1,
            sets: vec![SetPredicate::All, SetPredicate::explicit((0..n / 2).collect())],
        }
        .bind(&pop)
        .unwrap();
        let grid = DiscretizationGrid::new(lambda).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let strict = check_al_multicalibration(&x, &truth, &coll, lo, &grid);
        let loose = check_al_multicalibration(&x, &truth, &coll, hi, &grid);
        // Larger α raises the error bar; the size floor αλ|S| rises too, so
        // every loose violation is also a strict one.
        for (s, l) in strict.sets.iter().zip(&loose.sets) {
            for v in &l.violations {
                prop_assert!(s.violations.iter().any(|w| w.center == v.center));
            }
        }
        prop_assert!(loose.violation_count <= strict.violation_count);
    }

    #[test]
    fn label_affine_map_round_trips(y in -1.0f64..=1.0) {
        prop_assert!((unit_to_label(label_to_unit(y)) - y).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&label_to_unit(y)));
    }

    #[test]
    fn correlation_is_bounded_and_symmetric(
        pairs in prop::collection::vec((-1.0f64..=1.0, -1.0f64..=1.0), 1..100),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let c = correlation(&a, &b);
        prop_assert!((c - correlation(&b, &a)).abs() < 1e-12);
        prop_assert!(c.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn private_budget_counters_never_decrease(
        outcomes in prop::collection::vec(0u8..2, 50..120),
        guesses in prop::collection::vec(unit(), 1..30),
        m_max in 0u64..6,
    ) {
        let store = SampleStore::full(&outcomes);
        let budget = PrivacyBudget::new(1.0, 1e-6, 20, m_max);
        let mut oracle = PrivateOracle::new(&store, budget, 1e-3, 0.05, NoiseMode::Off, 3).unwrap();
        let members: Vec<usize> = (0..outcomes.len()).collect();
        let (mut q, mut a) = (0, 0);
        for g in guesses {
            let r = oracle.guess_check(GuessCheckQuery { members: &members, guess: g, window: 0.01 });
            let b = *oracle.budget();
            prop_assert!(b.queries >= q && b.answers >= a);
            prop_assert!(b.answers <= m_max && b.queries <= 20);
            if r.is_err() {
                prop_assert!(b.answers == m_max || b.queries == 20);
            }
            q = b.queries;
            a = b.answers;
        }
    }
}

#[test]
fn private_without_noise_thresholds_at_six_windows() {
    // With noise off the private oracle is a deterministic threshold at 6ωN on
    // the empirical estimate.
    let outcomes: Vec<u8> = (0..1000).map(|i| u8::from(i % 4 == 0)).collect();
    let store = SampleStore::full(&outcomes);
    let members: Vec<usize> = (0..1000).collect();
    let window = 0.01;
    let budget = PrivacyBudget::new(1.0, 1e-6, 1_000_000, 1_000);
    let mut oracle = PrivateOracle::new(&store, budget, window, 0.05, NoiseMode::Off, 0).unwrap();
    let threshold = 6.0 * window;
    for k in 0..=100 {
        let guess = k as f64 / 100.0;
        let r = oracle
            .guess_check(GuessCheckQuery {
                members: &members,
                guess,
                window,
            })
            .unwrap();
        let dev = (0.25 - guess).abs();
        if dev <= threshold - 1e-9 {
            assert!(r.is_accepted(), "guess {guess}");
        } else if dev > threshold + 1e-9 {
            assert_eq!(r, GuessCheckResponse::Value(0.25), "guess {guess}");
        }
    }
}

#[test]
fn private_accepts_exact_guesses_almost_always() {
    let truth = GroundTruth::new((0..200).map(|i| (i % 10) as f64 / 10.0).collect()).unwrap();
    let budget = PrivacyBudget::new(1.0, 1e-6, 1_000_000, 1_000);
    let window = 0.05;
    let n = PrivateOracle::required_samples(&budget, window, 0.05);
    let store = SampleStore::draw(&truth, n, 11).unwrap();
    let mut oracle = PrivateOracle::new(&store, budget, window, 0.05, NoiseMode::Calibrated, 12).unwrap();
    let members: Vec<usize> = (0..200).collect();
    let guess = store.estimate(&members).unwrap() / 200.0;
    let trials = 2000;
    let accepted = (0..trials)
        .filter(|_| {
            oracle
                .guess_check(GuessCheckQuery {
                    members: &members,
                    guess,
                    window,
                })
                .unwrap()
                .is_accepted()
        })
        .count();
    assert!(accepted as f64 / trials as f64 >= 0.999, "{accepted}/{trials}");
}

#[test]
fn empirical_oracle_matches_sample_mean() {
    // One Bernoulli(0.3) individual sampled 10 000 times: the estimate
    // concentrates within the Hoeffding radius.
    let truth = GroundTruth::new(vec![0.3]).unwrap();
    let store = SampleStore::draw(&truth, 10_000, 5).unwrap();
    let est = store.estimate(&[0]).unwrap();
    assert!((est - 0.3).abs() <= multical::oracles::hoeffding_radius(10_000, 1e-6));
    let mut gc = EmpiricalGuessCheck::new(&store, 1e-3);
    let r = gc
        .guess_check(GuessCheckQuery {
            members: &[0],
            guess: 0.9,
            window: 0.05,
        })
        .unwrap();
    assert_eq!(r, GuessCheckResponse::Value(est));
}
