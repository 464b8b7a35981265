//! End-to-end runs over generated instances.

use multical::auditor::{check_al_multicalibration, multi_ae_violations};
use multical::bestinclass::{postprocess, PostprocessParams, PredictorFamily};
use multical::bridge::{
    learn_via_wal, wal_from_multicalibration, ExactMcLearner, ExhaustiveWeakLearner, LabelVector, WalBranch,
    WalContract, WalParams,
};
use multical::learners::{bound_check, learn_multi_ae, LearnTrace, MultiAeParams};
use multical::oracles::{ExactGuessCheck, ExactSq, GrayZonePolicy};
use multical::population::{
    generate_synthetic, CollectionSpec, GroundTruth, SyntheticConfig, SyntheticInstance, TruthSpec,
};
use multical::{learn_multicalibrated, DensePredictor, DiscretizationGrid, MulticalibrationParams};

fn additive(seed: u64) -> SyntheticInstance {
    let config = SyntheticConfig {
        n: 400,
        boolean_features: 6,
        real_features: 1,
        gamma: 0.1,
        truth: TruthSpec::Additive {
            base: 0.3,
            offsets: vec![0.3, -0.2, 0.25],
            width: 2,
            noise: 0.05,
            clip: true,
        },
        collection: CollectionSpec {
            extra_conjunctions: 6,
            max_width: 2,
            include_all: true,
            include_planted: true,
        },
    };
    generate_synthetic(&config, seed).unwrap()
}

#[test]
fn generation_is_pure_in_the_seed() {
    assert_eq!(additive(3), additive(3));
    assert_ne!(additive(3).truth, additive(4).truth);
}

#[test]
fn multicalibration_learner_output_passes_audit_and_program_replays_it() {
    for seed in 0..4 {
        let inst = additive(seed);
        let coll = inst.collection.bind(&inst.population).unwrap();
        let params = MulticalibrationParams::new(0.1, 0.1, 0.1);
        for policy in [GrayZonePolicy::Accept, GrayZonePolicy::Answer] {
            let mut oracle = ExactGuessCheck::new(&inst.truth, 1e-12)
                .with_policy(policy)
                .with_perturbation(seed);
            let out = learn_multicalibrated(&coll, &mut oracle, &params, Some(&inst.truth)).unwrap();
            let grid = DiscretizationGrid::new(0.1).unwrap();
            let report = check_al_multicalibration(&out.pre_closing, &inst.truth, &coll, 0.1, &grid);
            assert!(report.is_clean(), "seed {seed}: {:?}", report.worst_violation);
            assert_eq!(out.program.eval_all(&inst.population).unwrap(), out.predictor);
            let check = bound_check(&out.trace, 0.1, 0.1, 0.1);
            assert!(check.within, "{} updates > {}", check.updates, check.bound);
            assert_eq!(out.trace.progress_failures(0.1), 0);
        }
    }
}

#[test]
fn trace_survives_jsonl_round_trip() {
    let inst = additive(1);
    let coll = inst.collection.bind(&inst.population).unwrap();
    let mut oracle = ExactGuessCheck::new(&inst.truth, 1e-12);
    let out = learn_multicalibrated(
        &coll,
        &mut oracle,
        &MulticalibrationParams::new(0.1, 0.1, 0.1),
        Some(&inst.truth),
    )
    .unwrap();
    let text = out.trace.to_jsonl().unwrap();
    assert_eq!(LearnTrace::from_jsonl(&text).unwrap(), out.trace);
}

#[test]
fn multi_ae_under_adversarial_tolerance() {
    let inst = additive(2);
    let coll = inst.collection.bind(&inst.population).unwrap();
    let alpha = 0.05;
    let mut sq = ExactSq::new(&inst.truth, alpha * 0.1 / 4.0)
        .unwrap()
        .with_perturbation(9);
    let (x, trace) = learn_multi_ae(&coll, &mut sq, &MultiAeParams::new(alpha, 0.1), Some(&inst.truth)).unwrap();
    assert!(multi_ae_violations(&x, &inst.truth, &coll, alpha).is_empty());
    assert!(bound_check(&trace, alpha, 1.0, 0.1).within);
}

#[test]
fn weak_agnostic_learner_calibrates_exactly_labeled_instance() {
    let inst = additive(5);
    let coll = inst.collection.bind(&inst.population).unwrap();
    let params = WalParams::new(0.2, 0.2, 0.1);
    let mut learner = ExhaustiveWeakLearner::new(&coll);
    let (x, trace) = learn_via_wal(&mut learner, &inst.truth, &params).unwrap();
    assert!(trace.totals.updates as f64 <= trace.totals.bound);
    let grid = DiscretizationGrid::new(0.2).unwrap();
    let report = check_al_multicalibration(&x, &inst.truth, &coll, 0.2, &grid);
    assert!(report.is_clean(), "{:?}", report.worst_violation);
}

#[test]
fn postprocessing_competes_with_the_family() {
    let inst = additive(6);
    let coll = inst.collection.bind(&inst.population).unwrap();
    let n = inst.population.len();
    let mut family = PredictorFamily::new();
    family.push("half", DensePredictor::constant(n, 0.5).unwrap());
    family.push(
        "coarse_truth",
        DensePredictor::new(inst.truth.probs().iter().map(|p| (p * 4.0).round() / 4.0).collect()).unwrap(),
    );
    let alpha = 0.1;
    let mut oracle = ExactGuessCheck::new(&inst.truth, 1e-12);
    let out = postprocess(
        &coll,
        &family,
        &PostprocessParams::new(alpha, 0.1),
        &mut oracle,
        Some(&inst.truth),
    )
    .unwrap();
    let report = out.report.unwrap();
    assert!(report.within_bound, "gap {} > {}", report.gap, report.gap_bound);
    assert!(report.audit.clean);
    assert!(report.lemma.iter().all(|l| l.violations == 0 && l.global_holds));
}

#[test]
fn reduction_branches() {
    let inst = additive(7);
    let coll = inst.collection.bind_unchecked(&inst.population).unwrap();
    let n = inst.population.len();
    let contract = WalContract::new(0.6, 0.05).unwrap();

    let negative = LabelVector::new(vec![-1.0; n]).unwrap();
    let (_, branch) = wal_from_multicalibration(&mut ExactMcLearner, &coll, &negative, contract, 0.1, 0.01).unwrap();
    assert_eq!(branch, WalBranch::NegativeConstant);

    let mostly_positive = LabelVector::new((0..n).map(|i| if i % 5 == 0 { -1.0 } else { 1.0 }).collect()).unwrap();
    let (_, branch) =
        wal_from_multicalibration(&mut ExactMcLearner, &coll, &mostly_positive, contract, 0.1, 0.01).unwrap();
    assert_eq!(branch, WalBranch::BiasedConstant);

    // Roughly balanced labels that agree with a protected set.
    let labels = coll
        .sets
        .iter()
        .map(|set| {
            let mut labels = vec![-1.0; n];
            for &i in &set.members {
                labels[i] = 1.0;
            }
            labels
        })
        .find(|l| (l.iter().sum::<f64>() / n as f64).abs() <= contract.rho / 4.0)
        .expect("some set splits the population evenly enough");
    let y = LabelVector::new(labels).unwrap();
    let (h, branch) = wal_from_multicalibration(&mut ExactMcLearner, &coll, &y, contract, 0.1, 0.01).unwrap();
    assert_eq!(branch, WalBranch::Calibrated);
    let corr = multical::bridge::correlation(&h.values(&inst.population).unwrap(), y.values());
    assert!(corr >= contract.rho / 4.0 - 4.0 * 0.01, "correlation {corr}");
}

#[test]
fn truth_is_trivially_multicalibrated() {
    let inst = additive(8);
    let coll = inst.collection.bind(&inst.population).unwrap();
    let x = DensePredictor::new(inst.truth.probs().to_vec()).unwrap();
    let grid = DiscretizationGrid::new(0.05).unwrap();
    assert!(check_al_multicalibration(&x, &inst.truth, &coll, 0.01, &grid).is_clean());
    let constant = GroundTruth::constant(inst.population.len(), 0.5).unwrap();
    let half = DensePredictor::constant(inst.population.len(), 0.5).unwrap();
    assert!(check_al_multicalibration(&half, &constant, &coll, 0.01, &grid).is_clean());
}
