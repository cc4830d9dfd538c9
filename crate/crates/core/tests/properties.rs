use std::collections::BTreeSet;
use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softmil::evaluation::{froc, PseudoGoldenGt, ScoredCandidate};
use softmil::gradcheck::{check_derivatives, random_problem, ProblemShape, DEFAULT_STEP};
use softmil::labels::{naive_probability, single_annotator_probability};
use softmil::marks::{ellipse_intersection_area, marks_hit};
use softmil::objective::{
    bag_derivatives_general, bag_derivatives_hard_negative, bag_positive_probability,
};
use softmil::{
    merge_marks, Bag, EllipseMark, HitConfig, LabelConfig, ModelWeights, Normalization,
    NormalizationMode, Objective,
};

fn mark_strategy(id: u64) -> impl Strategy<Value = EllipseMark> {
    (
        0u64..4,
        0.0..40.0f64,
        0.0..40.0f64,
        1.0..12.0f64,
        0.3..1.0f64,
        0.0..PI,
    )
        .prop_map(move |(reader, x, y, r, ratio, theta)| {
            EllipseMark::new(id, 1, reader, (x, y), (r, r * ratio), theta).unwrap()
        })
}

fn marks_strategy() -> impl Strategy<Value = Vec<EllipseMark>> {
    (1usize..9).prop_flat_map(|n| (0..n as u64).map(mark_strategy).collect::<Vec<_>>())
}

fn mode_strategy() -> impl Strategy<Value = Normalization> {
    prop_oneof![
        Just(Normalization::Raw),
        Just(Normalization::PerSample),
        Just(Normalization::PerClass)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_partitions_marks(marks in marks_strategy(), seed in any::<u64>()) {
        let gts = merge_marks(&marks, &HitConfig::default(), seed).unwrap();
        let mut ids: Vec<u64> = gts.iter().flat_map(|g| g.referred_marks.clone()).collect();
        ids.sort_unstable();
        let expected: Vec<u64> = (0..marks.len() as u64).collect();
        prop_assert_eq!(ids, expected);
        for g in &gts {
            prop_assert_eq!(g.score, g.referred_marks.len());
            prop_assert!(g.distinct_readers >= 1 && g.distinct_readers <= g.score);
        }
    }

    #[test]
    fn merge_ignores_input_order(marks in marks_strategy(), seed in any::<u64>()) {
        let cfg = HitConfig::default();
        let canon = |ms: &[EllipseMark]| -> BTreeSet<(Vec<u64>, u64)> {
            merge_marks(ms, &cfg, seed).unwrap().into_iter().map(|g| {
                let mut r = g.referred_marks;
                r.sort_unstable();
                (r, g.representative_ellipse.mark_id)
            }).collect()
        };
        let mut reversed = marks.clone();
        reversed.reverse();
        prop_assert_eq!(canon(&marks), canon(&reversed));
    }

    #[test]
    fn intersection_is_symmetric_and_bounded(a in mark_strategy(0), b in mark_strategy(1)) {
        let ab = ellipse_intersection_area(&a, &b);
        let ba = ellipse_intersection_area(&b, &a);
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= a.area().min(b.area()) * (1.0 + 1e-12));
        prop_assert_eq!(marks_hit(&a, &b, &HitConfig::default()), marks_hit(&b, &a, &HitConfig::default()));
    }

    #[test]
    fn gradient_matches_finite_differences(
        seed in any::<u64>(),
        dim in 2usize..12,
        bag_size in 1usize..6,
        mode in mode_strategy(),
        use_a in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = ProblemShape { dim, bag_size, n_soft: 3, n_hard: 2, normalization: mode, annotator_weights: use_a };
        let (bags, w) = random_problem(&mut rng, &shape);
        let obj = Objective::new(&bags, NormalizationMode::new(mode, 0.0).unwrap(), use_a).unwrap();
        let check = check_derivatives(&obj, &w, DEFAULT_STEP).unwrap();
        prop_assert!(check.gradient_error < 1e-6, "{}", check.gradient_error);
        prop_assert!(check.hessian_error < 1e-5, "{}", check.hessian_error);
    }

    #[test]
    fn normalization_is_a_per_bag_weighting(seed in any::<u64>(), mode in mode_strategy(), use_a in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = ProblemShape { dim: 6, bag_size: 3, n_soft: 5, n_hard: 7, normalization: mode, annotator_weights: use_a };
        let (bags, w) = random_problem(&mut rng, &shape);
        let obj = Objective::new(&bags, NormalizationMode::new(mode, 0.0).unwrap(), use_a).unwrap();
        let direct = obj.divergence(&w).unwrap();
        let weighted = softmil::objective::weighted_divergence(&bags, &obj.bag_weights(), &w).unwrap();
        prop_assert!((direct - weighted).abs() <= 1e-12);
    }

    #[test]
    fn annotator_weights_of_one_change_nothing(seed in any::<u64>(), mode in mode_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = ProblemShape { dim: 5, bag_size: 2, n_soft: 4, n_hard: 4, normalization: mode, annotator_weights: true };
        let (mut bags, w) = random_problem(&mut rng, &shape);
        for b in &mut bags {
            b.annotator_weight = 1.0;
        }
        let m = NormalizationMode::new(mode, 0.0).unwrap();
        let with = Objective::new(&bags, m, true).unwrap().divergence(&w).unwrap();
        let without = Objective::new(&bags, m, false).unwrap().divergence(&w).unwrap();
        prop_assert_eq!(with, without);
    }

    #[test]
    fn duplicated_bags_at_half_weight_match_single_copy(seed in any::<u64>(), bag_size in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = ProblemShape { dim: 5, bag_size, n_soft: 4, n_hard: 4, normalization: Normalization::Raw, annotator_weights: false };
        let (bags, w) = random_problem(&mut rng, &shape);
        let doubled: Vec<Bag> = bags
            .iter()
            .flat_map(|b| [b.clone(), b.clone()])
            .map(|mut b| { b.annotator_weight = 0.5; b })
            .collect();
        let m = NormalizationMode::new(Normalization::Raw, 0.0).unwrap();
        let single = Objective::new(&bags, m, false).unwrap();
        let twice = Objective::new(&doubled, m, true).unwrap();
        prop_assert!((single.divergence(&w).unwrap() - twice.divergence(&w).unwrap()).abs() <= 1e-12);
        let (g1, g2) = (single.gradient(&w).unwrap(), twice.gradient(&w).unwrap());
        for (a, b) in g1.iter().zip(&g2) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn hard_negative_fast_path_matches_general(xs in prop::collection::vec(-3.0..3.0f64, 4), ws in prop::collection::vec(-2.0..2.0f64, 4)) {
        let bag = Bag::hard_negative(0, 0, xs, 1.0);
        let w = ModelWeights { w: ws, penalized: vec![true, true, true, false] };
        let (g1, h1) = bag_derivatives_general(&bag, &w).unwrap();
        let (g2, h2) = bag_derivatives_hard_negative(&bag, &w).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        for (a, b) in h1.iter().zip(h2.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn bag_probability_grows_with_instances(xs in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 1..6), extra in prop::collection::vec(-3.0..3.0f64, 3)) {
        let w = ModelWeights::from_parts(vec![0.7, -0.4, 0.2], vec![true, true, false]).unwrap();
        let small = Bag::soft(0, 0, xs.clone(), 0.5, 1.0);
        let mut more = xs;
        more.push(extra);
        let large = Bag::soft(1, 0, more, 0.5, 1.0);
        let (p, q) = (bag_positive_probability(&small, &w).unwrap(), bag_positive_probability(&large, &w).unwrap());
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(q >= p);
    }

    #[test]
    fn froc_sensitivity_is_monotone(scores in prop::collection::vec((0u64..4, 0.0..1.0f64, any::<bool>()), 0..30)) {
        let images: Vec<u64> = (0..4).collect();
        let gts: Vec<PseudoGoldenGt> = (0..3).map(|i| PseudoGoldenGt {
            gt_id: i,
            image_id: i,
            representative_ellipse: EllipseMark::new(i, i, 1, (10.0, 10.0), (5.0, 4.0), 0.0).unwrap(),
        }).collect();
        let scored: Vec<ScoredCandidate> = scores.iter().enumerate().map(|(k, &(img, s, inside))| ScoredCandidate {
            candidate_id: k as u64,
            image_id: img,
            x_mm: if inside { 10.0 } else { 40.0 },
            y_mm: 10.0,
            score: s,
        }).collect();
        let fp = [0.25, 0.5, 1.0, 2.0, 4.0];
        let t = froc(&scored, &gts, &images, &fp, &Default::default()).unwrap();
        for i in 1..fp.len() {
            prop_assert!(t.gt_sensitivity[i] >= t.gt_sensitivity[i - 1]);
            prop_assert!(t.image_sensitivity[i] >= t.image_sensitivity[i - 1]);
            prop_assert!(t.thresholds[i] <= t.thresholds[i - 1]);
        }
        for (achieved, budget) in t.achieved_fp.iter().zip(fp) {
            prop_assert!(*achieved <= budget);
        }
    }

    #[test]
    fn soft_labels_follow_reader_counts(n in 4usize..=25, k in 2usize..=25) {
        let cfg = LabelConfig::default();
        let single = single_annotator_probability(n, &cfg).unwrap();
        prop_assert!(single > 0.0 && single <= 0.01 + 1e-15);
        if n > 4 {
            prop_assert!(single < single_annotator_probability(n - 1, &cfg).unwrap());
        }
        if k <= n {
            let p = naive_probability(k, n).unwrap();
            prop_assert!((p - k as f64 / n as f64).abs() < 1e-15);
            prop_assert!(p > single);
        }
    }
}
