use proptest::prelude::*;
use seqlimits_core::asip::{observable_table, plan_from_table};
use seqlimits_core::funcspace::Grid;
use seqlimits_core::gibbs::{self, admissible_words, finite_volume_mass};
use seqlimits_core::limits::{distances, kolmogorov, weighted_distance, SampleSet};
use seqlimits_core::maps::{IntervalObservable, IntervalSequence, IntervalStage, PairObservable, Schedule, SftSequence, SftStage};
use seqlimits_core::model::{IntervalModel, Model, SftModel};
use std::sync::OnceLock;

fn adjacency() -> Vec<Vec<bool>> {
    vec![vec![true, true, false], vec![true, false, true], vec![true, true, true]]
}

fn sft(p0: Vec<f64>, p1: Vec<f64>) -> SftSequence {
    let mk = |p: &[f64]| SftStage::new("s", adjacency(), p.chunks(3).map(|r| r.to_vec()).collect()).unwrap();
    SftSequence::new(
        vec![mk(&p0), mk(&p1)],
        Schedule::Periodic { pattern: vec![0, 1, 1] },
        vec![PairObservable::from_symbols(&[1.0, -0.5, 0.2], 3)],
        Schedule::Periodic { pattern: vec![0] },
    )
    .unwrap()
}

fn mixed() -> &'static std::sync::Arc<IntervalModel> {
    static M: OnceLock<std::sync::Arc<IntervalModel>> = OnceLock::new();
    M.get_or_init(|| {
        let seq = IntervalSequence::periodic(vec![IntervalStage::doubling(), IntervalStage::markov_w()], IntervalObservable::Cos { amp: 1.0, freq: 1.0 });
        IntervalModel::new(seq, Grid::new(256).unwrap(), None).unwrap()
    })
}

fn potential() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distances_ignore_order(mut v in prop::collection::vec(-4.0f64..4.0, 2..60), seed in any::<u64>()) {
        let a = distances(&SampleSet::from_values(v.clone()), &[1.0, 3.0]);
        // deterministic shuffle
        let n = v.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            v.swap(i, (s >> 33) as usize % (i + 1));
        }
        let b = distances(&SampleSet::from_values(v), &[1.0, 3.0]);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn weighted_dominates_kolmogorov(v in prop::collection::vec(-4.0f64..4.0, 1..60), p in 0.5f64..4.0) {
        let s = SampleSet::from_values(v);
        let k = kolmogorov(&s);
        prop_assert!(k <= 1.0 && k > 0.0);
        prop_assert!(weighted_distance(&s, p) >= k - 1e-15);
    }

    #[test]
    fn wasserstein_ordering(v in prop::collection::vec(-4.0f64..4.0, 1..60)) {
        let d = distances(&SampleSet::from_values(v), &[]);
        // W1 is the L1 distance of the CDFs, and W1 ≤ W2
        prop_assert!((d.w1 - d.l1).abs() < 1e-9 * (1.0 + d.l1), "{} {}", d.w1, d.l1);
        prop_assert!(d.w1 <= d.w2 + 1e-12);
    }

    #[test]
    fn block_plans_tile(b in 0.5f64..12.0) {
        static T: OnceLock<seqlimits_core::martingale::CovarianceTable> = OnceLock::new();
        let t = T.get_or_init(|| observable_table(mixed().as_ref(), 400).unwrap());
        let plan = plan_from_table(t, b).unwrap();
        let mut next = 0;
        for &(a, l) in &plan.blocks {
            prop_assert_eq!(a, next);
            prop_assert!(l > 0);
            next = a + l;
        }
        if let Some((a, l, v)) = plan.partial {
            prop_assert_eq!(a, next);
            prop_assert!(v < b);
            next = a + l;
        }
        prop_assert_eq!(next, 400);
        prop_assert!(plan.within_bounds());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pulled_back_operators_fix_constants(p0 in potential(), p1 in potential(), j in 0i64..20) {
        let m = SftModel::new(gibbs::build(&sft(p0, p1), (0, 40), 60).unwrap());
        let ops = m.ops();
        let op = ops.operator(j).unwrap();
        let d = ops.weights(j).unwrap().len();
        let one = op.apply_re(&vec![1.0; d]);
        let w1 = ops.weights(j + 1).unwrap();
        for (x, w) in one.iter().zip(w1.iter()) {
            if *w > 0.0 {
                prop_assert!((x - 1.0).abs() < 1e-12);
            }
        }
        let g: Vec<f64> = (0..d).map(|i| (i as f64 * 1.7).sin()).collect();
        let lg = op.apply_re(&g);
        let before: f64 = g.iter().zip(ops.weights(j).unwrap().iter()).map(|(a, b)| a * b).sum();
        let after: f64 = lg.iter().zip(w1.iter()).map(|(a, b)| a * b).sum();
        prop_assert!((before - after).abs() < 1e-13);
    }

    #[test]
    fn finite_volume_masses_sum_to_one(p0 in potential(), p1 in potential(), j in 0i64..12) {
        let seq = sft(p0, p1);
        let sys = gibbs::build(&seq, (0, 30), 60).unwrap();
        let words = admissible_words(&seq, j, 3).unwrap();
        let mut total = 0.0;
        for w in &words {
            let b = finite_volume_mass(&seq, j, w, 60).unwrap();
            let a = sys.cylinder_mass(j, w).unwrap().mass;
            prop_assert!((a - b).abs() <= 1e-11 * b);
            total += b;
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interval_constants_fixed(j in 0i64..30) {
        let m = mixed();
        let op = m.ops().operator(j).unwrap();
        let one = op.apply_re(&vec![1.0; 257]);
        prop_assert!(one.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }
}
