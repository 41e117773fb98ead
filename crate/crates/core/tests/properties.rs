mod common;

use proptest::prelude::*;

use clausetriage::audit::{parse_real17, real17};
use clausetriage::classifier::{fuzzy_forward, sigmoid, FuzzyHeadParams};
use clausetriage::metrics::{self, binary_metrics, ECE_BINS};
use clausetriage::rank::softmax;
use clausetriage::triage::{tune_thresholds, Domain};
use common::*;

fn scored() -> impl Strategy<Value = Vec<(f64, bool)>> {
    proptest::collection::vec((prop_oneof![0.0f64..=1.0, (0u32..=4).prop_map(|k| k as f64 / 4.0)], any::<bool>()), 1..120)
}

proptest! {
    #[test]
    fn ndcg_matches_oracle(grades in proptest::collection::vec(0u32..5, 1..25), k in 1usize..12) {
        let got = metrics::ndcg_at_k(&grades, k, 2.0);
        let want = ndcg_oracle(&grades, k, 2.0);
        match (got, want) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9),
            (a, b) => prop_assert_eq!(a, b),
        }
        if let Some(v) = got {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn binary_metrics_match_oracles(items in scored(), threshold in 0.0f64..1.0) {
        let p: Vec<f64> = items.iter().map(|x| x.0).collect();
        let y: Vec<u8> = items.iter().map(|x| u8::from(x.1)).collect();
        let m = binary_metrics(&p, &y, threshold).unwrap();
        let c = counts_oracle(&p, &y, threshold);
        prop_assert_eq!((m.confusion.tp, m.confusion.fp, m.confusion.tn, m.confusion.fn_), (c.tp, c.fp, c.tn, c.fn_));
        let (pr, re, f1) = prf_oracle(&c);
        prop_assert!((m.precision - pr).abs() <= 1e-12 && (m.recall - re).abs() <= 1e-12 && (m.f1 - f1).abs() <= 1e-12);
        match (m.auc, auc_oracle(&p, &y)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9),
            (a, b) => prop_assert_eq!(a, b),
        }
        prop_assert!((m.ece - ece_oracle(&p, &y, ECE_BINS)).abs() <= 1e-9);
    }

    #[test]
    fn tuned_band_meets_cap_or_is_flagged(items in scored(), grid_n in 2usize..25, cap in 0.0f64..0.5) {
        let mut values: Vec<f64> = items.iter().map(|x| x.0).collect();
        let mut labels: Vec<u8> = items.iter().map(|x| u8::from(x.1)).collect();
        values.extend([0.3, 0.7]);
        labels.extend([0, 1]);
        let t = tune_thresholds(&values, &labels, grid_n, cap, Domain::Probability).unwrap();
        prop_assert!(t.infeasible || (t.auto > 0 && t.auto_error <= cap));
        prop_assert!(t.thresholds.low() <= t.thresholds.high());
        let want = tune_oracle(&values, &labels, grid_n, cap, Domain::Probability);
        prop_assert_eq!((t.thresholds.low(), t.thresholds.high(), t.infeasible), (want.low, want.high, want.infeasible));
    }

    #[test]
    fn sigmoid_is_monotone_and_bounded(a in -800.0f64..800.0, b in -800.0f64..800.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(sigmoid(lo) <= sigmoid(hi));
        prop_assert!((0.0..=1.0).contains(&sigmoid(a)));
    }

    #[test]
    fn fuzzy_output_is_a_distribution(seed in any::<u64>(), s in -1.0f64..=1.0) {
        let p = FuzzyHeadParams::random_init(16, &mut clausetriage::audit::SeededRng::new(seed));
        let u = fuzzy_forward(s, &p);
        prop_assert!(u.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one(scores in proptest::collection::vec(-50.0f64..50.0, 1..30), t in 0.05f64..5.0) {
        let p = softmax(&scores, t);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn real17_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(parse_real17(&real17(x)).unwrap().to_bits(), x.to_bits());
    }
}
