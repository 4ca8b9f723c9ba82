mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use septrace::harness::histogram;
use septrace::netcore::{argmax, Activation};
use septrace::separation::{noise_sensitive_loss, normalize_logits};
use septrace::tracing::{dol_from_logits, estimate_multicopy_accuracy, exact_multicopy_accuracy, DolDistribution, Role};
use septrace::Exec;

fn vector(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

fn nonzero_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..12)
        .prop_flat_map(|n| (vector(n), vector(n)))
        .prop_filter("non-degenerate", |(a, b)| {
            a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_matches_finite_differences(seed: u64, h in 0usize..3, o in 0usize..3) {
        let hidden = [Activation::Relu, Activation::Tanh, Activation::Identity][h];
        let output = [Activation::Tanh, Activation::Identity, Activation::RmsTanh][o];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, x, g) = common::random_case(&mut rng, hidden, output);
        prop_assert!(common::gradient_error_ratio(&net, &x, &g) <= 1.0);
    }

    #[test]
    fn loss_is_a_bounded_symmetric_scale_free_cosine((a, b) in nonzero_pair(), la in 0.01f64..100.0, lb in -100.0f64..-0.01) {
        let l = noise_sensitive_loss(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&l));
        prop_assert!((l - noise_sensitive_loss(&b, &a).unwrap()).abs() < 1e-12);
        let sa: Vec<f64> = a.iter().map(|v| v * la).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * lb).collect();
        prop_assert!((l - noise_sensitive_loss(&sa, &sb).unwrap()).abs() < 1e-9);
        prop_assert!((noise_sensitive_loss(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn min_max_normalization_keeps_order_and_spans_unit_interval(v in vector(10), shift in -50.0f64..50.0, scale in 0.1f64..20.0) {
        prop_assume!(v.iter().any(|&x| (x - v[0]).abs() > 1e-6));
        let n = normalize_logits(&v);
        prop_assert!(n.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert_eq!(n.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        prop_assert!((n.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 1.0).abs() < 1e-12);
        prop_assert_eq!(argmax(&n), argmax(&v));
        let moved: Vec<f64> = v.iter().map(|x| x * scale + shift).collect();
        for (a, b) in n.iter().zip(normalize_logits(&moved)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dol_is_shift_invariant_and_scale_covariant(v in vector(6), att in 0usize..6, tru in 0usize..6, c in -3.0f64..3.0, lambda in 1.0f64..10.0) {
        prop_assume!(att != tru);
        let d = dol_from_logits(&v, att, tru).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        prop_assert!((dol_from_logits(&shifted, att, tru).unwrap() - d).abs() < 1e-9);
        let scaled: Vec<f64> = v.iter().map(|x| x * lambda).collect();
        prop_assert!((dol_from_logits(&scaled, att, tru).unwrap() - lambda * d).abs() < 1e-9);
    }

    #[test]
    fn multicopy_accuracy_never_increases_with_more_copies(
        s in prop::collection::vec(-2.0f64..2.0, 1..8),
        v in prop::collection::vec(-2.0f64..2.0, 1..8),
        seed: u64,
    ) {
        let d_s = DolDistribution::new(Role::Source, s).unwrap();
        let d_v = DolDistribution::new(Role::Victim, v).unwrap();
        let mut prev_est = f64::INFINITY;
        let mut prev_exact = f64::INFINITY;
        for n in 2..=10 {
            let est = estimate_multicopy_accuracy(&d_s, &d_v, n, 500, seed, Exec::Sequential).unwrap();
            let exact = exact_multicopy_accuracy(&d_s, &d_v, n).unwrap();
            prop_assert!(est <= prev_est && exact <= prev_exact + 1e-12);
            prev_est = est;
            prev_exact = exact;
        }
    }

    #[test]
    fn histogram_counts_every_value_once(v in prop::collection::vec(-2.0f64..2.0, 1..200)) {
        let bins = histogram(&v, 0.05);
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), v.len());
        for b in &bins {
            let hits = v.iter().filter(|&&x| x >= b.lo - 1e-12 && x < b.hi + 1e-12).count();
            prop_assert!(hits >= b.count);
        }
    }
}
