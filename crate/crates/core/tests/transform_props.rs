use mrfv_core::models::Boundary;
use mrfv_core::mrtree::{decode, encode, predict, predict_bounded, threshold, MRConfig};
use proptest::prelude::*;

fn boundary() -> impl Strategy<Value = Boundary> {
    prop_oneof![Just(Boundary::Periodic), Just(Boundary::Transparent)]
}

fn fine_data() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (0usize..3, 1u32..9).prop_flat_map(|(r, l)| {
        let roots = [1usize, 2, 3][r];
        (prop::collection::vec(-1e3..1e3f64, roots << l), Just(roots))
    })
}

proptest! {
    #[test]
    fn encode_decode_roundtrip((x, roots) in fine_data(), b in boundary()) {
        let back = decode(&encode(&x, roots, b).unwrap()).unwrap();
        for (a, c) in x.iter().zip(&back) {
            prop_assert!((a - c).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn coarse_level_keeps_the_mean((x, roots) in fine_data(), b in boundary()) {
        let pyr = encode(&x, roots, b).unwrap();
        let fine_mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
        let coarse_mean: f64 = pyr.coarse.iter().sum::<f64>() / roots as f64;
        prop_assert!((fine_mean - coarse_mean).abs() <= 1e-9 * (1.0 + fine_mean.abs()));
    }

    #[test]
    fn thresholding_error_stays_small(x in prop::collection::vec(0.0..1.0f64, 256), eps in 1e-6..1e-2f64) {
        let mut pyr = encode(&x, 1, Boundary::Periodic).unwrap();
        let cfg = MRConfig { max_level: 8, epsilon: eps, ..MRConfig::default() };
        threshold(&mut pyr, &cfg);
        let back = decode(&pyr).unwrap();
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
        // per-level tolerances sum to below 2 eps; prediction amplifies by a bounded factor
        prop_assert!(err <= 8.0 * eps, "mean error {err} for eps {eps}");
    }

    #[test]
    fn bounded_prediction_stays_in_range(p in -5.0..5.0f64, l in -5.0..5.0f64, r in -5.0..5.0f64) {
        let (a, b) = predict_bounded(p, l, r);
        let lo = p.min(l).min(r);
        let hi = p.max(l).max(r);
        prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
        prop_assert!(b >= lo - 1e-12 && b <= hi + 1e-12);
        prop_assert!((0.5 * (a + b) - p).abs() <= 1e-12);
    }

    #[test]
    fn bounded_prediction_agrees_on_monotone_smooth_data(p in -5.0..5.0f64, s in 0.0..1.0f64) {
        let (l, r) = (p - s, p + s);
        prop_assert_eq!(predict_bounded(p, l, r), predict(p, l, r));
    }
}
