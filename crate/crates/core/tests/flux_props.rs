use mrfv_core::models::presets::preset;
use mrfv_core::{eo_flux, ModelSpec};
use proptest::prelude::*;

fn models() -> Vec<ModelSpec> {
    ["traffic-ex1", "clarifier-ex2", "clarifier-ex3"].iter().map(|n| preset(n).unwrap().model().unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn eo_flux_is_consistent_and_monotone(which in 0usize..3, a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64) {
        let ms = models();
        let m = &ms[which];
        let um = m.u_max();
        let (u, v, w) = (a * um, b * um, c * um);
        let scale = 1e-9 * (1.0 + m.max_flux_derivative() * um);
        for branch in m.gamma_field().branches() {
            let f = m.flux_function().value(branch.gamma(), u);
            prop_assert!((eo_flux(m, branch, u, u) - f).abs() <= scale);
            // nondecreasing in the left state, nonincreasing in the right
            let (lo, hi) = (u.min(w), u.max(w));
            prop_assert!(eo_flux(m, branch, lo, v) <= eo_flux(m, branch, hi, v) + scale);
            prop_assert!(eo_flux(m, branch, v, lo) + scale >= eo_flux(m, branch, v, hi));
        }
    }
}
