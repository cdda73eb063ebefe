use kforge::lyapunov::{certify_decay, dini_bound_maxtype, DecayMode, MaxTypeFunctional};
use kforge::sim::{integrate, random_history, DisturbanceSignal, GeneralRfdeSpec};
use kforge::History;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sandwich(seed in 0u64..10_000, sigma in 0.05..2.0f64) {
        let f = MaxTypeFunctional::quadratic(sigma, 1.0);
        let x = random_history(seed, 1.0, 48, 2, 3.0).unwrap();
        let v = f.eval_v(&x);
        let grid_max = (0..=48).map(|k| f.q(x.sample(k))).fold(0.0, f64::max);
        prop_assert!(f.q(x.newest()) <= v);
        prop_assert!(v <= grid_max * (1.0 + 1e-12));
        prop_assert!(v >= (-2.0 * sigma).exp() * grid_max * (1.0 - 1e-12));
    }

    #[test]
    fn tie_case_homogeneity(c in 0.1..3.0f64, w in -5.0..5.0f64, lambda in 0.01..50.0f64, sigma in 0.05..2.0f64) {
        let f = MaxTypeFunctional::quadratic(sigma, 1.0);
        let x = History::constant(1.0, 16, &[c]).unwrap();
        let vx = f.eval_v(&x);
        let scaled = dini_bound_maxtype(&f, &x, &[lambda * w]).unwrap();
        let slope = (f.grad_q)(&[c])[0] * (lambda * w);
        prop_assert_eq!(scaled, (-2.0 * sigma * vx).max(slope));
    }

    #[test]
    fn certificate_is_shift_invariant(t0 in 0u32..8, x0 in 0.1..2.0f64) {
        let spec = GeneralRfdeSpec::new(1, 1.0, |_, _, x: &History, _, out: &mut [f64]| {
            out[0] = -2.0 * x.newest()[0];
            Ok(())
        });
        let init = History::constant(1.0, 32, &[x0]).unwrap();
        let d = DisturbanceSignal::zero(0, 1.0 / 32.0);
        let f = MaxTypeFunctional::quadratic(0.5, 1.0);
        let mode = DecayMode::Exponential { sigma: 0.5 };
        let a = certify_decay(&integrate(&spec, &init, &d, |_, _| vec![], 0.0, 3.0, 1.0 / 32.0).unwrap(), &f, &mode, 1e-3).unwrap();
        let s = t0 as f64;
        let d = DisturbanceSignal { t0: s, ..d };
        let b = certify_decay(&integrate(&spec, &init, &d, |_, _| vec![], s, s + 3.0, 1.0 / 32.0).unwrap(), &f, &mode, 1e-3).unwrap();
        prop_assert_eq!(a.pass, b.pass);
        prop_assert!((a.worst_margin - b.worst_margin).abs() <= 1e-12);
    }
}
