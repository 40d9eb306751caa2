use ddlab_core::drawdown::{build_kw, build_kw_with, DrawdownSpec, KwOptions, TransformPair};
use ddlab_core::monotone::Representation;
use proptest::prelude::*;

// mpmath.quad at 30 digits, integrand split at the knots
const K3_PIECEWISE: f64 = 4.614_514_946_168_078;
const K10_TWO_KNOT: f64 = 32.600_238_174_107_477;

#[test]
fn piecewise_k_matches_high_precision_quadrature() {
    let w = DrawdownSpec::piecewise_linear(vec![(1.0, 0.3), (2.0, 0.6)], 0.0).unwrap();
    let k = build_kw(&w, 1.0).unwrap();
    assert_eq!(k.representation(), Representation::Quadrature);
    assert!((k.eval(3.0) / K3_PIECEWISE - 1.0).abs() < 1e-10);
    // the same value from the two log integrals
    let closed = (2f64.ln() / 0.7 + (2.4f64 / 1.4).ln()).exp();
    assert!((k.eval(3.0) / closed - 1.0).abs() < 1e-10);
}

#[test]
fn two_knot_k_with_tail() {
    let w = DrawdownSpec::piecewise_linear(vec![(1.0, 0.3), (3.0, 1.2)], 0.2).unwrap();
    let k = build_kw(&w, 1.0).unwrap();
    assert!((k.eval(10.0) / K10_TWO_KNOT - 1.0).abs() < 1e-10);
    let f = TransformPair::new(&w, 1.0).unwrap().f;
    assert!((f.eval(K10_TWO_KNOT) - 10.0).abs() < 1e-9);
}

#[test]
fn quadrature_agrees_with_closed_forms() {
    let forced = KwOptions {
        force_quadrature: true,
        ..Default::default()
    };
    for w in [
        DrawdownSpec::linear(0.5).unwrap(),
        DrawdownSpec::linear(0.9).unwrap(),
        DrawdownSpec::constant(0.4).unwrap(),
    ] {
        let exact = build_kw(&w, 1.0).unwrap();
        let quad = build_kw_with(&w, 1.0, forced).unwrap();
        for &x in &[1.0, 1.3, 7.0, 250.0, 1e4] {
            let (a, b) = (exact.eval(x), quad.eval(x));
            assert!((a / b - 1.0).abs() < 1e-10, "{w:?} at {x}: {a} vs {b}");
            let y = exact.eval(x);
            assert!((quad.inverse(y).unwrap() / x - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn jump_in_w_is_integrated_on_the_correct_side() {
    let w = DrawdownSpec::piecewise_linear(vec![(1.0, 0.2), (2.0, 0.4), (2.0, 1.0)], 0.0).unwrap();
    let k = build_kw(&w, 1.0).unwrap();
    // ∫_1^2 du/(0.8u) + ∫_2^4 du/(u-1)
    let closed = (2f64.ln() / 0.8 + 3f64.ln()).exp();
    assert!((k.eval(4.0) / closed - 1.0).abs() < 1e-10);
}

fn piecewise_strategy() -> impl Strategy<Value = DrawdownSpec> {
    (0.05f64..0.6, prop::collection::vec((0.1f64..3.0, 0.0f64..0.3), 1..5), 0.0f64..0.6).prop_map(
        |(a0, steps, tail)| {
            let mut x = 1.0;
            let mut w = a0;
            let mut knots = vec![(x, w)];
            for (dx, dw) in steps {
                x += dx;
                // keep w(x)/x ≤ 0.9
                w = (w + dw * dx).min(0.9 * x);
                knots.push((x, w));
            }
            DrawdownSpec::piecewise_linear(knots, tail.min(0.9)).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_linear(alpha in 0.02f64..0.97, x in 1.0f64..1e3) {
        let p = TransformPair::new(&DrawdownSpec::linear(alpha).unwrap(), 1.0).unwrap();
        let back = p.f.eval(p.k.eval(x));
        prop_assert!((back / x - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ode_and_elasticity_identities(w in piecewise_strategy(), x in 1.0f64..40.0) {
        let k = build_kw(&w, 1.0).unwrap();
        let (kv, kd) = (k.eval(x), k.deriv(x));
        prop_assert!((x - kv / kd - w.eval(x)).abs() < 1e-9 * x);
        let elasticity = x * kd / kv;
        prop_assert!((elasticity - 1.0 / (1.0 - w.eval(x) / x)).abs() < 1e-9 * elasticity);
    }

    #[test]
    fn sandwich_and_inverse(w in piecewise_strategy(), x in 1.0f64..40.0) {
        let p = TransformPair::new(&w, 1.0).unwrap();
        let a1 = w.alpha1(1.0);
        let kv = p.k.eval(x);
        prop_assert!(kv >= x * (1.0 - 1e-12));
        prop_assert!(kv <= x.powf(1.0 / (1.0 - a1)) * (1.0 + 1e-10));
        prop_assert!((p.f.eval(kv) / x - 1.0).abs() < 1e-9);
        prop_assert!((p.f.eval(0.0) - w.eval(1.0)).abs() < 1e-10);
    }
}
