use std::collections::HashMap;

use proptest::prelude::*;
use symsde::expr::{evaluate, parse, simplify, Bindings, Expr};
use symsde::flow::FlowField;
use symsde::mc::{estimate, McConfig, Simulator};
use symsde::presets::{load_preset, PresetId, PresetOptions};
use symsde::symmetry::{compose, invert, transformation_difference};

fn at(x: f64, y: f64) -> HashMap<String, f64> {
    HashMap::from([("x".to_string(), x), ("y".to_string(), y)])
}

fn eval(e: &Expr, x: f64, y: f64) -> f64 {
    evaluate(e, &at(x, y), &Bindings::new()).unwrap()
}

/// Sums of `c·x^i·y^j` with small integer exponents.
fn polynomial() -> impl Strategy<Value = Expr> {
    prop::collection::vec((-3.0..3.0f64, 0i64..4, 0i64..4), 1..6).prop_map(|terms| {
        Expr::add(
            terms
                .into_iter()
                .map(|(c, i, j)| {
                    Expr::mul(vec![
                        Expr::constant(c),
                        Expr::coord("x").powr(i, 1),
                        Expr::coord("y").powr(j, 1),
                    ])
                })
                .collect(),
        )
    })
}

/// Trees over `x`, `y` that stay finite on `[-1, 1]²`.
fn tree() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-4.0..4.0f64).prop_map(Expr::constant),
        (1i64..5).prop_map(|k| Expr::constant(k as f64)),
        Just(Expr::coord("x")),
        Just(Expr::coord("y")),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::add),
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::mul),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            inner.clone().prop_map(|a| -a),
            (inner.clone(), 0i64..4).prop_map(|(a, k)| a.powr(k, 1)),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner.clone().prop_map(|a| (a.sin()).exp()),
            (inner.clone(), inner).prop_map(|(a, b)| a / (b.powr(2, 1) + 1.0)),
        ]
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn derivative_matches_central_difference(p in polynomial(), x in -1.5..1.5f64, y in -1.5..1.5f64) {
        let h = 1e-5;
        for (c, (xp, yp, xm, ym)) in [("x", (x + h, y, x - h, y)), ("y", (x, y + h, x, y - h))] {
            let fd = (eval(&p, xp, yp) - eval(&p, xm, ym)) / (2.0 * h);
            let d = eval(&p.differentiate(c), x, y);
            prop_assert!(close(d, fd, 1e-6), "d/d{c} {p}: {d} vs {fd}");
        }
    }
}

proptest! {
    #[test]
    fn simplify_preserves_value(e in tree(), x in -1.0..1.0f64, y in -1.0..1.0f64) {
        let (a, b) = (eval(&e, x, y), eval(&simplify(&e), x, y));
        prop_assert!(close(a, b, 1e-9), "{e} -> {}: {a} vs {b}", simplify(&e));
    }

    #[test]
    fn printing_round_trips(e in tree(), x in -1.0..1.0f64, y in -1.0..1.0f64) {
        let back = parse(&e.to_string()).unwrap();
        prop_assert!(close(eval(&e, x, y), eval(&back, x, y), 1e-12), "{e} vs {back}");
        prop_assert_eq!(back.to_string(), e.to_string());
    }

    #[test]
    fn ou_finite_family_composes_additively(a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let p = load_preset(PresetId::Ou, &PresetOptions::default()).unwrap();
        let f = p.finite.unwrap();
        let t = symsde::expr::ZeroTest::new(20, 1e-8, 1);
        let bind = p.model.bindings();
        let r = transformation_difference(&compose(&f.at(a), &f.at(b)).unwrap(), &f.at(a + b), &p.sample_box, &t, bind).unwrap();
        prop_assert!(r.pass);
        let r = transformation_difference(&invert(&f.at(a)).unwrap(), &f.at(-a), &p.sample_box, &t, bind).unwrap();
        prop_assert!(r.pass);
    }

    #[test]
    fn integrated_flow_is_a_one_parameter_group(
        x in -2.0..2.0f64, z in 0.0..1.0f64, a in -0.4..0.4f64, b in -0.4..0.4f64,
    ) {
        let p = load_preset(PresetId::Brownian, &PresetOptions::default()).unwrap();
        let field = FlowField::new(&p.model, &p.symmetry, p.model.bindings()).unwrap();
        let dl = 1e-3;
        let first = field.point(&[x, z], a, dl).unwrap();
        let second = field.point(&first.phi, b, dl).unwrap();
        let both = field.point(&[x, z], a + b, dl).unwrap();
        for (u, v) in second.phi.iter().zip(&both.phi) {
            prop_assert!(close(*u, *v, 1e-8));
        }
        prop_assert!(close(first.eta * second.eta, both.eta, 1e-8));
        let h = first.h[0] + first.eta.sqrt() * second.h[0];
        prop_assert!(close(h, both.h[0], 1e-8), "{h} vs {}", both.h[0]);
    }

    #[test]
    fn estimate_is_shift_equivariant(v in prop::collection::vec(-10.0..10.0f64, 2..200), c in -5.0..5.0f64) {
        let e = estimate(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let s = estimate(&shifted).unwrap();
        prop_assert!(close(s.mean, e.mean + c, 1e-12));
        prop_assert!(close(s.std_error, e.std_error, 1e-9));
        let n = v.len() as f64;
        let var = v.iter().map(|x| (x - e.mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!(close(e.std_error, (var / n).sqrt(), 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn brownian_increments_are_standard_normal(seed in any::<u64>()) {
        let p = load_preset(PresetId::Brownian, &PresetOptions::default()).unwrap();
        let cfg = McConfig::new(2000, 0.25, 1.0, seed);
        let sim = Simulator::new(&p.model, &p.x0, &cfg).unwrap();
        let w1: Vec<f64> = sim.map_paths(|path| Ok(path.state(4)[0])).unwrap();
        let e = estimate(&w1).unwrap();
        // sample mean of N(0, 1) over 2000 paths; 5σ band
        prop_assert!(e.mean.abs() < 5.0 / (2000f64).sqrt(), "{e:?}");
        let sq = estimate(&w1.iter().map(|w| w * w).collect::<Vec<_>>()).unwrap();
        prop_assert!((sq.mean - 1.0).abs() < 5.0 * (2.0f64 / 2000.0).sqrt(), "{sq:?}");
    }

    #[test]
    fn paths_do_not_depend_on_evaluation_order(seed in any::<u64>(), i in 0usize..50) {
        let p = load_preset(PresetId::Ou, &PresetOptions::default()).unwrap();
        let cfg = McConfig::new(50, 0.05, 1.0, seed);
        let sim = Simulator::new(&p.model, &p.x0, &cfg).unwrap();
        let all: Vec<Vec<f64>> = sim.map_paths(|path| Ok(path.state(20).to_vec())).unwrap();
        prop_assert_eq!(&sim.path(i).unwrap().state(20).to_vec(), &all[i]);
    }
}
