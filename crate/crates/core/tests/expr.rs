use std::collections::HashMap;

use halfsphere_core::expr::{rational, EvalError, Node};
use halfsphere_core::{parse, Expr, Jet2, Program};
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn parses_the_gallery_polynomial_as_five_terms() {
    let e = parse("a*x + a*y + x*y - c1*x^3 - c2*y^3").unwrap();
    let v = e.eval_at(&[("a", 0.3), ("x", 0.5), ("y", -0.25), ("c1", 0.1), ("c2", 0.2)]).unwrap();
    let expect = 0.3 * 0.5 + 0.3 * -0.25 + 0.5 * -0.25 - 0.1 * 0.125 - 0.2 * -0.015625;
    assert!((v - expect).abs() < 1e-15);
    // four binary +/- nodes at the top: (((t1 + t2) + t3) − t4) − t5
    let mut n = 0;
    let mut cur = e;
    loop {
        let next = match cur.node() {
            Node::Add(l, _) | Node::Sub(l, _) => l.clone(),
            _ => break,
        };
        n += 1;
        cur = next;
    }
    assert_eq!(n, 4);
}

#[test]
fn zero_literal_and_log_quotient() {
    assert!(parse("0").unwrap().is_zero());
    let e = parse("ln(1+w3)/2").unwrap();
    assert!(matches!(e.node(), Node::Div(..) | Node::Mul(..)));
    assert!((e.eval_at(&[("w3", 1.0)]).unwrap() - std::f64::consts::LN_2 / 2.0).abs() < 1e-16);
}

#[test]
fn reserved_names_and_offsets() {
    let err = parse("x + * y").unwrap_err();
    assert_eq!(err.offset, 4);
    assert!(parse("ln = 3").is_err());
    assert!(parse("pi(2)").is_err());
    let pi = parse("2*pi").unwrap();
    assert!((pi.eval_at(&[]).unwrap() - std::f64::consts::TAU).abs() < 1e-15);
}

#[test]
fn derivative_examples() {
    let x = Expr::var("x");
    let d = x.pow(3).diff("x");
    for v in [-1.5, 0.0, 2.0] {
        assert!((d.eval_at(&[("x", v)]).unwrap() - 3.0 * v * v).abs() < 1e-14);
    }
    let l = parse("ln(1+w3)").unwrap().diff("w3");
    assert!((l.eval_at(&[("w3", 0.5)]).unwrap() - 1.0 / 1.5).abs() < 1e-15);
    assert!(Expr::constant(rational(7, 3)).diff("x").is_zero());
}

#[test]
fn eval_examples() {
    assert_eq!(parse("x^2").unwrap().eval_at(&[("x", 3.0)]).unwrap(), 9.0);
    let p = parse("1 - 15*a^4 + 2*a^6").unwrap();
    assert!((p.eval_at(&[("a", 0.5)]).unwrap() - 0.09375).abs() < 1e-15);
    // exact: 1 − 15(13/25)⁴ + 2(13/25)⁶
    let a = 0.52f64;
    let exact = 1.0 - 15.0 * a.powi(4) + 2.0 * a.powi(6);
    assert!((p.eval_at(&[("a", 0.52)]).unwrap() - exact).abs() < 1e-15);
    assert!((exact + 0.057201180).abs() < 1e-8);
    assert_eq!(p.eval_at(&[]), Err(EvalError::Unbound("a".into())));
}

#[test]
fn jet_examples() {
    let jet = |e: &str, j: Jet2| {
        let mut m = HashMap::new();
        m.insert("x".to_string(), j);
        parse(e).unwrap().eval_jet(&m).unwrap()
    };
    let j = jet("x^2", Jet2::new(1.0, 1.0, 0.0));
    assert_eq!((j.value, j.d1, j.d2), (1.0, 2.0, 2.0));
    let j = jet("ln(1+x)", Jet2::new(0.0, 1.0, 0.0));
    assert_eq!((j.value, j.d1, j.d2), (0.0, 1.0, -1.0));
    let j = jet("sqrt(x)", Jet2::new(1.0, 2.0, 0.0));
    assert!((j.value - 1.0).abs() < 1e-15 && (j.d1 - 1.0).abs() < 1e-15 && (j.d2 + 1.0).abs() < 1e-15);
    let c = Jet2::constant(3.5);
    assert_eq!((c.d1, c.d2), (0.0, 0.0));
}

#[test]
fn half_integer_powers_and_artanh() {
    let e = parse("(1+2*a^2)^5").unwrap().sqrt();
    let v = e.eval_at(&[("a", 0.3)]).unwrap();
    assert!((v - 1.18f64.powf(2.5)).abs() < 1e-14);
    // homogeneous mode-0 solution artanh(cos θ) − 1 is representable and blows up at the pole
    let h = parse("artanh(t) - 1").unwrap();
    assert!(h.eval_at(&[("t", 0.999_999)]).unwrap() > 6.0);
}

// ---------------------------------------------------------------------------
// properties

/// Random expressions in x, y that are finite on [-1, 1]².
fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        Just(Expr::var("x")),
        Just(Expr::var("y")),
        (-5i64..=5, 1i64..=4).prop_map(|(n, d)| Expr::ratio(n, d)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a / (Expr::int(2) + b.pow(2))),
            (inner.clone(), 0i32..=3).prop_map(|(a, n)| a.pow(n)),
            inner.clone().prop_map(|a| (Expr::one() + a.pow(2)).ln()),
            inner.clone().prop_map(|a| (Expr::int(3) + a.pow(2)).sqrt()),
            inner.clone().prop_map(|a| a.sin()),
            inner.clone().prop_map(|a| a.cos()),
            inner.prop_map(|a| (a.pow(2) / (Expr::int(2) + a.pow(2))).artanh()),
        ]
    })
}

fn at(e: &Expr, x: f64, y: f64) -> f64 {
    e.eval_at(&[("x", x), ("y", y)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn derivative_matches_central_difference(e in arb_expr(), x in -0.9f64..0.9, y in -0.9f64..0.9) {
        let h = 1e-5;
        let fd = (at(&e, x + h, y) - at(&e, x - h, y)) / (2.0 * h);
        let d = at(&e.diff("x"), x, y);
        prop_assert!((d - fd).abs() <= 1e-6 * d.abs().max(1.0), "d={d} fd={fd} e={e}");
    }

    #[test]
    fn jets_match_symbolic_derivatives(e in arb_expr(), x in -0.9f64..0.9, y in -0.9f64..0.9) {
        let mut b = HashMap::new();
        b.insert("x".to_string(), Jet2::new(x, 1.0, 0.0));
        b.insert("y".to_string(), Jet2::constant(y));
        let j = e.eval_jet(&b).unwrap();
        let d1 = e.diff("x");
        prop_assert!(close(j.value, at(&e, x, y), 1e-12));
        prop_assert!(close(j.d1, at(&d1, x, y), 1e-10));
        prop_assert!(close(j.d2, at(&d1.diff("x"), x, y), 1e-10));
    }

    #[test]
    fn jet_product_is_truncated_taylor_product(a in prop::array::uniform3(-3.0f64..3.0), b in prop::array::uniform3(-3.0f64..3.0)) {
        let (p, q) = (Jet2::new(a[0], a[1], a[2]), Jet2::new(b[0], b[1], b[2]));
        let r = p * q;
        prop_assert_eq!(r.value, a[0] * b[0]);
        prop_assert_eq!(r.d1, a[1] * b[0] + a[0] * b[1]);
        prop_assert!((r.d2 - (a[2] * b[0] + 2.0 * a[1] * b[1] + a[0] * b[2])).abs() < 1e-13);
    }

    #[test]
    fn print_parse_round_trip(e in arb_expr(), pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 100)) {
        let back = parse(&e.to_string()).unwrap();
        for (x, y) in pts {
            prop_assert!(close(at(&e, x, y), at(&back, x, y), 1e-13), "{} vs {}", e, back);
        }
    }

    #[test]
    fn compiled_program_matches_tree(e in arb_expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let p = Program::compile(&[e.clone(), e.diff("y")], &["x", "y"]).unwrap();
        let v = p.eval_all(&[x, y]).unwrap();
        prop_assert!(close(v[0], at(&e, x, y), 1e-13));
        prop_assert!(close(v[1], at(&e.diff("y"), x, y), 1e-13));
    }

    #[test]
    fn constants_differentiate_to_zero(n in -1000i64..1000, d in 1i64..1000) {
        prop_assert!(Expr::ratio(n, d).diff("x").is_zero());
    }
}
