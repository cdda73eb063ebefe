use kforge::dsl::{parse, BinOp, Env, Expr, Var};
use kforge::History;
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0u32..64).prop_map(|k| Expr::Num(k as f64 / 8.0)),
        Just(Expr::Var(Var::T)),
        Just(Expr::Var(Var::R)),
        (1usize..3).prop_map(|j| Expr::Var(Var::D(j))),
        Just(Expr::Var(Var::U(1))),
        (1usize..3).prop_map(Expr::Access),
        (1usize..3).prop_map(Expr::Norm),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        let op = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div), Just(BinOp::Pow)];
        prop_oneof![
            (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::bin(o, a, b)),
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (1usize..3, inner).prop_map(|(i, tau)| Expr::Delay(i, Box::new(tau))),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn print_parse_round_trip(e in expr()) {
        let printed = e.to_string();
        let once = parse(&printed).unwrap();
        let twice = parse(&once.to_string()).unwrap();
        prop_assert_eq!(once, twice);
    }
}

#[test]
fn evaluation_is_pure() {
    let x = History::from_fn(1.0, 32, 2, |t: f64| vec![1.0 + t, (2.0 * t).cos()]).unwrap();
    let e = parse("d1*integral(sq(x1), r) + x2(0) - delay(x1, 0.25) / (1 + norm_r(x2))").unwrap();
    let env = Env { t: 0.5, r: 1.0, x: Some(&x), d: &[0.3], u: &[], s: None };
    let first = e.eval(&env).unwrap();
    for _ in 0..1000 {
        assert_eq!(e.eval(&env).unwrap().to_bits(), first.to_bits());
    }
}

#[test]
fn precedence_corpus() {
    let env = Env::new(1.0);
    for (text, want) in [("1+2*3", 7.0), ("-2^2", -4.0), ("2^3^2", 512.0), ("8/4/2", 1.0), ("(1+2)*3", 9.0), ("1-2-3", -4.0)] {
        assert_eq!(parse(text).unwrap().eval::<f64>(&env).unwrap(), want, "{text}");
    }
}

#[test]
fn error_positions() {
    let err = parse("x1(").unwrap_err();
    assert_eq!(err.column, 4);
    assert!(parse("d1 * ").is_err());
    assert!(parse("frob(x1)").is_err());
}
