use proptest::prelude::*;
use shadowlab::flow::{euclidean, Block, BlockLinearField};
use shadowlab::repar::PiecewiseLinearRepar;
use shadowlab::spiral::{
    arc_distance, cert_estimate, cert_search, cert_validate, check_trial, SpiralError, SpiralParams, H_SEGMENTS,
};

fn p1() -> SpiralParams {
    SpiralParams::spiral(1.0, 1.0, std::f64::consts::FRAC_PI_4, 2.0)
}

/// Grid residual computed with the exact block flow.
fn oracle_residual(p: &SpiralParams, t: f64, d0: f64, x0: &[f64], x1: &[f64], h: &PiecewiseLinearRepar) -> f64 {
    let f = BlockLinearField::new(vec![Block::Spiral { a: p.a, b: p.b }]).unwrap();
    let step = d0 / 4.0;
    let n = (t / step - 1e-9).ceil() as usize;
    (0..=n)
        .map(|k| (k as f64 * step).min(t))
        .map(|s| euclidean(&f.evolve(s, x0).unwrap(), &f.evolve(h.eval(s), x1).unwrap()))
        .fold(0.0, f64::max)
}

#[test]
fn certificate_hypotheses_hold_for_the_worst_trial() {
    let p = p1();
    let cert = cert_search(&p, 5000, 3).unwrap();
    let w = cert.worst_trial.as_ref().expect("admissible trials exist");
    assert!(w.d < cert.d0);
    assert!(shadowlab::flow::norm(&w.x0) >= w.d);
    assert!(w.h.min_class() <= p.l * w.d + 1e-12);
    let r = oracle_residual(&p, cert.t, cert.d0, &w.x0, &w.x1, &w.h);
    assert!(r < p.l * w.d, "{r} vs {}", p.l * w.d);
    assert!((r - w.residual).abs() <= 1e-9 * p.l * w.d);
    assert!((arc_distance(&w.x0, &w.x1) - w.deviation).abs() <= 1e-12);
    assert!(cert.worst < p.eps);
}

#[test]
fn identical_seeds_give_identical_certificates() {
    let a = cert_search(&p1(), 3000, 17).unwrap();
    let b = cert_search(&p1(), 3000, 17).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn short_window_is_rejected_with_a_record() {
    let p = p1();
    let (_, d0) = cert_estimate(&p).unwrap();
    let v = cert_validate(&p, 0.1, d0, 5000, 1).unwrap();
    assert!(!v.pass);
    assert!(v.worst.unwrap().deviation >= p.eps);
}

#[test]
fn parameter_checks() {
    for bad in [
        SpiralParams::spiral(-1.0, 1.0, 0.5, 1.0),
        SpiralParams::spiral(1.0, 0.0, 0.5, 1.0),
        SpiralParams::spiral(1.0, 1.0, 0.0, 1.0),
        SpiralParams::line(1.0, 0.5, 0.0),
    ] {
        assert!(matches!(cert_search(&bad, 10, 0), Err(SpiralError::InvalidParameter(_))));
    }
}

#[test]
fn arc_distance_range() {
    assert_eq!(arc_distance(&[1.0, 0.0], &[2.0, 0.0]), 0.0);
    assert!((arc_distance(&[1.0, 0.0], &[-1.0, 1e-300]) - std::f64::consts::PI).abs() < 1e-12);
    assert!((arc_distance(&[0.0, 1.0], &[1.0, 0.0]) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
}

fn trial() -> impl Strategy<Value = ([f64; 2], [f64; 2], [f64; H_SEGMENTS], f64)> {
    (
        0.0..std::f64::consts::TAU,
        1.0..3.0f64,
        prop::array::uniform2(-1.0..1.0f64),
        prop::array::uniform8(-1.0..1.0f64),
        0.2..0.5f64,
    )
        .prop_map(|(th, r, pert, s, frac)| {
            let d = 1e-3 * frac;
            let x0 = [r * d * th.cos(), r * d * th.sin()];
            let x1 = [x0[0] + 0.3 * d * pert[0], x0[1] + 0.3 * d * pert[1]];
            let a = 2.0 * d;
            let slopes = s.map(|u| 1.0 + a * u);
            (x0, x1, slopes, d)
        })
}

proptest! {
    #[test]
    fn scale_covariance((x0, x1, slopes, d) in trial(), c in 1.0..2.0f64) {
        let p = p1();
        let (t, d0) = (4.0, 2e-3);
        let a = check_trial(&p, t, d0, x0, x1, slopes, d).unwrap();
        let sc = |x: [f64; 2]| [c * x[0], c * x[1]];
        let b = check_trial(&p, t, d0, sc(x0), sc(x1), slopes, c * d).unwrap();
        prop_assert_eq!(a.admissible, b.admissible);
        prop_assert!((a.deviation - b.deviation).abs() <= 1e-12);
        prop_assert!((b.residual - c * a.residual).abs() <= 1e-9 * c * a.residual.max(d));
    }

    #[test]
    fn trial_residual_matches_oracle((x0, x1, slopes, d) in trial()) {
        let p = p1();
        let (t, d0) = (4.0, 2e-3);
        let got = check_trial(&p, t, d0, x0, x1, slopes, d).unwrap();
        let knots: Vec<f64> = (0..=H_SEGMENTS).map(|j| t * j as f64 / H_SEGMENTS as f64).collect();
        let h = PiecewiseLinearRepar::on_grid(&knots, &slopes).unwrap();
        let want = oracle_residual(&p, t, d0, &x0, &x1, &h);
        prop_assert!((got.residual - want).abs() <= 1e-9 * p.l * d);
        prop_assert!(got.deviation <= std::f64::consts::PI);
    }
}
