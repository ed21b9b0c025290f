mod common;

use common::fixture;
use shadowlab::flow::{Block, BlockLinearField};
use shadowlab::glued::ChartPoint;
use shadowlab::hetero::frame_for;
use shadowlab::pseudo::{pseudo_defect, pseudo_from_orbit, pseudo_glued, pseudo_jump, PseudoError};
use shadowlab::shadow::glued_windows;
use shadowlab::{Flow, SampledPseudotrajectory};

fn sink() -> BlockLinearField {
    BlockLinearField::new(vec![Block::Real { rate: -1.0 }, Block::Spiral { a: -0.8, b: 1.0 }]).unwrap()
}

#[test]
fn exact_orbits_have_no_defect() {
    let f = sink();
    let g = pseudo_from_orbit(&f, &[1.0, 0.5, -0.5], (-2.0, 6.0), 0.5, 0.0, 0).unwrap();
    assert!(pseudo_defect(&f, &g).unwrap().defect <= 1e-8);
}

#[test]
fn nodes_are_returned_bitwise() {
    let f = sink();
    let g = pseudo_from_orbit(&f, &[1.0, 0.5, -0.5], (0.0, 3.0), 0.25, 1e-2, 4).unwrap();
    for (i, x) in g.nodes.iter().enumerate() {
        assert_eq!(&g.eval(&f, g.time(i)).unwrap(), x);
    }
    assert!(matches!(g.eval(&f, 3.5), Err(PseudoError::OutOfWindow { .. })));
}

#[test]
fn noise_bounds_the_defect() {
    let f = sink();
    for d in [1e-2, 1e-3] {
        let g = pseudo_from_orbit(&f, &[1.0, 0.5, -0.5], (0.0, 6.0), 0.5, d, 9).unwrap();
        let def = pseudo_defect(&f, &g).unwrap().defect;
        assert!(def > 0.0 && def <= 3.0 * d, "{def}");
    }
}

#[test]
fn json_shape() {
    let g = SampledPseudotrajectory::new(0.0, 0.5, vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let v: serde_json::Value = serde_json::to_value(&g).unwrap();
    assert_eq!(v["t0"], 0.0);
    assert_eq!(v["dt"], 0.5);
    assert_eq!(v["nodes"][1][0], 3.0);
}

#[test]
fn glued_defect_is_linear_in_d() {
    for name in ["ntrans3d", "ntrans4d", "trans3d"] {
        let (fx, sys) = fixture(name);
        let frame = frame_for(&sys).unwrap();
        let (tb, tf) = glued_windows(&sys);
        let ratios: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&d| pseudo_defect(&sys, &pseudo_glued(&sys, &frame, d, tb, tf).unwrap()).unwrap().defect / d)
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
        assert!(hi <= 1.05 * lo, "{name}: {ratios:?}");
        assert!(hi <= fx.c1.unwrap(), "{name}: {ratios:?}");
    }
}

#[test]
fn glued_pieces() {
    let (_, sys) = fixture("ntrans3d");
    let frame = frame_for(&sys).unwrap();
    let d = 1e-3;
    let g = pseudo_glued(&sys, &frame, d, 4.0, 8.0).unwrap();
    let start = g.eval(&sys, 0.0).unwrap();
    assert_eq!(start, ChartPoint::transit(0.0, vec![0.0, 0.0]));
    let arrive = g.eval(&sys, sys.tau()).unwrap();
    let ep: Vec<f64> = frame.e_p.iter().map(|x| d * x).collect();
    assert_eq!(arrive.coords, sys.p_section_point(&ep));
    let before = g.eval(&sys, -1.0).unwrap();
    let want = sys.evolve_glued(-1.0, &ChartPoint::on_q_section(frame.e_q.iter().map(|x| d * x).collect())).unwrap();
    assert!(sys.distance(&before, &want) <= 1e-14);
}

fn jump(tau: f64) -> (f64, SampledPseudotrajectory<ChartPoint>, ChartPoint) {
    let (_, sys) = fixture("sconn2d");
    let base = ChartPoint::p(sys.field_p().evolve(1.0, sys.a_p()).unwrap());
    let target = ChartPoint::p(vec![0.0, 0.6]);
    let g = pseudo_jump(&sys, &base, &target, tau, tau, 0.5, 2.0, 1.0).unwrap();
    (pseudo_defect(&sys, &g).unwrap().defect, g, target)
}

#[test]
fn jump_defect_decays_with_the_gap() {
    let (_, sys) = fixture("sconn2d");
    let mut last = f64::INFINITY;
    for tau in [2.0, 4.0, 8.0, 16.0] {
        let (def, g, target) = jump(tau);
        assert!(def <= last, "tau {tau}: {def} > {last}");
        last = def;
        assert_eq!(g.eval(&sys, 2.0 * tau).unwrap(), target);
        if tau == 8.0 {
            assert!(def <= 2e-3, "{def}");
        }
    }
}

#[test]
fn jump_times_must_sit_on_the_grid() {
    let f = sink();
    let x = vec![1.0, 0.0, 0.0];
    assert!(pseudo_jump(&f, &x, &x, 1.1, 1.0, 0.5, 1.0, 1.0).is_err());
    assert!(pseudo_jump(&f, &x, &x, 1.0, 1.0, 0.7, 1.0, 1.0).is_err());
}
