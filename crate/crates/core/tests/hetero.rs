mod common;

use common::{fixture, nontransversality_defect, vec_in};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use shadowlab::hetero::{
    frame_diagnostics, obstruction_report, projections, select_obstruction_frame, transversality,
    ObstructionQuery, ObstructionVerdict, TransversalityVerdict,
};
use shadowlab::pseudo::pseudo_glued;
use shadowlab::glued::ChartPoint;
use shadowlab::shadow::{glued_windows, residual};
use shadowlab::{PiecewiseLinearRepar, SystemFixture};

const EXPECTED: [(&str, TransversalityVerdict, usize); 8] = [
    ("trans3d", TransversalityVerdict::Transversal, 0),
    ("ntrans3d", TransversalityVerdict::Nontransversal, 1),
    ("ntrans4d", TransversalityVerdict::Nontransversal, 1),
    ("sconn2d", TransversalityVerdict::Nontransversal, 1),
    ("tangent3d", TransversalityVerdict::Nontransversal, 1),
    ("lines3d", TransversalityVerdict::Nontransversal, 2),
    ("sink3d", TransversalityVerdict::Transversal, 0),
    ("source3d", TransversalityVerdict::Transversal, 0),
];

#[test]
fn verdicts_match_the_rank_oracle() {
    for (name, verdict, defect) in EXPECTED {
        let (_, sys) = fixture(name);
        let tv = transversality(&sys);
        assert_eq!(tv.verdict, verdict, "{name}");
        assert_eq!(tv.defect_dim, defect, "{name}");
        assert_eq!(nontransversality_defect(&sys), defect, "{name}");
    }
}

#[test]
fn projector_algebra() {
    for (name, ..) in EXPECTED {
        let (_, sys) = fixture(name);
        let pr = projections(&sys);
        for blocks in [(&pr.q_blocks, &pr.q), (&pr.p_blocks, &pr.p)] {
            let mut sum = blocks.1 * 0.0;
            for (j, a) in blocks.0.iter().enumerate() {
                sum += a;
                for (k, b) in blocks.0.iter().enumerate() {
                    let prod = a * b;
                    let want = if j == k { a.clone() } else { a * 0.0 };
                    assert_eq!(prod, want, "{name}");
                }
            }
            assert_eq!(&sum, blocks.1, "{name}");
        }
    }
}

#[test]
fn frames_have_unit_vectors_and_negative_signs() {
    for name in ["ntrans3d", "ntrans4d", "sconn2d", "tangent3d", "lines3d"] {
        let (_, sys) = fixture(name);
        let f = select_obstruction_frame(&sys).unwrap();
        assert!((shadowlab::flow::norm(&f.e_p) - 1.0).abs() <= 1e-12);
        assert!((shadowlab::flow::norm(&f.e_q) - 1.0).abs() <= 1e-12);
        assert!((f.read(&f.e_p) - 1.0).abs() <= 1e-12);
        let (leak, signs) = frame_diagnostics(&sys, &f);
        assert!(leak <= 1e-10, "{name}: {leak}");
        for &j in &f.active {
            assert!(signs[j] < 0.0, "{name}");
        }
    }
}

#[test]
fn transversal_systems_have_no_frame() {
    for name in ["trans3d", "sink3d", "source3d"] {
        let (_, sys) = fixture(name);
        assert!(select_obstruction_frame(&sys).is_err());
    }
}

/// `ell K ω` only sees the stable part of `ω`.
fn identity_gap(name: &str, samples: usize, seed: u64) -> f64 {
    let (_, sys) = fixture(name);
    let f = select_obstruction_frame(&sys).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = sys.n() - 1;
    let cu = sys.dim_uq() - 1;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let w: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut stable = w.clone();
        stable[..cu].iter_mut().for_each(|x| *x = 0.0);
        let full = f.read(&sys.apply_k(&w));
        let proj = f.read(&sys.apply_k(&stable));
        worst = worst.max((full - proj).abs());
    }
    worst
}

#[test]
fn linear_identity_on_random_vectors() {
    for name in ["ntrans3d", "ntrans4d"] {
        assert!(identity_gap(name, 100, 7) <= 1e-10);
    }
}

#[test]
fn obstruction_report_cases() {
    let (fx, sys) = fixture("ntrans3d");
    let frame = select_obstruction_frame(&sys).unwrap();
    let (tb, tf) = glued_windows(&sys);
    let d = 1e-3;
    let g = pseudo_glued(&sys, &frame, d, tb, tf).unwrap();
    let id = PiecewiseLinearRepar::identity();
    let query = |omega: &[f64]| {
        let omega = omega.to_vec();
        let q = ObstructionQuery {
            g: &g,
            omega: &omega,
            h: &id,
            d,
            lipschitz: 2.0,
            t_back: -g.t0,
            t_fwd: g.t_end() - sys.tau(),
            c1: fx.c1.unwrap(),
        };
        obstruction_report(&sys, &frame, &q).unwrap()
    };

    // the backward anchor itself
    let back: Vec<f64> = frame.e_q.iter().map(|x| d * x).collect();
    let r = query(&back);
    // only the jump node at 0 is off the orbit
    assert!((r.r_back - d).abs() <= 1e-12);
    let open = residual(&sys, &g, &ChartPoint::on_q_section(back.clone()), &id, (g.t0, -g.dt / 8.0)).unwrap();
    assert!(open <= 1e-12);
    assert!(r.w < 0.0);
    assert_eq!(r.verdict, ObstructionVerdict::FwdViolated);

    // forward-perfect candidate
    let fwd = sys.apply_k_inv(&frame.e_p.iter().map(|x| d * x).collect::<Vec<_>>());
    let r = query(&fwd);
    assert!((r.v - d).abs() <= 1e-12);
    assert!(r.r_back > r.threshold);
    assert_eq!(r.verdict, ObstructionVerdict::BackViolated);
    assert!((r.w - r.v).abs() <= 1e-10);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let omega: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0 * d..2.0 * d)).collect();
        let r = query(&omega);
        assert!((r.w - frame.read(&sys.apply_k(&omega))).abs() <= 1e-10);
        assert!(r.h_shift.abs() <= r.shift_bound);
    }
}

fn scaled(fx: &SystemFixture, c: f64) -> SystemFixture {
    let mut f = fx.clone();
    f.k.iter_mut().flatten().for_each(|x| *x *= c);
    f
}

proptest! {
    #[test]
    fn scaling_k_keeps_the_verdict(idx in 0usize..8, c in prop_oneof![-3.0..-0.2f64, 0.2..3.0f64]) {
        let (name, verdict, defect) = EXPECTED[idx];
        let (fx, _) = fixture(name);
        if let Ok(sys) = scaled(&fx, c).build() {
            let tv = transversality(&sys);
            prop_assert_eq!(tv.verdict, verdict);
            prop_assert_eq!(tv.defect_dim, defect);
        }
    }

    #[test]
    fn identity_holds_for_any_offset(w in vec_in(3, 1.0)) {
        let (_, sys) = fixture("ntrans4d");
        let f = select_obstruction_frame(&sys).unwrap();
        let mut stable = w.clone();
        stable[..sys.dim_uq() - 1].iter_mut().for_each(|x| *x = 0.0);
        prop_assert!((f.read(&sys.apply_k(&w)) - f.read(&sys.apply_k(&stable))).abs() <= 1e-10);
    }
}
