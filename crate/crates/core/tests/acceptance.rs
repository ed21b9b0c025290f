//! End-to-end acceptance runs. One line per criterion; exits nonzero if any fails.

mod common;

use std::f64::consts::{FRAC_PI_4, PI};
use std::time::Instant;

use common::{dense_pair_class, fixture, nontransversality_defect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadowlab::flow::{euclidean, evolve_rk4, norm, Rk4Config};
use shadowlab::hetero::{frame_for, select_obstruction_frame, transversality, TransversalityVerdict};
use shadowlab::pseudo::{pseudo_defect, pseudo_from_orbit, pseudo_glued};
use shadowlab::repar::{compose, invert, rep_random};
use shadowlab::shadow::{
    glued_windows, lipschitz_sweep, nosubset_feasibility, shadow_search, Branch, LipVerdict, NosubsetConfig,
    ShadowConfig, SweepConfig,
};
use shadowlab::spiral::{cert_estimate, cert_search, cert_validate, SpiralParams};
use shadowlab::{Block, BlockLinearField};

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(start: Instant, limit: f64) -> (bool, String) {
    let s = start.elapsed().as_secs_f64();
    (s < limit, format!("{s:.1} s < {limit} s"))
}

fn random_field(rng: &mut ChaCha8Rng) -> BlockLinearField {
    let mut blocks = Vec::new();
    for _ in 0..rng.gen_range(1..=3) {
        if rng.gen::<bool>() {
            blocks.push(Block::Real { rate: rng.gen_range(-3.0..3.0) });
        } else {
            let r = rng.gen_range(0.1..3.0);
            let th = rng.gen_range(0.05..PI - 0.05);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            blocks.push(Block::Spiral { a: r * th.cos(), b: sign * r * th.sin() });
        }
    }
    BlockLinearField::new(blocks).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = Rk4Config::default();
    let (mut rk_worst, mut group_worst) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let f = random_field(&mut rng);
        let x: Vec<f64> = (0..f.dim()).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let t = rng.gen_range(-5.0..5.0);
        let exact = f.evolve(t, &x).unwrap();
        let rk = evolve_rk4(&f.to_vector_field(), t, &x, &cfg).unwrap();
        rk_worst = rk_worst.max(euclidean(&exact, &rk) / norm(&exact));

        let s = rng.gen_range(-5.0..5.0);
        let direct = f.evolve(s + t, &x).unwrap();
        let split = f.evolve(s, &exact).unwrap();
        let tol = 1e-10 * (1.0 + norm(&x) * (f.max_abs_rate() * (s + t).abs()).exp());
        group_worst = group_worst.max(euclidean(&direct, &split) / tol);
    }
    let (fast, time) = within(start, 30.0);
    Outcome {
        pass: rk_worst <= 1e-8 && group_worst <= 1.0 && fast,
        detail: format!(
            "1000 fields: rk4 rel err {rk_worst:.2e} <= 1e-8, group-law err/tol {group_worst:.2e} <= 1, {time}"
        ),
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draw = |rng: &mut ChaCha8Rng| {
        let a = rng.gen_range(0.0..=0.5);
        let lo = rng.gen_range(-10.0..-1.0);
        let hi = rng.gen_range(1.0..10.0);
        rep_random(a, (lo, hi), rng.gen_range(0.25..1.0), rng.gen()).unwrap()
    };
    let (mut comp, mut inv, mut oracle) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64);
    for _ in 0..10_000 {
        let f = draw(&mut rng);
        let g = draw(&mut rng);
        let (a1, a2) = (f.min_class(), g.min_class());
        comp = comp.max(compose(&f, &g).min_class() - (a1 + a2 + a1 * a2));
        inv = inv.max(invert(&f).min_class() - a1 / (1.0 - a1));
        oracle = oracle.max((a1 - dense_pair_class(&f)).abs()).max((a2 - dense_pair_class(&g)).abs());
    }
    let (fast, time) = within(start, 30.0);
    Outcome {
        pass: comp <= 1e-12 && inv <= 1e-12 && oracle <= 1e-12 && fast,
        detail: format!(
            "10^4 pairs: composition excess {comp:.1e}, inverse excess {inv:.1e}, oracle gap {oracle:.1e} (all <= 1e-12), {time}"
        ),
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let cases = [
        SpiralParams::spiral(1.0, 1.0, FRAC_PI_4, 2.0),
        SpiralParams::spiral(0.5, 3.0, FRAC_PI_4, 1.0),
        SpiralParams::line(1.0, 0.5, 1.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for p in &cases {
        match cert_search(p, 100_000, 42) {
            Ok(c) => {
                pass &= c.worst < p.eps && c.admissible > 0;
                parts.push(format!("T {:.3} d0 {:.2e} worst {:.3} < {:.3}", c.t, c.d0, c.worst, p.eps));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("failed: {e}"));
            }
        }
    }
    let (_, d0) = cert_estimate(&cases[0]).unwrap();
    let broken = cert_validate(&cases[0], 0.1, d0, 100_000, 42).unwrap();
    let exhibited = !broken.pass && broken.worst.as_ref().is_some_and(|w| w.deviation >= cases[0].eps);
    pass &= exhibited;
    parts.push(format!("T = 0.1 rejected with deviation {:.3}", broken.worst_deviation()));
    let (fast, time) = within(start, 120.0);
    Outcome { pass: pass && fast, detail: format!("{}; {time}", parts.join("; ")) }
}

fn criterion_4(name: &str) -> Outcome {
    let start = Instant::now();
    let (fx, sys) = fixture(name);
    let c1 = fx.c1.expect("fixture carries its defect constant");
    let frame = select_obstruction_frame(&sys).unwrap();
    let (tb, tf) = glued_windows(&sys);
    let ds = [1e-2, 1e-3];
    let ratios: Vec<f64> = ds
        .iter()
        .map(|&d| pseudo_defect(&sys, &pseudo_glued(&sys, &frame, d, tb, tf).unwrap()).unwrap().defect / d)
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    let defect_ok = hi <= c1 && hi <= 1.05 * lo;

    let cfg = SweepConfig {
        l_list: vec![1.0, 2.0, 5.0],
        d_list: ds.to_vec(),
        starts: 64,
        budget: 20_000,
        seed: 0,
        t_back: None,
        t_fwd: None,
        c1: Some(c1),
    };
    let table = lipschitz_sweep(&sys, &frame, &cfg).unwrap();
    let all_fail = table.rows.len() == 6 && table.rows.iter().all(|r| r.verdict == LipVerdict::LipFail);
    let corroborated = table.rows.iter().all(|r| r.corroborated_fail());
    let min_ratio = table.rows.iter().map(|r| r.best_eps / (r.l * r.d)).fold(f64::MAX, f64::min);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = sys.n() - 1;
    let cu = sys.dim_uq() - 1;
    let mut gap = 0.0f64;
    for _ in 0..100 {
        let w: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut stable = w.clone();
        stable[..cu].iter_mut().for_each(|x| *x = 0.0);
        gap = gap.max((frame.read(&sys.apply_k(&w)) - frame.read(&sys.apply_k(&stable))).abs());
    }
    let (fast, time) = within(start, 600.0);
    Outcome {
        pass: defect_ok && all_fail && corroborated && gap <= 1e-10 && fast,
        detail: format!(
            "{name}: defect/d {ratios:.4?} <= C1 {c1}, spread {:.2}%; 6/6 LipFail: {all_fail} (min best_eps/(L d) {min_ratio:.1}); \
             obstruction corroborates: {corroborated}; identity gap {gap:.1e} <= 1e-10; {time}",
            100.0 * (hi / lo - 1.0)
        ),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (fx, sys) = fixture("trans3d");
    let frame = frame_for(&sys).unwrap();
    let cfg = SweepConfig {
        l_list: vec![1.0, 2.0, 5.0],
        d_list: vec![1e-2, 1e-3],
        starts: 64,
        budget: 20_000,
        seed: 0,
        t_back: None,
        t_fwd: None,
        c1: fx.c1,
    };
    let table = lipschitz_sweep(&sys, &frame, &cfg).unwrap();
    let ok_at_5 = table.rows.iter().filter(|r| r.l == 5.0).all(|r| r.verdict == LipVerdict::LipOk);
    let max_ratio = table.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let cells: Vec<String> = table.rows.iter().map(|r| format!("L{} d{:.0e} {}", r.l, r.d, r.verdict.as_str())).collect();
    let (fast, time) = within(start, 300.0);
    Outcome {
        pass: ok_at_5 && max_ratio <= 50.0 && fast,
        detail: format!("trans3d: LipOK at L = 5: {ok_at_5}; max ratio {max_ratio:.2} <= 50; [{}]; {time}", cells.join(", ")),
    }
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (_, sys) = fixture("sconn2d");
    let cfg = NosubsetConfig { keep_points: true, ..Default::default() };
    let rep = nosubset_feasibility(&sys, &cfg).unwrap();
    let every_point = rep.points.len() == 200 * 200
        && rep.points.iter().all(|p| {
            if p.on_wu {
                p.branch == Branch::Arrival && p.t_min == rep.t_arrival && p.t_max == rep.t_arrival
            } else {
                p.branch == Branch::Backward && p.t_max < 0.0
            }
        });
    let (fast, time) = within(start, 120.0);
    Outcome {
        pass: !rep.feasible && rep.h_samples == 1000 && every_point && rep.dichotomy_holds && fast,
        detail: format!(
            "sconn2d eps {:.4}: feasible {}, {} points x {} h, {} fail at t = {} and {} fail backward (latest {:.2}); {time}",
            rep.eps,
            rep.feasible,
            rep.grid_points,
            rep.h_samples,
            rep.arrival_points,
            rep.t_arrival,
            rep.backward_points,
            rep.latest_backward_failure.unwrap_or(f64::NAN)
        ),
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let f = BlockLinearField::new(vec![Block::Real { rate: -1.0 }, Block::Spiral { a: -0.8, b: 1.0 }]).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for d in [1e-2, 1e-3, 1e-4] {
        let g = pseudo_from_orbit(&f, &[1.0, 0.5, -0.5], (0.0, 6.0), 0.5, d, 1).unwrap();
        let r = shadow_search(&f, &g, &ShadowConfig::new(10.0 * d, 16, 5000, 1), &[]).unwrap();
        pass &= r.best_eps <= 10.0 * d;
        parts.push(format!("d {d:.0e}: best_eps/d {:.3}", r.best_eps / d));
    }
    let (fast, time) = within(start, 120.0);
    Outcome { pass: pass && fast, detail: format!("{} (<= 10); {time}", parts.join(", ")) }
}

fn criterion_8() -> Outcome {
    let expected = [
        ("trans3d", TransversalityVerdict::Transversal),
        ("ntrans3d", TransversalityVerdict::Nontransversal),
        ("ntrans4d", TransversalityVerdict::Nontransversal),
        ("sconn2d", TransversalityVerdict::Nontransversal),
        ("tangent3d", TransversalityVerdict::Nontransversal),
        ("lines3d", TransversalityVerdict::Nontransversal),
        ("sink3d", TransversalityVerdict::Transversal),
        ("source3d", TransversalityVerdict::Transversal),
    ];
    let mut wrong = Vec::new();
    for (name, verdict) in expected {
        let (_, sys) = fixture(name);
        let tv = transversality(&sys);
        let oracle = nontransversality_defect(&sys);
        let oracle_verdict =
            if oracle == 0 { TransversalityVerdict::Transversal } else { TransversalityVerdict::Nontransversal };
        if tv.verdict != verdict || oracle_verdict != verdict || tv.defect_dim != oracle {
            wrong.push(name);
        }
    }
    Outcome {
        pass: wrong.is_empty(),
        detail: format!("{} fixtures agree with the expected verdict and the rank oracle; mismatches: {wrong:?}", expected.len()),
    }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 flow exactness", criterion_1),
        ("2 reparametrization algebra", criterion_2),
        ("3 spiral certificates", criterion_3),
        ("4 counterexample ntrans3d", || criterion_4("ntrans3d")),
        ("4 counterexample ntrans4d", || criterion_4("ntrans4d")),
        ("5 transversal contrast", criterion_5),
        ("6 saddle connection brute force", criterion_6),
        ("7 sink positive control", criterion_7),
        ("8 transversality classifier", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = run();
        println!("criterion {name}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
