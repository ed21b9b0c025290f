#![allow(dead_code)]

use nalgebra::DMatrix;
use proptest::prelude::*;
use shadowlab::glued::{Chart, ChartPoint};
use shadowlab::{Block, BlockLinearField, GluedHeteroclinicSystem, PiecewiseLinearRepar, SystemFixture};

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub fn fixture_path(name: &str) -> String {
    format!("{FIXTURES}/{name}.json")
}

pub fn fixture(name: &str) -> (SystemFixture, GluedHeteroclinicSystem) {
    let fx = SystemFixture::load(fixture_path(name)).expect("fixture parses");
    let sys = fx.build().expect("fixture builds");
    (fx, sys)
}

pub fn block() -> impl Strategy<Value = Block> {
    prop_oneof![
        (-3.0..3.0f64).prop_map(|rate| Block::Real { rate }),
        (-2.0..2.0f64, 0.1..2.0f64, any::<bool>())
            .prop_map(|(a, b, neg)| Block::Spiral { a, b: if neg { -b } else { b } }),
    ]
}

pub fn field() -> impl Strategy<Value = BlockLinearField> {
    prop::collection::vec(block(), 1..4).prop_map(|bs| BlockLinearField::new(bs).unwrap())
}

pub fn vec_in(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, n)
}

pub fn field_and_point(r: f64) -> impl Strategy<Value = (BlockLinearField, Vec<f64>)> {
    field().prop_flat_map(move |f| {
        let n = f.dim();
        (Just(f), vec_in(n, r))
    })
}

pub fn numeric_rank(cols: &[Vec<f64>]) -> usize {
    let n = cols[0].len();
    let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let sv = m.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-7 * top.max(1.0)).count()
}

/// `n - dim(T Wu(q) + T Ws(p))` at `a_p`, from finite pushes through the
/// glued flow and the stable axes of `p`.
pub fn nontransversality_defect(sys: &GluedHeteroclinicSystem) -> usize {
    let n = sys.n();
    let mut cols = Vec::new();
    for i in 0..sys.dim_sp() {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        cols.push(e);
    }
    cols.push(sys.field_p().apply(sys.a_p()).unwrap());
    let delta = 1e-6;
    for j in 0..sys.dim_uq() - 1 {
        let mut u = vec![0.0; n - 1];
        u[j] = delta;
        let y = sys.evolve_glued(sys.tau(), &ChartPoint::on_q_section(u)).unwrap();
        assert_eq!(y.chart, Chart::P);
        cols.push(y.coords.iter().zip(sys.a_p()).map(|(y, a)| (y - a) / delta).collect());
    }
    n - numeric_rank(&cols)
}

/// Largest `|Δh/Δt - 1|` over all pairs of a dense point set: four points
/// in every segment plus points on both extensions.
pub fn dense_pair_class(h: &PiecewiseLinearRepar) -> f64 {
    let bp = h.breakpoints();
    let mut pts = vec![bp[0] - 2.0, bp[0] - 1.0];
    for w in bp.windows(2) {
        for k in 0..4 {
            pts.push(w[0] + (w[1] - w[0]) * (0.1 + 0.25 * k as f64));
        }
    }
    pts.push(bp[bp.len() - 1] + 1.0);
    pts.push(bp[bp.len() - 1] + 2.0);
    let v: Vec<f64> = pts.iter().map(|&t| h.eval(t)).collect();
    let mut worst = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            worst = worst.max(((v[j] - v[i]) / (pts[j] - pts[i]) - 1.0).abs());
        }
    }
    worst
}
