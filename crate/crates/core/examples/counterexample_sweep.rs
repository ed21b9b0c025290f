//! Lipschitz sweep on a nontransversal model: no candidate reaches `L d`
//! and the sign obstruction explains why.
//!
//! `cargo run --release --example counterexample_sweep -- [fixture] [starts] [budget]`

use shadowlab::glued::SystemFixture;
use shadowlab::hetero::{frame_for, transversality};
use shadowlab::shadow::{lipschitz_sweep, SweepConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/ntrans3d.json").to_string());
    let starts = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let budget = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);

    let fx = SystemFixture::load(&path)?;
    let sys = fx.build()?;
    println!("{:?}", transversality(&sys).verdict);
    let frame = frame_for(&sys)?;
    let cfg = SweepConfig {
        l_list: vec![1.0, 2.0, 5.0],
        d_list: vec![1e-2, 1e-3],
        starts,
        budget,
        seed: 0,
        t_back: None,
        t_fwd: None,
        c1: fx.c1,
    };
    let table = lipschitz_sweep(&sys, &frame, &cfg)?;
    table.write_csv(std::io::stdout())?;
    for r in &table.rows {
        if let Some(rep) = &r.report {
            println!(
                "L = {}, d = {:e}: w = {:+.3e}, v = {:+.3e}, back {:.3e}, fwd {:.3e}, threshold {:.3e}",
                r.l, r.d, rep.w, rep.v, rep.r_back, rep.r_fwd, rep.threshold
            );
        }
    }
    Ok(())
}
