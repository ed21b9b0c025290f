//! The three-piece pseudotrajectory of a glued model and its defect.
//!
//! Run with a fixture path to use another model:
//! `cargo run --example glued_pseudotrajectory -- fixtures/ntrans4d.json`

use shadowlab::glued::SystemFixture;
use shadowlab::hetero::frame_for;
use shadowlab::pseudo::{pseudo_defect, pseudo_defect_refined, pseudo_glued};
use shadowlab::shadow::glued_windows;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/ntrans3d.json").to_string());
    let fx = SystemFixture::load(&path)?;
    let sys = fx.build()?;
    let frame = frame_for(&sys)?;
    let (tb, tf) = glued_windows(&sys);
    println!("{}: windows {tb:.3} back, {tf:.3} forward", fx.name.as_deref().unwrap_or("?"));
    println!("e_p = {:?}, e_q = {:?}", frame.e_p, frame.e_q);
    for d in [1e-2, 1e-3, 1e-4] {
        let g = pseudo_glued(&sys, &frame, d, tb, tf)?;
        let coarse = pseudo_defect(&sys, &g)?;
        let fine = pseudo_defect_refined(&sys, &g, 64)?;
        println!(
            "d = {d:.0e}: {} nodes, defect/d = {:.6} (dt/8), {:.6} (dt/64), worst at s = {:.3}, t = {:.3}",
            g.len(),
            coarse.defect / d,
            fine.defect / d,
            fine.argmax.0,
            fine.argmax.1
        );
    }
    if let Some(c1) = fx.c1 {
        println!("frozen defect constant: {c1}");
    }
    Ok(())
}
