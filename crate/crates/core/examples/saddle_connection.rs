//! Planar saddle connection: no point and time change stays within eps of
//! the jump pseudotrajectory.

use shadowlab::glued::SystemFixture;
use shadowlab::shadow::{nosubset_feasibility, NosubsetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = SystemFixture::load(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sconn2d.json"))?;
    let sys = fx.build()?;
    let cfg = NosubsetConfig { t_jump: 4.0, t_lead: 4.0, x_grid: 60, h_samples: 200, ..Default::default() };
    let rep = nosubset_feasibility(&sys, &cfg)?;
    println!("eps bounds: {:?}, eps = {:.4}", rep.conditions, rep.eps);
    println!(
        "feasible = {}, {} pairs over {} points: {} fail backward, {} fail at arrival, {} other",
        rep.feasible, rep.pairs, rep.grid_points, rep.backward_points, rep.arrival_points, rep.other_points
    );
    println!("jump size {:.2e}, arrival at t = {:.3}", rep.jump_size, rep.t_arrival);
    Ok(())
}
