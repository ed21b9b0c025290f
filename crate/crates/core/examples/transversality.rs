//! Transversality verdict and obstruction frame for every bundled model.

use shadowlab::glued::SystemFixture;
use shadowlab::hetero::{select_obstruction_frame, transversality};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let names = ["trans3d", "ntrans3d", "ntrans4d", "sconn2d", "tangent3d", "lines3d", "sink3d", "source3d"];
    for name in names {
        let fx = SystemFixture::load(format!("{dir}/{name}.json"))?;
        let sys = fx.build()?;
        let tv = transversality(&sys);
        print!(
            "{name:>10}: {:?}, defect {} (dim Wu(q) {}, dim Ws(p) {})",
            tv.verdict, tv.defect_dim, tv.dim_wu_q, tv.dim_ws_p
        );
        match select_obstruction_frame(&sys) {
            Ok(f) => println!(", e_p = {:.3?}, e_q = {:.3?}", f.e_p, f.e_q),
            Err(e) => println!(", no frame: {e}"),
        }
    }
    Ok(())
}
