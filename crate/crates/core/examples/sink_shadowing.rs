//! Positive control: near a hyperbolic sink, noisy orbits are shadowed
//! with error proportional to the noise.

use shadowlab::flow::BlockLinearField;
use shadowlab::pseudo::{pseudo_defect, pseudo_from_orbit};
use shadowlab::shadow::{shadow_search, ShadowConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let txt = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/sink_field.json"))?;
    let field: BlockLinearField = serde_json::from_str(&txt)?;
    let x0 = [1.0, 0.5, -0.5];
    for d in [1e-2, 1e-3, 1e-4] {
        let g = pseudo_from_orbit(&field, &x0, (0.0, 6.0), 0.5, d, 1)?;
        let defect = pseudo_defect(&field, &g)?.defect;
        let r = shadow_search(&field, &g, &ShadowConfig::new(10.0 * d, 16, 5000, 1), &[])?;
        println!("d = {d:.0e}: defect {defect:.2e}, best eps {:.3e}, eps/d = {:.3}", r.best_eps, r.best_eps / d);
    }
    Ok(())
}
