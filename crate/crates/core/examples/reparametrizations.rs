//! Piecewise-linear reparametrizations: classes, composition, inverses.

use shadowlab::repar::{compose, invert, rep_random, PiecewiseLinearRepar};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let h = PiecewiseLinearRepar::new(vec![-1.0, 0.0, 2.0], vec![0.8, 1.25])?;
    println!("h(-1) = {}, h(1) = {}, class {}", h.eval(-1.0), h.eval(1.0), h.min_class());

    let inv = invert(&h);
    println!("inverse class {} (bound a/(1-a) = {})", inv.min_class(), 0.25 / 0.75);
    println!("h^-1(h(1.5)) = {}", inv.eval(h.eval(1.5)));

    let (a1, a2) = (0.1, 0.2);
    let f = rep_random(a1, (-5.0, 5.0), 0.5, 7)?;
    let g = rep_random(a2, (-5.0, 5.0), 0.7, 8)?;
    let fg = compose(&f, &g);
    println!(
        "composition class {:.4} <= {:.4}",
        fg.min_class(),
        a1 + a2 + a1 * a2
    );
    println!("{}", serde_json::to_string(&h)?);
    Ok(())
}
