//! Exact block exponentials next to fixed-step RK4 on the same field.

use shadowlab::flow::{evolve_rk4, Block, BlockLinearField, Rk4Config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let field = BlockLinearField::new(vec![
        Block::Real { rate: -0.7 },
        Block::Spiral { a: 0.3, b: 2.0 },
    ])?;
    let x = [1.0, 0.5, -0.25];
    let rk = field.to_vector_field();
    let cfg = Rk4Config::default();
    println!("{:>6} {:>24} {:>12}", "t", "exact", "rk4 rel err");
    for t in [-2.0, -0.5, 0.0, 1.0, 3.0] {
        let exact = field.evolve(t, &x)?;
        let approx = evolve_rk4(&rk, t, &x, &cfg)?;
        let err = shadowlab::flow::euclidean(&exact, &approx) / shadowlab::flow::norm(&exact);
        println!("{t:>6.2} {:>24} {err:>12.2e}", format!("{:.4?}", exact));
    }

    // group law
    let a = field.evolve(1.3, &field.evolve(-0.4, &x)?)?;
    let b = field.evolve(0.9, &x)?;
    println!("group law gap: {:.2e}", shadowlab::flow::euclidean(&a, &b));
    Ok(())
}
