//! Search a shadowing window `(T, d0)` for a linear spiral sink, then
//! check that an undersized window is rejected.

use shadowlab::spiral::{cert_estimate, cert_search, cert_validate, SpiralParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trials = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(20_000);
    let p = SpiralParams::spiral(1.0, 1.0, std::f64::consts::FRAC_PI_4, 2.0);
    let (t, d0) = cert_estimate(&p)?;
    println!("closed-form candidate: T = {t:.5}, d0 = {d0:.6}");

    let cert = cert_search(&p, trials, 42)?;
    println!(
        "certified T = {:.5}, d0 = {:.6}: worst deviation {:.4} < eps over {} admissible trials ({} escalations)",
        cert.t, cert.d0, cert.worst, cert.admissible, cert.escalations
    );

    let bad = cert_validate(&p, 0.1, 0.1, trials, 42)?;
    println!("T = 0.1, d0 = 0.1: pass = {}, worst deviation {:.4}", bad.pass, bad.worst_deviation());

    let line = cert_search(&SpiralParams::line(1.0, 0.5, 1.0), trials, 42)?;
    println!("line: T = {:.5}, d0 = {:.6}, worst {:.4}", line.t, line.d0, line.worst);
    Ok(())
}
