//! Order-by-order solution of the conjugation equations: the counterterm
//! mu^(k), the zero modes of a^(k) and c^(k), and the first-integral check,
//! followed by the resummed shift lambda = lambda0 + mu(eps).
//!
//! cargo run --example lindstedt_series

use skewprod::io::{golden_rich, golden_sparse};
use skewprod::series::{FormalSeries, Problem};

fn main() -> skewprod::Result<()> {
    let omega = [1.0, (5f64.sqrt() - 1.0) / 2.0];
    for (name, g, lambda0) in [("two-mode", golden_sparse(), 1.0), ("rich", golden_rich(), 0.7)] {
        let s = FormalSeries::solve(Problem::new(g, &omega, lambda0)?, 6)?;
        println!("{name} field, lambda0 = {lambda0}");
        println!(
            "{:>2} {:>24} {:>10} {:>12} {:>10}",
            "k", "mu^(k)", "|Im mu|", "support", "H defect"
        );
        for k in 1..=6 {
            let sl = s.slice(k);
            println!(
                "{k:>2} {:>24.15e} {:>10.1e} {:>12} {:>10.1e}",
                sl.mu.re,
                sl.mu.im.abs(),
                sl.a.coeffs.len() + sl.c.coeffs.len(),
                s.max_h_defect(k) / s.order_scale(k)
            );
        }
        for eps in [1e-2, 1e-3] {
            println!("eps = {eps:e}: lambda = {:.15}", lambda0 + s.evaluate_mu(eps));
        }
        println!();
    }
    Ok(())
}
