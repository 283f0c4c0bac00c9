//! Numerical reducibility: the truncated conjugation B(psi) and shift mu(eps)
//! are checked against direct integration of x' = (lambda A + eps f(omega t)) x,
//! with residual and deviation scaling in eps and conservation drifts.
//!
//! cargo run --release --example reducibility

use skewprod::io::golden_sparse;
use skewprod::model::RealMatrixField;
use skewprod::series::{FormalSeries, Problem};
use skewprod::verify::{
    conjugation_residual, conservation_drift, default_time_grid, det_drift, integrate_auxiliary, integrate_full,
    verify_table, AcPair,
};

fn main() -> skewprod::Result<()> {
    let omega = [1.0, (5f64.sqrt() - 1.0) / 2.0];
    let (lambda0, k) = (0.7, 3);
    let g = golden_sparse();
    let s = FormalSeries::solve(Problem::new(g.clone(), &omega, lambda0)?, k)?;

    println!("{:>10} {:>12} {:>12} {:>10}", "eps", "residual", "deviation", "H drift");
    let rows = verify_table(&s, &[2e-2, 1e-2, 5e-3, 2.5e-3], 20.0, 1e-3)?;
    for r in &rows {
        println!(
            "{:>10.2e} {:>12.4e} {:>12.4e} {:>10.1e}",
            r.epsilon, r.residual, r.deviation, r.drift
        );
    }
    println!(
        "fitted deviation exponent: {:.3} (expected {})",
        rows[0].fitted_exponent,
        k + 1
    );

    let grid = default_time_grid();
    let wrong = skewprod::verify::conjugation_residual_with_mu(&s, 1e-2, s.evaluate_mu_upto(1e-2, 1), &grid);
    println!(
        "residual at eps = 1e-2 with mu truncated at first order: {wrong:.3e} (vs {:.3e})",
        conjugation_residual(&s, 1e-2, &grid)
    );

    let eps = 0.05;
    let f = RealMatrixField::from_complex(&g);
    let mu = s.evaluate_mu(eps);
    let x = integrate_full(
        lambda0 + mu,
        eps,
        &f,
        &omega,
        nalgebra::Matrix2::identity(),
        100.0,
        1e-3,
        1000,
    )?;
    let (a, c) = s.eval_ac(eps, &[0.0, 0.0]);
    let aux = integrate_auxiliary(eps, mu, lambda0, &g, &omega, AcPair(a, c), 100.0, 1e-3, 1000)?;
    println!(
        "T = 100, eps = {eps}: det drift {:.2e}, H drift {:.2e}",
        det_drift(&x),
        conservation_drift(&aux)
    );
    Ok(())
}
