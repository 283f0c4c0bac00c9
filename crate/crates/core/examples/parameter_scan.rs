//! Parameter scan: which lambda0 in an interval pass the second Melnikov
//! condition, how the excluded measure scales with C1, and how the map
//! lambda0 -> lambda = lambda0 + mu looks on the accepted set.
//!
//! cargo run --release --example parameter_scan

use skewprod::io::golden_rich;
use skewprod::measure::{estimate_margin, interval_setup, lambda_map, measure_linearity, scan_lambda0};
use skewprod::smalldiv::ScaleSystem;

fn main() -> skewprod::Result<()> {
    let omega = [1.0, (5f64.sqrt() - 1.0) / 2.0];
    let interval = (0.5, 1.5);
    let scales = ScaleSystem::new(&omega, 6, 1e-2)?;

    let rep = scan_lambda0(interval, 10_000, &scales, 64)?;
    println!(
        "C1 = {}: {} of {} grid points rejected, excluded {:.4e}, union bound {:.4e}, ceiling {:.4e}",
        rep.c1,
        rep.rejected,
        rep.points.len(),
        rep.excluded_measure,
        rep.union_bound,
        rep.ceiling
    );
    let mut worst: Vec<_> = rep.points.iter().filter(|p| !p.accepted).collect();
    worst.sort_by(|a, b| a.margin.total_cmp(&b.margin));
    for p in worst.iter().take(3) {
        println!(
            "  lambda0 = {:.5}: witness {:?}, margin {:.3e}",
            p.lambda0, p.worst_nu, p.margin
        );
    }

    let c1s = [1e-3, 2e-3, 4e-3, 8e-3, 1e-2];
    let lin = measure_linearity(interval, 10_000, &scales, 64, &c1s)?;
    for (c, r) in c1s.iter().zip(&lin.ratios) {
        println!("C1 = {c:.0e}: excluded / C1 = {r:.3}");
    }
    println!(
        "fitted constant {:.3}, spread {:.1}%",
        lin.fitted_const,
        100.0 * lin.max_relative_spread
    );

    let g = golden_rich();
    let accepted: Vec<f64> = rep
        .points
        .iter()
        .filter(|p| p.accepted)
        .map(|p| p.lambda0)
        .step_by(500)
        .collect();
    let eps = 1e-2;
    let map = lambda_map(&accepted, eps, &g, &omega, 3)?;
    println!(
        "lambda map on {} points: monotone = {}, max |d mu / d lambda0| = {:.3e}",
        map.points.len(),
        map.monotone,
        map.max_slope
    );
    let mu1 = (skewprod::model::I * g.f(1, 1, &skewprod::model::Nu::zero(2))).re;
    let a = estimate_margin(&accepted, eps, 1e-2, &g, &omega, 3)?;
    println!(
        "lambda0 intervals mapped into {interval:?}: {:?}",
        interval_setup(interval, eps, mu1, a, 1e-2, 0.5, 1.0)?
    );
    Ok(())
}
