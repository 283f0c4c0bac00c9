//! Multiscale renormalization: the running counterterms M^[<=n]_j(x) near
//! the two poles, the special-point symmetry and vanishing rows, the scale -1
//! cancellation, and the counting bound over renormalized labelings.
//!
//! cargo run --release --example renormalized_propagators

use skewprod::io::golden_rich;
use skewprod::renorm::{counting_report, Renormalizer};
use skewprod::smalldiv::{melnikov_gate, ScaleSystem};
use skewprod::trees::{Context, TreeSet, TREE_BUDGET};

fn main() -> skewprod::Result<()> {
    let omega = [1.0, (5f64.sqrt() - 1.0) / 2.0];
    let lambda0 = 0.7;
    let scales = ScaleSystem::new(&omega, 6, 0.25)?;
    let gate = melnikov_gate(lambda0, &scales, 64)?;
    println!(
        "Melnikov gate at lambda0 = {lambda0}: accepted = {}, margin {:.3e}",
        gate.accepted, gate.worst_margin
    );

    let r = Renormalizer::new(Context::new(golden_rich(), &omega, lambda0), scales, 1e-3, 3)?;
    println!(
        "cluster shapes: {} (j = 1), {} (j = 2)",
        r.shapes(1).len(),
        r.shapes(2).len()
    );

    for (j, x) in [
        (1u8, 0.0),
        (1, 0.004),
        (1, 0.0008),
        (2, -2.0 * lambda0),
        (2, -2.0 * lambda0 - 0.004),
    ] {
        let row: Vec<String> = (0..=6)
            .map(|n| {
                format!(
                    "{:+.3e}",
                    r.m_upto(n, j, x)
                        .map(|m| m.re - if j == 2 { lambda0 } else { 0.0 })
                        .unwrap_or(f64::NAN)
                )
            })
            .collect();
        println!("j = {j}, x = {x:+.4}: M^[<=n] - M^[0] for n = 0..6: {}", row.join(" "));
    }

    println!("\n n  clusters  M1(0)        M2(-2l0)     symmetry  vanishing");
    for s in r.symmetry_rows()? {
        println!(
            "{:>2} {:>9}  {:+.3e}  {:+.3e}  {:.1e}   {:.1e}",
            s.n, s.clusters, s.m1_at_zero, s.m2_at_minus, s.symmetry_defect, s.vanishing_defect
        );
    }
    for j in [1, 2] {
        println!("scale -1 pair sum, j = {j}: {:.2e}", r.scale_minus_one_sum(j)?.norm());
    }

    let set = TreeSet::build(&r.ctx.g, 4, TREE_BUDGET)?;
    let c = counting_report(&set, &r.ctx, &r.scales, 4);
    println!(
        "counting bound through k = 4: {} trees, {} labelings, {} violations, min slack {}",
        c.trees, c.labelings, c.violations, c.min_slack
    );
    println!("resummation defect through k = 3: {:.3e}", r.resummation_defect(3)?);
    let d = r.diagnostics();
    println!(
        "propagator evaluations {}, worst denominator ratio {:.3}",
        d.propagator_evaluations, d.worst_denominator_ratio
    );
    Ok(())
}
