//! Shift operation on second-kind self-energy clusters: each one is paired
//! with two first-kind partners whose values agree pointwise and cancel the
//! original at x = 0.
//!
//! cargo run --release --example shift_operation

use skewprod::io::golden_rich;
use skewprod::renorm::Renormalizer;
use skewprod::smalldiv::ScaleSystem;
use skewprod::trees::Context;

fn main() -> skewprod::Result<()> {
    let omega = [1.0, (5f64.sqrt() - 1.0) / 2.0];
    let scales = ScaleSystem::new(&omega, 6, 0.25)?;
    let r = Renormalizer::new(Context::new(golden_rich(), &omega, 0.7), scales, 1e-3, 3)?;

    let rep = r.shift_report(3, &[0.0, 0.004, -0.02])?;
    println!(
        "{} second-kind clusters, {} renormalized labelings checked",
        rep.second_kind, rep.labelings
    );
    println!("max |V_T' - V_T''| = {:.2e}", rep.max_pair_defect);
    println!("max |V_T' + V_T'' + V_T| at 0 = {:.2e}", rep.max_sum_defect);
    for (why, n) in &rep.excluded {
        println!("outside the shift domain ({why}): {n}");
    }
    println!("excluded clusters with nonzero value at 0: {}", rep.excluded_nonzero);

    if let Some(c) = r.shapes(1).iter().find(|c| r.shift_partners(c).is_ok()) {
        let (a, b) = r.shift_partners(c)?;
        println!("\nexample cluster of order {}: {:?}", c.k, c.tree);
        println!("partner T': order {}, first kind = {}", a.order(), a.is_first_kind());
        println!("partner T'': order {}, first kind = {}", b.order(), b.is_first_kind());
    }
    Ok(())
}
