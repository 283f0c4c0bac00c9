//! Tree expansion of the series coefficients: enumeration counts per order,
//! the tree-sum versus recursion comparison, and a Graphviz dump of the
//! largest-valued tree of order 3.
//!
//! cargo run --example tree_expansion > tree.dot

use skewprod::io::golden_rich;
use skewprod::series::{FormalSeries, Problem};
use skewprod::trees::{oracle_table, tree_value, Context, TreeDiagram, TreeSet, TREE_BUDGET};

fn main() -> skewprod::Result<()> {
    let omega = [1.0, (5f64.sqrt() - 1.0) / 2.0];
    let g = golden_rich();
    let k_max = 4;
    let set = TreeSet::build(&g, k_max, TREE_BUDGET)?;
    let ctx = Context::new(g.clone(), &omega, 0.7);
    let series = FormalSeries::solve(Problem::new(g, &omega, 0.7)?, k_max)?;

    for k in 1..=k_max {
        let (m, lim) = set.shape_bound(k);
        eprintln!(
            "k = {k}: {} trees on {} roots, duplicates {}, largest shape class {m} (bound {lim})",
            set.count(k),
            set.roots(k).len(),
            set.duplicate_count(k)
        );
    }
    let rows = oracle_table(&set, &series, &ctx, k_max)?;
    let worst = rows.iter().max_by(|a, b| a.defect.total_cmp(&b.defect)).expect("rows");
    eprintln!(
        "worst tree/series defect {:.2e} at k = {}, j = {}, nu = {}",
        worst.defect, worst.k, worst.j, worst.nu
    );

    let mut best = None;
    for (j, nu) in set.roots(3) {
        for t in set.trees(3, j, &nu) {
            let v = tree_value(t, &ctx)?.norm();
            if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                best = Some((v, t.clone()));
            }
        }
    }
    let (v, t) = best.expect("order-3 trees");
    eprintln!(
        "largest order-3 tree: |value| = {v:.4e}, canonical form {}",
        t.canonical()
    );
    print!("{}", TreeDiagram::from_tree(&t).to_dot());
    Ok(())
}
