//! Best approximations of a frequency vector: the sequence
//! alpha_n = min_{0 < |nu|_1 <= 2^n} |omega . nu|, its minimizers, the partial
//! Bryuno sums and the derived cutoff scales gamma_n.
//!
//! cargo run --example diophantine -- [omega components...]

use skewprod::smalldiv::{alpha_with_minimizers, bryuno_partial, ScaleSystem};

fn main() -> skewprod::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let omega = if args.is_empty() {
        vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
    } else {
        args
    };
    let n_max = 10;

    println!("omega = {omega:?}");
    println!("{:>3} {:>10} {:>22} {:>14}", "n", "2^n", "alpha_n", "minimizer");
    for (n, (a, nu)) in alpha_with_minimizers(&omega, n_max)?.iter().enumerate() {
        println!("{n:>3} {:>10} {a:>22.15e} {nu:>14}", 1u64 << n);
    }
    for n in [2, 4, 6, 8, 10] {
        println!(
            "partial Bryuno sum through n = {n:>2}: {:.12}",
            bryuno_partial(&omega, n)?
        );
    }

    let s = ScaleSystem::new(&omega, 6, 0.25)?;
    println!("\nC0 = {:.6} ({:?} variant), C1 = {}", s.c0, s.variant, s.c1);
    for n in 0..=s.n_max {
        let (lo, hi) = s.window(n);
        println!(
            "n = {n}: gamma_n = {:.4e}, Delta0 window [{lo:.3e}, {hi:.3e})",
            s.gamma[n]
        );
    }
    Ok(())
}
