//! Derived outputs frozen from a reference run; any change in the solver
//! that moves these numbers must be deliberate.

use serde::Deserialize;
use skewprod::model::Nu;
use skewprod::series::{FormalSeries, Problem};

#[derive(Deserialize)]
struct Rec {
    k: usize,
    j: u8,
    nu: Nu,
    re: f64,
    im: f64,
}

#[test]
fn rich_field_coefficients_through_order_three() {
    let text = include_str!("../fixtures/rich_coefficients_k3.jsonl");
    let omega = [1.0, (5f64.sqrt() - 1.0) / 2.0];
    let s = FormalSeries::solve(Problem::new(skewprod::io::golden_rich(), &omega, 0.7).unwrap(), 3).unwrap();
    let mut n = 0;
    for line in text.lines() {
        let r: Rec = serde_json::from_str(line).unwrap();
        let z = s.coefficient(r.k, r.j, &r.nu);
        let d = ((z.re - r.re).powi(2) + (z.im - r.im).powi(2)).sqrt();
        assert!(d <= 1e-12 * z.norm().max(1.0), "k={} j={} nu={}", r.k, r.j, r.nu);
        n += 1;
    }
    let total: usize = (1..=3)
        .map(|k| s.slice(k).a.coeffs.len() + s.slice(k).c.coeffs.len() + 1)
        .sum();
    assert_eq!(n, total);
}

#[test]
fn counterterm_hand_values() {
    let omega = [1.0, (5f64.sqrt() - 1.0) / 2.0];
    for l0 in [1.0, 0.7, 2.3] {
        let s = FormalSeries::solve(Problem::new(skewprod::io::golden_sparse(), &omega, l0).unwrap(), 2).unwrap();
        // Hand evaluation for the two-mode field.
        assert!((s.mu(2).re - 1.0 / (2.0 * l0 - 1.0)).abs() <= 1e-12);
        assert_eq!(s.mu(1).re, 0.0);
    }
}
