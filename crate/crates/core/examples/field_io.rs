//! Building a field by hand, reducing it to complex form, and round-tripping
//! it through the JSON-lines format used by the command-line driver.
//!
//! cargo run --example field_io -- out.jsonl

use std::path::PathBuf;

use skewprod::io::{load_field, save_field, Field};
use skewprod::model::{complex_reduce, CMat, MatrixSeries, Nu, RealMatrixField, C64};

fn main() -> skewprod::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("field.jsonl"), PathBuf::from);

    // f(psi) = 0.3 A + Re[(q e^{i psi_1}) B] with A the rotation generator.
    let z = C64::default();
    let mut s = MatrixSeries::new(2);
    s.coeffs
        .insert(Nu::zero(2), CMat::new(z, C64::new(0.3, 0.0), C64::new(-0.3, 0.0), z));
    let q = CMat::new(
        C64::new(0.2, 0.1),
        C64::new(0.0, 0.5),
        C64::new(0.4, 0.0),
        C64::new(-0.2, -0.1),
    );
    s.coeffs.insert(Nu::new(&[1, 0]), q);
    s.coeffs.insert(Nu::new(&[-1, 0]), q.map(|w| w.conj()));
    let f = RealMatrixField::new(s)?;

    let g = complex_reduce(&f)?;
    for (nu, m) in &g.series().coeffs {
        println!(
            "g_{nu} = [[{:.3}, {:.3}], [{:.3}, {:.3}]]",
            m[(0, 0)],
            m[(0, 1)],
            m[(1, 0)],
            m[(1, 1)]
        );
    }

    save_field(&path, &Field::Real(f.clone()))?;
    let back = load_field(&path, 2)?;
    println!(
        "wrote {} ({:?} form), reload equal: {}",
        path.display(),
        back.form(),
        back == Field::Real(f)
    );

    let bad = "{\"form\":\"real\"}\n{\"nu\":[1,0],\"m\":[1,0,0,0,0,0,1,0]}\n";
    match skewprod::io::parse_field(bad, &path, 2) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => println!("unexpectedly accepted"),
    }
    Ok(())
}
