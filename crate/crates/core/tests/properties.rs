use std::path::Path;

use proptest::prelude::*;

use skewprod::io::{field_to_string, parse_field, Field, Form};
use skewprod::model::{complex_reduce, CMat, ComplexMatrixField, MatrixSeries, Nu, RealMatrixField, C64};
use skewprod::renorm::{counting_report, Renormalizer};
use skewprod::series::{FormalSeries, Problem};
use skewprod::smalldiv::{delta0, melnikov_gate, ScaleSystem};
use skewprod::trees::{oracle_table, Context, TreeSet, TREE_BUDGET};
use skewprod::Error;

fn golden() -> Vec<f64> {
    vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// A traceless complex 2x2 matrix from six reals.
fn traceless(v: &[f64]) -> CMat {
    CMat::new(c(v[0], v[1]), c(v[2], v[3]), c(v[4], v[5]), c(-v[0], -v[1]))
}

prop_compose! {
    /// Real traceless field with up to `n` nonzero modes of |nu|_1 <= 3 and an
    /// optional constant rotation part b A.
    fn real_field(n: usize)(
        modes in prop::collection::btree_map((-3i32..=3, -3i32..=3), prop::collection::vec(-1.0f64..1.0, 6), 1..=n),
        b in prop::option::of(-0.5f64..0.5),
    ) -> RealMatrixField {
        let mut s = MatrixSeries::new(2);
        for ((x, y), v) in modes {
            let nu = Nu::new(&[x, y]);
            if nu.is_zero() || nu.l1() > 3 || s.coeffs.contains_key(&nu) {
                continue;
            }
            let m = traceless(&v);
            s.coeffs.insert(nu, m);
            s.coeffs.insert(-nu, m.map(|z| z.conj()));
        }
        if let Some(b) = b {
            s.coeffs.insert(Nu::zero(2), CMat::new(c(0.0, 0.0), c(b, 0.0), c(-b, 0.0), c(0.0, 0.0)));
        }
        RealMatrixField::new(s).unwrap()
    }
}

fn solve(g: &ComplexMatrixField, lambda0: f64, k: usize) -> Option<FormalSeries> {
    match FormalSeries::solve(Problem::new(g.clone(), &golden(), lambda0).unwrap(), k) {
        Ok(s) => Some(s),
        Err(Error::SmallDivisor { .. }) => None,
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn reduced_fields_satisfy_the_real_form(f in real_field(4)) {
        let g = complex_reduce(&f).unwrap();
        let back = RealMatrixField::from_complex(&g);
        for (nu, m) in &f.series().coeffs {
            let d = (back.series().coeffs[nu] - m).iter().map(|z| z.norm()).fold(0.0, f64::max);
            prop_assert!(d <= 1e-14);
        }
        let psi = [0.3, -1.1];
        let e = g.eval(&psi);
        prop_assert!((e[(0, 0)] - e[(1, 1)].conj()).norm() <= 1e-12);
        prop_assert!((e[(0, 1)] - e[(1, 0)].conj()).norm() <= 1e-12);
    }

    #[test]
    fn trees_reproduce_the_series(f in real_field(3), lambda0 in 0.55f64..0.95) {
        let g = complex_reduce(&f).unwrap();
        let Some(s) = solve(&g, lambda0, 3) else { return Ok(()) };
        let set = TreeSet::build(&g, 3, TREE_BUDGET).unwrap();
        let rows = oracle_table(&set, &s, &Context::new(g, &golden(), lambda0), 3).unwrap();
        for r in rows {
            prop_assert!(r.defect <= 1e-9, "k={} j={} nu={}: {:e}", r.k, r.j, r.nu, r.defect);
        }
    }

    #[test]
    fn counterterm_is_real_and_first_integral_vanishes(f in real_field(4), lambda0 in 0.55f64..0.95) {
        let g = complex_reduce(&f).unwrap();
        let Some(s) = solve(&g, lambda0, 5) else { return Ok(()) };
        for k in 1..=5 {
            prop_assert!(s.mu(k).im.abs() <= 1e-10 * s.mu(k).norm().max(1.0));
            prop_assert!(s.max_h_defect(k) <= 1e-10 * s.order_scale(k));
        }
    }

    #[test]
    fn partition_of_unity_above_deepest_window(
        c1 in 0.01f64..1.0,
        n_max in 2usize..9,
        lambda0 in 0.3f64..1.5,
        x in -5.0f64..3.0,
    ) {
        let s = ScaleSystem::new(&golden(), n_max, c1).unwrap();
        prop_assume!(delta0(x, lambda0) > s.deepest_full());
        prop_assert!(s.partition_defect(x, lambda0) <= 1e-12);
        for n in 0..=n_max {
            let p = s.support_product(x, n, lambda0);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn rejected_parameters_carry_a_witness(lambda0 in 0.2f64..2.0, c1 in 0.01f64..0.5) {
        let s = ScaleSystem::new(&golden(), 6, c1).unwrap();
        let r = melnikov_gate(lambda0, &s, 32).unwrap();
        if !r.accepted {
            let nu = r.worst_nu.unwrap();
            prop_assert!((nu.dot(&golden()) + 2.0 * lambda0).abs() <= s.gate_threshold(&nu).unwrap());
        } else {
            prop_assert!(r.worst_margin > 0.0);
        }
    }

    #[test]
    fn field_text_roundtrips(f in real_field(5)) {
        let text = field_to_string(Form::Real, f.series());
        let back = parse_field(&text, Path::new("mem"), 2).unwrap();
        prop_assert_eq!(&back, &Field::Real(f.clone()));
        prop_assert_eq!(field_to_string(Form::Real, back.series()), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn renormalization_identities_on_random_fields(f in real_field(2), b in 0.1f64..0.4) {
        let mut s = f.series().clone();
        s.coeffs.insert(Nu::zero(2), CMat::new(c(0.0, 0.0), c(b, 0.0), c(-b, 0.0), c(0.0, 0.0)));
        let g = complex_reduce(&RealMatrixField::new(s).unwrap()).unwrap();
        let scales = ScaleSystem::new(&golden(), 6, 0.25).unwrap();
        let ctx = Context::new(g, &golden(), 0.7);
        let r = match Renormalizer::new(ctx, scales, 1e-3, 3) {
            Ok(r) => r,
            Err(Error::SmallDivisor { .. }) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        for j in [1, 2] {
            prop_assert!(r.scale_minus_one_sum(j).unwrap().norm() <= 1e-14);
        }
        for row in r.symmetry_rows().unwrap() {
            prop_assert!(row.symmetry_defect <= 1e-8 && row.vanishing_defect <= 1e-8, "{:?}", row);
        }
        let sh = r.shift_report(3, &[0.0, 0.01]).unwrap();
        prop_assert_eq!(sh.excluded_nonzero, 0);
        prop_assert!(sh.max_pair_defect <= 1e-12 && sh.max_sum_defect <= 1e-12);
        let cr = counting_report(&r.trees, &r.ctx, &r.scales, 3);
        prop_assert_eq!(cr.violations, 0);
    }
}
