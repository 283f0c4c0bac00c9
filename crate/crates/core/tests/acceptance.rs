//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so every line is shown.

use std::process::ExitCode;
use std::time::Instant;

use skewprod::io::{golden_rich, golden_sparse};
use skewprod::measure::measure_linearity;
use skewprod::model::{ComplexMatrixField, RealMatrixField};
use skewprod::renorm::{counting_report, Renormalizer};
use skewprod::series::{FormalSeries, Problem};
use skewprod::smalldiv::{alpha_sequence, ScaleSystem};
use skewprod::trees::{oracle_table, Context, TreeSet, TREE_BUDGET};
use skewprod::verify::{
    conjugation_residual, conservation_drift, default_time_grid, det_drift, fit_exponent, integrate_auxiliary,
    integrate_full, reducibility_check, AcPair,
};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn golden() -> Vec<f64> {
    vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
}

fn series(g: &ComplexMatrixField, lambda0: f64, k: usize) -> FormalSeries {
    FormalSeries::solve(Problem::new(g.clone(), &golden(), lambda0).unwrap(), k).unwrap()
}

fn rich_renormalizer() -> Renormalizer {
    let scales = ScaleSystem::new(&golden(), 6, 0.25).unwrap();
    let ctx = Context::new(golden_rich(), &golden(), 0.7);
    Renormalizer::new(ctx, scales, 1e-3, 3).unwrap()
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, g, l0) in [("sparse", golden_sparse(), 1.0), ("rich", golden_rich(), 0.7)] {
        let s = series(&g, l0, 4);
        let set = TreeSet::build(&g, 4, TREE_BUDGET).unwrap();
        let rows = oracle_table(&set, &s, &Context::new(g, &golden(), l0), 4).unwrap();
        let worst = rows.iter().map(|r| r.defect).fold(0.0, f64::max);
        let trees: usize = (1..=4).map(|k| set.count(k)).sum();
        ok &= worst <= 1e-10 && !rows.is_empty();
        detail.push(format!(
            "{name}: {} entries, {trees} trees, worst {worst:.2e}",
            rows.len()
        ));
    }
    verdict(ok, detail.join("; "))
}

fn reality() -> Outcome {
    let s = series(&golden_sparse(), 1.0, 6);
    let fixture = (s.mu(2).re - 1.0).abs();
    let mut worst: f64 = 0.0;
    for (g, l0) in [(golden_sparse(), 1.0), (golden_rich(), 0.7)] {
        let s = series(&g, l0, 6);
        for k in 1..=6 {
            worst = worst.max(s.mu(k).im.abs() / s.mu(k).norm().max(1.0));
        }
    }
    verdict(
        fixture <= 1e-12 && worst <= 1e-10,
        format!("|mu2 - 1| = {fixture:.2e}, worst |Im mu|/max(1,|mu|) = {worst:.2e}"),
    )
}

fn first_integral() -> Outcome {
    let mut worst: f64 = 0.0;
    for (g, l0) in [(golden_sparse(), 1.0), (golden_rich(), 0.7)] {
        let s = series(&g, l0, 6);
        for k in 1..=6 {
            worst = worst.max(s.max_h_defect(k) / s.order_scale(k));
        }
    }
    verdict(
        worst <= 1e-10,
        format!("worst max|H^(k)|/scale_k = {worst:.2e} over k <= 6, two fields"),
    )
}

fn scale_minus_one(r: &Renormalizer) -> Outcome {
    let a = r.scale_minus_one_sum(1).unwrap().norm();
    let b = r.scale_minus_one_sum(2).unwrap().norm();
    verdict(
        a <= 1e-14 && b <= 1e-14,
        format!("|sum_1| = {a:.2e}, |sum_2| = {b:.2e}"),
    )
}

fn symmetry(r: &Renormalizer) -> Outcome {
    let rows = r.symmetry_rows().unwrap();
    let sym = rows.iter().map(|x| x.symmetry_defect).fold(0.0, f64::max);
    let van = rows.iter().map(|x| x.vanishing_defect).fold(0.0, f64::max);
    let populated = rows.iter().filter(|x| x.clusters > 0).count();
    verdict(
        sym <= 1e-8 && van <= 1e-8 && populated > 0,
        format!("n <= 6, {populated} scales with clusters, symmetry {sym:.2e}, vanishing {van:.2e} (relative)"),
    )
}

fn counting(r: &Renormalizer) -> Outcome {
    let set = TreeSet::build(&r.ctx.g, 5, TREE_BUDGET).unwrap();
    let c = counting_report(&set, &r.ctx, &r.scales, 5);
    verdict(
        c.violations == 0 && c.labelings > 0,
        format!(
            "{} trees, {} renormalized labelings, {} violations, min slack {}",
            c.trees, c.labelings, c.violations, c.min_slack
        ),
    )
}

fn shift(r: &Renormalizer) -> Outcome {
    let s = r.shift_report(3, &[0.0, 0.004, -0.011, 0.02]).unwrap();
    let ok = s.second_kind > 0
        && s.labelings > 0
        && s.excluded_nonzero == 0
        && s.max_pair_defect <= 1e-12
        && s.max_sum_defect <= 1e-12;
    verdict(
        ok,
        format!(
            "{} second-kind clusters, {} labelings, pair {:.2e}, sum {:.2e}, {} excluded (nonzero {})",
            s.second_kind,
            s.labelings,
            s.max_pair_defect,
            s.max_sum_defect,
            s.excluded.values().sum::<usize>(),
            s.excluded_nonzero
        ),
    )
}

fn residual_scaling() -> Outcome {
    let s = series(&golden_sparse(), 0.7, 3);
    let grid = default_time_grid();
    let ratio = conjugation_residual(&s, 1e-2, &grid) / conjugation_residual(&s, 5e-3, &grid);
    let eps = [1e-2, 5e-3, 2.5e-3];
    let devs: Vec<f64> = eps
        .iter()
        .map(|&e| reducibility_check(&s, e, 20.0, 1e-3).unwrap().deviation)
        .collect();
    let p = fit_exponent(&eps, &devs);
    verdict(
        (8.0..=32.0).contains(&ratio) && (3.5..=4.5).contains(&p),
        format!("residual ratio {ratio:.4}, deviation exponent {p:.4}"),
    )
}

fn drift() -> Outcome {
    let mut hd: f64 = 0.0;
    let mut dd: f64 = 0.0;
    for (g, l0) in [(golden_sparse(), 0.7), (golden_rich(), 0.7)] {
        let s = series(&g, l0, 3);
        let f = RealMatrixField::from_complex(&g);
        for eps in [0.01, 0.05] {
            let (a, c) = s.eval_ac(eps, &[0.0, 0.0]);
            let mu = s.evaluate_mu(eps);
            let t = integrate_auxiliary(eps, mu, l0, &g, &golden(), AcPair(a, c), 100.0, 1e-3, 100).unwrap();
            hd = hd.max(conservation_drift(&t));
            let x = integrate_full(
                l0 + mu,
                eps,
                &f,
                &golden(),
                nalgebra::Matrix2::identity(),
                100.0,
                1e-3,
                100,
            )
            .unwrap();
            dd = dd.max(det_drift(&x));
        }
    }
    verdict(
        hd <= 1e-7 && dd <= 1e-8,
        format!("T = 100, h = 1e-3: H drift {hd:.2e}, det drift {dd:.2e}"),
    )
}

fn partition() -> Outcome {
    let mut worst: f64 = 0.0;
    for (c1, n_max) in [(0.25, 6), (1e-2, 8)] {
        let s = ScaleSystem::new(&golden(), n_max, c1).unwrap();
        let (w, used) = s.partition_scan(0.7, 2.0, 10_000);
        assert_eq!(used, 10_000);
        worst = worst.max(w);
    }
    verdict(
        worst <= 1e-12,
        format!("2 x 10^4 samples, worst |sum Psi_n - 1| = {worst:.2e}"),
    )
}

fn linearity() -> Outcome {
    let s = ScaleSystem::new(&golden(), 6, 1e-2).unwrap();
    let c1s = [1e-3, 2e-3, 4e-3, 8e-3, 1e-2];
    let r = measure_linearity((0.5, 1.5), 10_000, &s, 64, &c1s).unwrap();
    verdict(
        r.max_relative_spread <= 0.5 && r.excluded.iter().all(|e| *e > 0.0),
        format!(
            "excluded/C1 = {:?}, fitted constant {:.3}, spread {:.1}%",
            r.ratios
                .iter()
                .map(|x| (x * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            r.fitted_const,
            100.0 * r.max_relative_spread
        ),
    )
}

fn bryuno() -> Outcome {
    let a = alpha_sequence(&golden(), 2).unwrap();
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let want = [phi, 1.0 - phi, 5f64.sqrt() - 2.0];
    let worst = a.iter().zip(want).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    verdict(worst <= 1e-12, format!("alpha_0..2 = {a:?}, worst error {worst:.2e}"))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let r = rich_renormalizer();
    let criteria: Vec<Criterion> = vec![
        (
            "oracle equivalence, sparse field, lambda0 = 1, k <= 4",
            Box::new(oracle_equivalence),
        ),
        ("reality of mu, k <= 6, mu2 = 1 at lambda0 = 1", Box::new(reality)),
        ("first integral order by order, k <= 6", Box::new(first_integral)),
        ("scale -1 cancellation", Box::new(|| scale_minus_one(&r))),
        (
            "renormalization symmetry and vanishing, K_SE = 3",
            Box::new(|| symmetry(&r)),
        ),
        ("counting bound, k <= 5", Box::new(|| counting(&r))),
        ("shift identities, k <= 3", Box::new(|| shift(&r))),
        (
            "conjugation residual scaling and deviation exponent",
            Box::new(residual_scaling),
        ),
        ("conservation drift", Box::new(drift)),
        ("partition of unity", Box::new(partition)),
        ("measure linearity in C1", Box::new(linearity)),
        ("diophantine fixtures alpha_0..2", Box::new(bryuno)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = f();
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS [{:>2}] {name}: {d} ({secs:.2}s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {d} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
