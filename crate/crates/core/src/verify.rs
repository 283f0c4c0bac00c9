//! Numerical checks of a solved series against the flows it describes:
//! fixed-step RK4 integration of the real and auxiliary systems, the
//! conjugation and fixed-point residuals, conservation drift, and the
//! reducibility deviation with its epsilon-scaling exponent.
//!
//! Matrix norms are max-entry norms throughout.

use std::collections::BTreeMap;
use std::ops::{Add, Mul};

use nalgebra::Matrix2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    base_solution, conjugator, first_integral, AuxiliaryState, CMat, ComplexMatrixField, Nu, RealMatrixField,
    ScalarField, C64, I,
};
use crate::series::FormalSeries;

pub const DEFAULT_STEP: f64 = 1e-3;
/// Largest accepted T / h.
pub const MAX_STEPS: f64 = 1e7;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub h: f64,
    pub method: &'static str,
}

/// (a, c) state of the auxiliary system.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AcPair(pub C64, pub C64);

impl Add for AcPair {
    type Output = AcPair;
    fn add(self, o: AcPair) -> AcPair {
        AcPair(self.0 + o.0, self.1 + o.1)
    }
}

impl Mul<f64> for AcPair {
    type Output = AcPair;
    fn mul(self, s: f64) -> AcPair {
        AcPair(self.0 * s, self.1 * s)
    }
}

fn rk4<S, F>(mut y: S, t_end: f64, h: f64, stride: usize, rhs: F) -> Result<Trajectory<S>>
where
    S: Copy + Add<Output = S> + Mul<f64, Output = S>,
    F: Fn(f64, S) -> S,
{
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(Error::Usage(format!("need h > 0 and T >= 0, got h = {h}, T = {t_end}")));
    }
    let steps = (t_end / h).round();
    if steps > MAX_STEPS {
        return Err(Error::Budget {
            what: format!("T / h = {steps}"),
            limit: MAX_STEPS as usize,
        });
    }
    let steps = steps as usize;
    let stride = stride.max(1);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![y],
        h,
        method: "rk4",
    };
    for n in 0..steps {
        let t = n as f64 * h;
        let k1 = rhs(t, y);
        let k2 = rhs(t + 0.5 * h, y + k1 * (0.5 * h));
        let k3 = rhs(t + 0.5 * h, y + k2 * (0.5 * h));
        let k4 = rhs(t + h, y + k3 * h);
        y = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if (n + 1) % stride == 0 || n + 1 == steps {
            traj.times.push((n + 1) as f64 * h);
            traj.states.push(y);
        }
    }
    Ok(traj)
}

/// A = [[0, 1], [-1, 0]].
pub fn rotation_generator() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -1.0, 0.0)
}

/// exp(lambda A t).
pub fn closed_form_rotation(lambda: f64, t: f64) -> Matrix2<f64> {
    let (s, c) = (lambda * t).sin_cos();
    Matrix2::new(c, s, -s, c)
}

fn psi_at(omega: &[f64], t: f64) -> Vec<f64> {
    omega.iter().map(|w| w * t).collect()
}

/// RK4 for x' = (lambda A + eps f(omega t)) x, recording every `stride` steps.
#[allow(clippy::too_many_arguments)]
pub fn integrate_full(
    lambda: f64,
    eps: f64,
    f: &RealMatrixField,
    omega: &[f64],
    x0: Matrix2<f64>,
    t_end: f64,
    h: f64,
    stride: usize,
) -> Result<Trajectory<Matrix2<f64>>> {
    let a = rotation_generator();
    rk4(x0, t_end, h, stride, |t, x| {
        (a * lambda + f.eval_real(&psi_at(omega, t)) * eps) * x
    })
}

/// RK4 for the auxiliary (a, c) system with fixed mu.
#[allow(clippy::too_many_arguments)]
pub fn integrate_auxiliary(
    eps: f64,
    mu: f64,
    lambda0: f64,
    g: &ComplexMatrixField,
    omega: &[f64],
    start: AcPair,
    t_end: f64,
    h: f64,
    stride: usize,
) -> Result<Trajectory<AcPair>> {
    rk4(start, t_end, h, stride, |t, s| {
        let st = AuxiliaryState { a: s.0, c: s.1, t };
        let (da, dc) = crate::model::auxiliary_rhs(&st, eps, mu, lambda0, g, omega);
        AcPair(da, dc)
    })
}

/// max_t |H(a(t), c(t)) - H(a(0), c(0))|.
pub fn conservation_drift(traj: &Trajectory<AcPair>) -> f64 {
    let h0 = first_integral(traj.states[0].0, traj.states[0].1);
    traj.states
        .iter()
        .map(|s| (first_integral(s.0, s.1) - h0).abs())
        .fold(0.0, f64::max)
}

/// max_t |det x(t) - det x(0)|.
pub fn det_drift(traj: &Trajectory<Matrix2<f64>>) -> f64 {
    let d0 = traj.states[0].determinant();
    traj.states
        .iter()
        .map(|x| (x.determinant() - d0).abs())
        .fold(0.0, f64::max)
}

fn max_entry(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn diag_d() -> CMat {
    CMat::new(I, C64::default(), C64::default(), -I)
}

/// Sample times used by the residual checks: 200 points with step 0.37.
pub fn default_time_grid() -> Vec<f64> {
    (0..200).map(|j| 0.37 * j as f64).collect()
}

/// max_t |B' + lambda0 [B, D] - (eps g + mu D) B| with the given mu, in the
/// complex frame, B' taken termwise from the Fourier coefficients.
pub fn conjugation_residual_with_mu(series: &FormalSeries, eps: f64, mu: f64, t_grid: &[f64]) -> f64 {
    let p = &series.problem;
    let d = diag_d();
    t_grid
        .iter()
        .map(|&t| {
            let psi = psi_at(&p.omega, t);
            let b = series.evaluate_beta(eps, &psi);
            let bd = series.evaluate_beta_dot(eps, &psi);
            let r = bd + (b * d - d * b) * C64::new(p.lambda0, 0.0)
                - (p.g.eval(&psi) * C64::new(eps, 0.0) + d * C64::new(mu, 0.0)) * b;
            max_entry(&r)
        })
        .fold(0.0, f64::max)
}

pub fn conjugation_residual(series: &FormalSeries, eps: f64, t_grid: &[f64]) -> f64 {
    conjugation_residual_with_mu(series, eps, series.evaluate_mu(eps), t_grid)
}

fn entry_field(g: &ComplexMatrixField, i: usize, j: usize) -> ScalarField {
    ScalarField {
        coeffs: g
            .series()
            .entry_support(i, j)
            .into_iter()
            .map(|nu| (nu, g.f(i, j, &nu)))
            .collect(),
    }
}

/// Residual maps of the a- and c-equations in Fourier space for the given
/// a, c fields and mu; `eps` multiplies the field terms.
fn equation_defects(
    series: &FormalSeries,
    eps: f64,
    a: &ScalarField,
    c: &ScalarField,
    mu: C64,
) -> BTreeMap<Nu, (C64, C64)> {
    let p = &series.problem;
    let dim = p.dim();
    let zero = Nu::zero(dim);
    let (f11, f12, f21, f22) = (
        entry_field(&p.g, 1, 1),
        entry_field(&p.g, 1, 2),
        entry_field(&p.g, 2, 1),
        entry_field(&p.g, 2, 2),
    );
    let e = C64::new(eps, 0.0);
    let mut ra = ScalarField::default();
    let mut rc = ScalarField::default();
    ra.add_scaled(&f11, e);
    rc.add_scaled(&f21, e);
    *ra.coeffs.entry(zero).or_default() += I * mu;
    ra.add_scaled(&f11.mul(a, None).0, e);
    ra.add_scaled(&f12.mul(c, None).0, e);
    ra.add_scaled(a, I * mu);
    rc.add_scaled(c, -2.0 * I * p.lambda0);
    rc.add_scaled(&f21.mul(a, None).0, e);
    rc.add_scaled(&f22.mul(c, None).0, e);
    rc.add_scaled(c, -I * mu);
    let mut keys: Vec<Nu> = ra
        .coeffs
        .keys()
        .chain(rc.coeffs.keys())
        .chain(a.coeffs.keys())
        .copied()
        .collect();
    keys.extend(c.coeffs.keys().copied());
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|nu| {
            let x = I * nu.dot(&p.omega);
            (nu, (x * a.get(&nu) - ra.get(&nu), x * c.get(&nu) - rc.get(&nu)))
        })
        .collect()
}

fn truncated(series: &FormalSeries, eps: f64) -> (ScalarField, ScalarField) {
    let mut a = ScalarField::default();
    let mut c = ScalarField::default();
    let mut e = 1.0;
    for s in &series.orders {
        e *= eps;
        a.add_scaled(&s.a, C64::new(e, 0.0));
        c.add_scaled(&s.c, C64::new(e, 0.0));
    }
    (a, c)
}

/// Per-mode defects of the a- and c-equations on the truncated series at eps.
pub fn fixed_point_defects(series: &FormalSeries, eps: f64) -> BTreeMap<Nu, (C64, C64)> {
    let (a, c) = truncated(series, eps);
    let mu = C64::new(series.evaluate_mu(eps), 0.0);
    equation_defects(series, eps, &a, &c, mu)
}

/// Defect pair of the a- and c-equations at mode nu.
pub fn fixed_point_residual(series: &FormalSeries, eps: f64, nu: &Nu) -> (C64, C64) {
    fixed_point_defects(series, eps).get(nu).copied().unwrap_or_default()
}

/// max over modes and both equations of the fixed-point defect.
pub fn max_fixed_point_residual(series: &FormalSeries, eps: f64) -> f64 {
    fixed_point_defects(series, eps)
        .values()
        .map(|(x, y)| x.norm().max(y.norm()))
        .fold(0.0, f64::max)
}

/// Order-k part of the equation defects for k = 1..=K, as (max at nu = 0,
/// max over all nu), each relative to the order-k coefficient scale.
pub fn order_defects(series: &FormalSeries) -> Vec<(f64, f64)> {
    let p = &series.problem;
    let zero = Nu::zero(p.dim());
    let one = C64::new(1.0, 0.0);
    let (f11, f12, f21, f22) = (
        entry_field(&p.g, 1, 1),
        entry_field(&p.g, 1, 2),
        entry_field(&p.g, 2, 1),
        entry_field(&p.g, 2, 2),
    );
    (1..=series.order())
        .map(|k| {
            let s = series.slice(k);
            let mut ra = ScalarField::default();
            let mut rc = ScalarField::default();
            if k == 1 {
                ra.add_scaled(&f11, one);
                rc.add_scaled(&f21, one);
            } else {
                let prev = series.slice(k - 1);
                ra.add_scaled(&f11.mul(&prev.a, None).0, one);
                ra.add_scaled(&f12.mul(&prev.c, None).0, one);
                rc.add_scaled(&f21.mul(&prev.a, None).0, one);
                rc.add_scaled(&f22.mul(&prev.c, None).0, one);
            }
            *ra.coeffs.entry(zero).or_default() += I * s.mu.re;
            for k1 in 1..k {
                let m = series.mu(k1).re;
                ra.add_scaled(&series.slice(k - k1).a, I * m);
                rc.add_scaled(&series.slice(k - k1).c, -I * m);
            }
            rc.add_scaled(&s.c, -2.0 * I * p.lambda0);
            let mut keys: Vec<Nu> = ra
                .coeffs
                .keys()
                .chain(rc.coeffs.keys())
                .chain(s.a.coeffs.keys())
                .copied()
                .collect();
            keys.extend(s.c.coeffs.keys().copied());
            keys.sort();
            keys.dedup();
            let scale = series.order_scale(k);
            let mut at_zero: f64 = 0.0;
            let mut all: f64 = 0.0;
            for nu in keys {
                let x = I * nu.dot(&p.omega);
                let da = x * s.a.get(&nu) - ra.get(&nu);
                let dc = x * s.c.get(&nu) - rc.get(&nu);
                let m = da.norm().max(dc.norm()) / scale;
                all = all.max(m);
                if nu.is_zero() {
                    at_zero = at_zero.max(m);
                }
            }
            (at_zero, all)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReducibilityReport {
    pub epsilon: f64,
    pub lambda: f64,
    /// max_t |x(t) - M^{-1} B(omega t) exp(lambda0 D t) M|.
    pub deviation: f64,
    /// sup_t |x(t)|.
    pub sup_norm: f64,
    pub samples: usize,
}

/// Integrate x' = (lambda A + eps f) x with lambda = lambda0 + mu(eps) from
/// x(0) = M^{-1} B(0) M and compare with the reduced flow.
pub fn reducibility_check(series: &FormalSeries, eps: f64, t_end: f64, h: f64) -> Result<ReducibilityReport> {
    let p = &series.problem;
    let f = RealMatrixField::from_complex(&p.g);
    let lambda = p.lambda0 + series.evaluate_mu(eps);
    let (m, minv) = conjugator();
    let to_real = |z: CMat| -> Matrix2<f64> { (minv * z * m).map(|w| w.re) };
    let predicted = |t: f64| -> Matrix2<f64> {
        let psi = psi_at(&p.omega, t);
        to_real(series.evaluate_beta(eps, &psi) * base_solution(p.lambda0, t))
    };
    let x0 = predicted(0.0);
    let stride = ((0.1 / h).round() as usize).max(1);
    let traj = integrate_full(lambda, eps, &f, &p.omega, x0, t_end, h, stride)?;
    let mut deviation: f64 = 0.0;
    let mut sup_norm: f64 = 0.0;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let d = x - predicted(*t);
        deviation = deviation.max(d.iter().map(|v| v.abs()).fold(0.0, f64::max));
        sup_norm = sup_norm.max(x.iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    Ok(ReducibilityReport {
        epsilon: eps,
        lambda,
        deviation,
        sup_norm,
        samples: traj.times.len(),
    })
}

/// Least-squares slope of log y against log x.
pub fn fit_exponent(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// One row of the verify table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyRow {
    pub epsilon: f64,
    pub residual: f64,
    pub deviation: f64,
    pub drift: f64,
    pub fitted_exponent: f64,
}

/// Residual, deviation and H-drift at each epsilon; the exponent column is
/// the deviation fit over all rows.
pub fn verify_table(series: &FormalSeries, epsilons: &[f64], t_end: f64, h: f64) -> Result<Vec<VerifyRow>> {
    use rayon::prelude::*;
    let grid = default_time_grid();
    let p = &series.problem;
    let rows: Vec<Result<(f64, f64, f64, f64)>> = epsilons
        .par_iter()
        .map(|&eps| {
            let residual = conjugation_residual(series, eps, &grid);
            let dev = reducibility_check(series, eps, t_end, h)?.deviation;
            let (a, c) = series.eval_ac(eps, &vec![0.0; p.dim()]);
            let traj = integrate_auxiliary(
                eps,
                series.evaluate_mu(eps),
                p.lambda0,
                &p.g,
                &p.omega,
                AcPair(a, c),
                t_end,
                h,
                100,
            )?;
            Ok((eps, residual, dev, conservation_drift(&traj)))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let slope = fit_exponent(&xs, &ys);
    Ok(rows
        .into_iter()
        .map(|(epsilon, residual, deviation, drift)| VerifyRow {
            epsilon,
            residual,
            deviation,
            drift,
            fitted_exponent: slope,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::golden_sparse;
    use crate::series::Problem;

    fn golden() -> Vec<f64> {
        vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
    }

    #[test]
    fn unperturbed_flow_is_rotation() {
        let f = RealMatrixField::from_complex(&golden_sparse());
        let tr = integrate_full(1.3, 0.0, &f, &golden(), Matrix2::identity(), 10.0, 1e-3, 1000).unwrap();
        let d = tr.states.last().unwrap() - closed_form_rotation(1.3, 10.0);
        assert!(d.abs().max() < 1e-10, "{}", d.abs().max());
    }

    #[test]
    fn rk4_is_fourth_order() {
        let f = RealMatrixField::from_complex(&golden_sparse());
        let err = |h: f64| {
            let tr = integrate_full(1.0, 0.0, &f, &golden(), Matrix2::identity(), 5.0, h, usize::MAX).unwrap();
            (tr.states.last().unwrap() - closed_form_rotation(1.0, 5.0)).abs().max()
        };
        let r = err(0.1) / err(0.05);
        assert!((12.0..20.0).contains(&r), "{r}");
    }

    #[test]
    fn order_defects_vanish() {
        let s = FormalSeries::solve(Problem::new(golden_sparse(), &golden(), 0.7).unwrap(), 5).unwrap();
        for (k, (z, all)) in order_defects(&s).into_iter().enumerate() {
            assert!(z < 1e-12 && all < 1e-12, "order {}: {z} {all}", k + 1);
        }
    }

    #[test]
    fn first_order_defect_is_quadratic() {
        let s = FormalSeries::solve(Problem::new(golden_sparse(), &golden(), 0.7).unwrap(), 1).unwrap();
        let r = max_fixed_point_residual(&s, 1e-2) / max_fixed_point_residual(&s, 5e-3);
        assert!((3.5..4.5).contains(&r), "{r}");
    }

    #[test]
    fn trivial_residuals() {
        let s = FormalSeries::solve(Problem::new(golden_sparse(), &golden(), 0.7).unwrap(), 3).unwrap();
        assert_eq!(conjugation_residual(&s, 0.0, &default_time_grid()), 0.0);
        let tr = integrate_auxiliary(
            0.0,
            0.0,
            0.7,
            &s.problem.g,
            &golden(),
            AcPair::default(),
            10.0,
            1e-3,
            10,
        )
        .unwrap();
        assert_eq!(conservation_drift(&tr), 0.0);
    }
}
