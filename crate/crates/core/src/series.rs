//! Order-by-order solution of the conjugation equation as formal power
//! series in epsilon: beta = sum eps^k beta^(k), mu = sum eps^k mu^(k).
//!
//! The unknowns are the Fourier coefficients of a = B11 - 1 and c = B21; the
//! remaining entries follow from b = c*, d = a*. The zero mode of a is fixed
//! at every order by requiring the first integral H = det B - 1 to vanish.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::{CMat, ComplexMatrixField, Nu, ScalarField, C64, I};

pub const DIVISOR_FLOOR: f64 = 1e-8;

/// Coefficients of one order k.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OrderSlice {
    pub a: ScalarField,
    pub c: ScalarField,
    /// Stored complex; only the real part is used downstream.
    pub mu: C64,
}

impl OrderSlice {
    pub fn a0(&self) -> f64 {
        self.a.get(&Nu::zero(self.dim())).re
    }

    pub fn c0(&self) -> C64 {
        self.c.get(&Nu::zero(self.dim()))
    }

    fn dim(&self) -> usize {
        self.a
            .coeffs
            .keys()
            .chain(self.c.coeffs.keys())
            .next()
            .map_or(0, Nu::dim)
    }
}

/// Solver inputs shared by every order.
#[derive(Clone, Debug)]
pub struct Problem {
    pub g: ComplexMatrixField,
    pub omega: Vec<f64>,
    pub lambda0: f64,
    pub divisor_floor: f64,
    /// Optional |nu|_1 cap on convolutions; `None` keeps the exact support.
    pub mode_cap: Option<i64>,
}

impl Problem {
    pub fn new(g: ComplexMatrixField, omega: &[f64], lambda0: f64) -> Result<Self> {
        if g.dim() != omega.len() && !g.is_zero() {
            return Err(Error::Usage(format!(
                "field dimension {} does not match omega dimension {}",
                g.dim(),
                omega.len()
            )));
        }
        if lambda0 <= 0.0 {
            return Err(Error::Domain(format!("lambda0 = {lambda0} must be positive")));
        }
        Ok(Problem {
            g,
            omega: omega.to_vec(),
            lambda0,
            divisor_floor: DIVISOR_FLOOR,
            mode_cap: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    fn entry(&self, i: usize, j: usize) -> Vec<(Nu, C64)> {
        self.g
            .series()
            .entry_support(i, j)
            .into_iter()
            .map(|nu| (nu, self.g.f(i, j, &nu)))
            .collect()
    }

    /// -i / (omega . nu) for nu != 0.
    fn div_a(&self, nu: &Nu) -> Result<C64> {
        let x = nu.dot(&self.omega);
        if x.abs() < self.divisor_floor {
            return Err(Error::SmallDivisor {
                nu: *nu,
                j: 1,
                divisor: x,
            });
        }
        Ok(-I / x)
    }

    /// -i / (omega . nu + 2 lambda0), any nu.
    fn div_c(&self, nu: &Nu) -> Result<C64> {
        let x = nu.dot(&self.omega) + 2.0 * self.lambda0;
        if x.abs() < self.divisor_floor {
            return Err(Error::SmallDivisor {
                nu: *nu,
                j: 2,
                divisor: x,
            });
        }
        Ok(-I / x)
    }
}

#[derive(Clone, Debug)]
pub struct FormalSeries {
    pub problem: Problem,
    /// `orders[k - 1]` holds order k.
    pub orders: Vec<OrderSlice>,
    /// l1 mass of convolution products dropped by `mode_cap`.
    pub dropped_mass: f64,
}

/// Order-1 coefficients.
pub fn solve_order_1(p: &Problem) -> Result<OrderSlice> {
    let zero = Nu::zero(p.dim());
    let mut out = OrderSlice::default();
    for (nu, f) in p.entry(1, 1) {
        if nu.is_zero() {
            out.mu = I * f;
        } else {
            out.a.coeffs.insert(nu, p.div_a(&nu)? * f);
        }
    }
    for (nu, f) in p.entry(2, 1) {
        out.c.coeffs.insert(nu, p.div_c(&nu)? * f);
    }
    out.a.coeffs.entry(zero).or_default();
    Ok(out)
}

fn accumulate(target: &mut BTreeMap<Nu, C64>, f: &[(Nu, C64)], u: &ScalarField, cap: Option<i64>) -> f64 {
    let mut dropped = 0.0;
    for (n1, z1) in f {
        for (n2, z2) in &u.coeffs {
            let nu = *n1 + *n2;
            let p = z1 * z2;
            if cap.is_some_and(|c| nu.l1() > c) {
                dropped += p.norm();
            } else {
                *target.entry(nu).or_default() += p;
            }
        }
    }
    dropped
}

/// Sum_{nu} u_nu conj(v_nu), the zero mode of u v*.
fn zero_mode_pair(u: &ScalarField, v: &ScalarField) -> C64 {
    u.coeffs.iter().map(|(nu, z)| z * v.get(nu).conj()).sum()
}

impl FormalSeries {
    pub fn new(problem: Problem) -> Self {
        FormalSeries {
            problem,
            orders: Vec::new(),
            dropped_mass: 0.0,
        }
    }

    /// Solve through order `k_max`.
    pub fn solve(problem: Problem, k_max: usize) -> Result<Self> {
        let mut s = FormalSeries::new(problem);
        for k in 1..=k_max {
            s.push_order(k)?;
        }
        Ok(s)
    }

    pub fn order(&self) -> usize {
        self.orders.len()
    }

    pub fn slice(&self, k: usize) -> &OrderSlice {
        &self.orders[k - 1]
    }

    pub fn a(&self, k: usize, nu: &Nu) -> C64 {
        self.slice(k).a.get(nu)
    }

    pub fn c(&self, k: usize, nu: &Nu) -> C64 {
        self.slice(k).c.get(nu)
    }

    pub fn mu(&self, k: usize) -> C64 {
        self.slice(k).mu
    }

    /// Coefficient u^(k)_{j,nu}: j = 1 is a, j = 2 is c, j = 3 is mu (nu = 0).
    pub fn coefficient(&self, k: usize, j: u8, nu: &Nu) -> C64 {
        match j {
            1 => self.a(k, nu),
            2 => self.c(k, nu),
            3 if nu.is_zero() => self.mu(k),
            _ => C64::default(),
        }
    }

    /// Append order `k`, which must equal the current order plus one.
    pub fn push_order(&mut self, k: usize) -> Result<()> {
        if k != self.orders.len() + 1 {
            return Err(Error::Usage(format!(
                "order {k} requested with orders 1..={} solved",
                self.orders.len()
            )));
        }
        let (slice, dropped) = if k == 1 {
            (solve_order_1(&self.problem)?, 0.0)
        } else {
            order_k(self, k)?
        };
        self.orders.push(slice);
        self.dropped_mass += dropped;
        Ok(())
    }

    /// Fourier coefficients of H^(k), the order-k part of a + a* + |a|^2 - |c|^2.
    pub fn first_integral_order(&self, k: usize) -> ScalarField {
        let s = self.slice(k);
        let mut h = s.a.clone();
        h.add_scaled(&s.a.conj_fn(), C64::new(1.0, 0.0));
        for k1 in 1..k {
            let (lo, hi) = (self.slice(k1), self.slice(k - k1));
            h.add_scaled(&lo.a.mul(&hi.a.conj_fn(), None).0, C64::new(1.0, 0.0));
            h.add_scaled(&lo.c.mul(&hi.c.conj_fn(), None).0, C64::new(-1.0, 0.0));
        }
        h
    }

    /// Magnitude of order-k coefficients, the reference for H-defect checks.
    pub fn order_scale(&self, k: usize) -> f64 {
        let s = self.slice(k);
        s.a.max_abs().max(s.c.max_abs()).max(s.mu.norm()).max(1.0)
    }

    pub fn max_h_defect(&self, k: usize) -> f64 {
        self.first_integral_order(k).max_abs()
    }

    /// a(psi) and c(psi) summed through the solved order.
    pub fn eval_ac(&self, eps: f64, psi: &[f64]) -> (C64, C64) {
        let mut a = C64::default();
        let mut c = C64::default();
        let mut e = 1.0;
        for s in &self.orders {
            e *= eps;
            a += e * s.a.eval(psi);
            c += e * s.c.eval(psi);
        }
        (a, c)
    }

    /// d/dt of (a, c) along psi = omega t, termwise in Fourier space.
    pub fn eval_ac_dot(&self, eps: f64, psi: &[f64]) -> (C64, C64) {
        let omega = &self.problem.omega;
        let deriv = |u: &ScalarField| -> C64 {
            u.coeffs
                .iter()
                .map(|(nu, &z)| I * nu.dot(omega) * z * C64::from_polar(1.0, nu.phase(psi)))
                .sum()
        };
        let mut a = C64::default();
        let mut c = C64::default();
        let mut e = 1.0;
        for s in &self.orders {
            e *= eps;
            a += e * deriv(&s.a);
            c += e * deriv(&s.c);
        }
        (a, c)
    }

    /// B(psi) = 1 + beta(psi) with beta = [[a, c*], [c, a*]].
    pub fn evaluate_beta(&self, eps: f64, psi: &[f64]) -> CMat {
        let (a, c) = self.eval_ac(eps, psi);
        let one = C64::new(1.0, 0.0);
        CMat::new(one + a, c.conj(), c, one + a.conj())
    }

    /// d/dt B(omega t) at psi.
    pub fn evaluate_beta_dot(&self, eps: f64, psi: &[f64]) -> CMat {
        let (a, c) = self.eval_ac_dot(eps, psi);
        CMat::new(a, c.conj(), c, a.conj())
    }

    /// sum eps^k Re mu^(k).
    pub fn evaluate_mu(&self, eps: f64) -> f64 {
        self.evaluate_mu_upto(eps, self.order())
    }

    pub fn evaluate_mu_upto(&self, eps: f64, k_max: usize) -> f64 {
        let mut e = 1.0;
        let mut out = 0.0;
        for s in self.orders.iter().take(k_max) {
            e *= eps;
            out += e * s.mu.re;
        }
        out
    }

    /// Largest |Im mu^(k)| / max(1, |mu^(k)|) over solved orders.
    pub fn max_mu_imag(&self) -> f64 {
        self.orders
            .iter()
            .map(|s| s.mu.im.abs() / s.mu.norm().max(1.0))
            .fold(0.0, f64::max)
    }

    /// The k-fold sumset of supp g U -supp g, which must contain the
    /// support of a^(k) and c^(k).
    pub fn allowed_support(&self, k: usize) -> BTreeSet<Nu> {
        let mut gen: BTreeSet<Nu> = BTreeSet::new();
        for nu in self.problem.g.series().support() {
            gen.insert(*nu);
            gen.insert(-*nu);
        }
        let mut cur: BTreeSet<Nu> = gen.clone();
        for _ in 1..k {
            cur = cur.iter().flat_map(|a| gen.iter().map(move |b| *a + *b)).collect();
        }
        cur
    }

    /// Momenta of order k outside the allowed sumset.
    pub fn support_violations(&self, k: usize) -> Vec<Nu> {
        let allowed = self.allowed_support(k);
        let s = self.slice(k);
        s.a.coeffs
            .iter()
            .chain(&s.c.coeffs)
            .filter(|(nu, z)| z.norm() > 0.0 && !allowed.contains(nu))
            .map(|(nu, _)| *nu)
            .collect()
    }
}

/// Order-k coefficients from orders 1..k-1.
pub fn solve_order_k(series: &FormalSeries, k: usize) -> Result<OrderSlice> {
    Ok(order_k(series, k)?.0)
}

fn order_k(series: &FormalSeries, k: usize) -> Result<(OrderSlice, f64)> {
    if k < 2 || series.order() < k - 1 {
        return Err(Error::Usage(format!(
            "order {k} needs orders 1..{} solved, have {}",
            k.saturating_sub(1),
            series.order()
        )));
    }
    let p = &series.problem;
    let zero = Nu::zero(p.dim());
    let cap = p.mode_cap;
    let prev = series.slice(k - 1);
    let mut dropped = 0.0;

    let (f11, f12, f21, f22) = (p.entry(1, 1), p.entry(1, 2), p.entry(2, 1), p.entry(2, 2));
    // P_a = [f11 a + f12 c]^(k-1), P_c = [f21 a + f22 c]^(k-1).
    let mut pa = BTreeMap::new();
    dropped += accumulate(&mut pa, &f11, &prev.a, cap);
    dropped += accumulate(&mut pa, &f12, &prev.c, cap);
    let mut pc = BTreeMap::new();
    dropped += accumulate(&mut pc, &f21, &prev.a, cap);
    dropped += accumulate(&mut pc, &f22, &prev.c, cap);
    // Q_a = sum mu^(k1) a^(k-k1), Q_c = sum mu^(k1) c^(k-k1).
    let mut qa: BTreeMap<Nu, C64> = BTreeMap::new();
    let mut qc: BTreeMap<Nu, C64> = BTreeMap::new();
    for k1 in 1..k {
        let mu = series.mu(k1).re;
        if mu == 0.0 {
            continue;
        }
        let s = series.slice(k - k1);
        for (nu, z) in &s.a.coeffs {
            *qa.entry(*nu).or_default() += mu * z;
        }
        for (nu, z) in &s.c.coeffs {
            *qc.entry(*nu).or_default() += mu * z;
        }
    }

    let mut out = OrderSlice::default();
    let keys_a: BTreeSet<Nu> = pa.keys().chain(qa.keys()).copied().collect();
    for nu in keys_a {
        let rhs = pa.get(&nu).copied().unwrap_or_default() + I * qa.get(&nu).copied().unwrap_or_default();
        if nu.is_zero() {
            out.mu = I * rhs;
        } else if rhs != C64::default() {
            out.a.coeffs.insert(nu, p.div_a(&nu)? * rhs);
        }
    }
    let keys_c: BTreeSet<Nu> = pc.keys().chain(qc.keys()).copied().collect();
    for nu in keys_c {
        let rhs = pc.get(&nu).copied().unwrap_or_default() - I * qc.get(&nu).copied().unwrap_or_default();
        if rhs != C64::default() {
            out.c.coeffs.insert(nu, p.div_c(&nu)? * rhs);
        }
    }
    let mut a0 = C64::default();
    for k1 in 1..k {
        let (lo, hi) = (series.slice(k1), series.slice(k - k1));
        a0 += zero_mode_pair(&lo.a, &hi.a) - zero_mode_pair(&lo.c, &hi.c);
    }
    out.a.coeffs.insert(zero, C64::new(-0.5 * a0.re, 0.0));
    Ok((out, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::golden_sparse;
    use crate::model::MatrixSeries;
    use approx::assert_abs_diff_eq;

    fn golden() -> Vec<f64> {
        vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
    }

    fn nu(k: &[i32]) -> Nu {
        Nu::new(k)
    }

    #[test]
    fn sparse_field_fixtures() {
        let p = Problem::new(golden_sparse(), &golden(), 1.0).unwrap();
        let s = FormalSeries::solve(p, 4).unwrap();
        assert_eq!(s.mu(1), C64::default());
        assert_abs_diff_eq!(s.c(1, &nu(&[-1, 0])).im, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu(2).re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.slice(2).a0(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.c(3, &nu(&[-1, 0])).im, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.evaluate_mu_upto(0.1, 2), 0.01, epsilon = 1e-15);
        for k in 1..=4 {
            assert!(s.max_h_defect(k) < 1e-12);
            assert!(s.support_violations(k).is_empty());
        }
    }

    #[test]
    fn constant_diagonal_gives_real_mu1() {
        let mut m = MatrixSeries::new(2);
        let z = C64::default();
        m.coeffs
            .insert(nu(&[0, 0]), CMat::new(C64::new(0.0, 0.3), z, z, C64::new(0.0, -0.3)));
        let g = ComplexMatrixField::new(m).unwrap();
        let s = FormalSeries::solve(Problem::new(g, &golden(), 0.7).unwrap(), 1).unwrap();
        assert_abs_diff_eq!(s.mu(1).re, -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.evaluate_mu(0.1), -0.03, epsilon = 1e-15);
    }

    #[test]
    fn zero_field_zero_series() {
        let g = ComplexMatrixField::zero(2);
        let s = FormalSeries::solve(Problem::new(g, &golden(), 0.7).unwrap(), 3).unwrap();
        for k in 1..=3 {
            assert_eq!(s.slice(k).a.max_abs(), 0.0);
            assert_eq!(s.slice(k).c.max_abs(), 0.0);
            assert_eq!(s.mu(k), C64::default());
        }
        assert_eq!(s.evaluate_beta(0.3, &[0.1, 0.2]), CMat::identity());
    }

    #[test]
    fn perturbing_a0_shifts_h0_by_twice() {
        let p = Problem::new(golden_sparse(), &golden(), 1.0).unwrap();
        let mut s = FormalSeries::solve(p, 2).unwrap();
        let delta = 1e-3;
        *s.orders[1].a.coeffs.get_mut(&nu(&[0, 0])).unwrap() += delta;
        let h = s.first_integral_order(2);
        assert_abs_diff_eq!(h.get(&nu(&[0, 0])).re, 2.0 * delta, epsilon = 1e-15);
    }

    #[test]
    fn order_must_be_sequential() {
        let p = Problem::new(golden_sparse(), &golden(), 1.0).unwrap();
        let mut s = FormalSeries::new(p);
        assert!(matches!(s.push_order(2), Err(Error::Usage(_))));
    }

    #[test]
    fn exact_resonance_is_small_divisor() {
        // g21 at (-2, 0) with 2 lambda0 = 2 makes omega . nu + 2 lambda0 = 0.
        let mut m = MatrixSeries::new(2);
        let z = C64::default();
        let one = C64::new(1.0, 0.0);
        m.coeffs.insert(nu(&[2, 0]), CMat::new(z, one, z, z));
        m.coeffs.insert(nu(&[-2, 0]), CMat::new(z, z, one, z));
        let g = ComplexMatrixField::new(m).unwrap();
        let err = FormalSeries::solve(Problem::new(g, &golden(), 1.0).unwrap(), 1).unwrap_err();
        assert!(matches!(err, Error::SmallDivisor { j: 2, .. }));
    }
}
