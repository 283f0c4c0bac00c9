//! Fourier fields on the torus, the reduction of the real problem to the
//! complex auxiliary system, and its first integral.
//!
//! Momenta are measured in the l1 norm everywhere in the crate.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Matrix2<C64>;

pub const I: C64 = C64::new(0.0, 1.0);
pub const MAX_DIM: usize = 3;

/// Tolerance used when validating tracelessness and conjugation symmetry of
/// loaded or reduced fields.
pub const FIELD_TOL: f64 = 1e-12;

/// Integer momentum in Z^d, d <= 3.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Nu {
    k: [i32; MAX_DIM],
    d: u8,
}

impl Nu {
    pub fn new(k: &[i32]) -> Self {
        assert!(!k.is_empty() && k.len() <= MAX_DIM, "dimension must be 1..=3");
        let mut a = [0; MAX_DIM];
        a[..k.len()].copy_from_slice(k);
        Nu { k: a, d: k.len() as u8 }
    }

    pub fn zero(d: usize) -> Self {
        Nu::new(&vec![0; d])
    }

    pub fn dim(&self) -> usize {
        self.d as usize
    }

    pub fn components(&self) -> &[i32] {
        &self.k[..self.dim()]
    }

    pub fn is_zero(&self) -> bool {
        self.k.iter().all(|&x| x == 0)
    }

    pub fn l1(&self) -> i64 {
        self.k.iter().map(|&x| (x as i64).abs()).sum()
    }

    pub fn dot(&self, omega: &[f64]) -> f64 {
        debug_assert_eq!(omega.len(), self.dim());
        self.components().iter().zip(omega).map(|(&n, &w)| n as f64 * w).sum()
    }

    /// Real pairing nu . psi for an angle vector.
    pub fn phase(&self, psi: &[f64]) -> f64 {
        self.dot(psi)
    }
}

impl Add for Nu {
    type Output = Nu;
    fn add(self, o: Nu) -> Nu {
        debug_assert_eq!(self.d, o.d);
        let mut k = self.k;
        for (a, b) in k.iter_mut().zip(o.k) {
            *a += b;
        }
        Nu { k, d: self.d }
    }
}

impl Sub for Nu {
    type Output = Nu;
    fn sub(self, o: Nu) -> Nu {
        self + (-o)
    }
}

impl Neg for Nu {
    type Output = Nu;
    fn neg(self) -> Nu {
        let mut k = self.k;
        for a in k.iter_mut() {
            *a = -*a;
        }
        Nu { k, d: self.d }
    }
}

impl fmt::Display for Nu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, x) in self.components().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ")")
    }
}

impl serde::Serialize for Nu {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.components().serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for Nu {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<i32>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom("momentum must have 1..=3 components"));
        }
        Ok(Nu::new(&v))
    }
}

impl fmt::Debug for Nu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// All momenta of dimension `d` with |nu|_1 <= r, in lexicographic order.
pub fn ball(d: usize, r: i64) -> Vec<Nu> {
    fn rec(d: usize, r: i64, prefix: &mut Vec<i32>, out: &mut Vec<Nu>) {
        if prefix.len() == d {
            out.push(Nu::new(prefix));
            return;
        }
        let used: i64 = prefix.iter().map(|&x| (x as i64).abs()).sum();
        let left = r - used;
        for x in -left..=left {
            prefix.push(x as i32);
            rec(d, r, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, r, &mut Vec::with_capacity(d), &mut out);
    out
}

/// Scalar Fourier field: sparse map nu -> complex coefficient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalarField {
    pub coeffs: BTreeMap<Nu, C64>,
}

impl ScalarField {
    pub fn get(&self, nu: &Nu) -> C64 {
        self.coeffs.get(nu).copied().unwrap_or_default()
    }

    pub fn eval(&self, psi: &[f64]) -> C64 {
        self.coeffs
            .iter()
            .map(|(nu, &z)| z * C64::from_polar(1.0, nu.phase(psi)))
            .sum()
    }

    /// Coefficients of the pointwise complex conjugate: (u*)_nu = conj(u_{-nu}).
    pub fn conj_fn(&self) -> ScalarField {
        ScalarField {
            coeffs: self.coeffs.iter().map(|(nu, z)| (-*nu, z.conj())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.values().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn add_scaled(&mut self, other: &ScalarField, s: C64) {
        for (nu, &z) in &other.coeffs {
            *self.coeffs.entry(*nu).or_default() += s * z;
        }
    }

    /// Product of two fields. Products landing outside |nu|_1 <= cap (when
    /// given) are dropped and their l1 mass returned alongside.
    pub fn mul(&self, other: &ScalarField, cap: Option<i64>) -> (ScalarField, f64) {
        let mut out = BTreeMap::new();
        let mut dropped = 0.0;
        for (n1, &z1) in &self.coeffs {
            for (n2, &z2) in &other.coeffs {
                let nu = *n1 + *n2;
                let p = z1 * z2;
                if cap.is_some_and(|c| nu.l1() > c) {
                    dropped += p.norm();
                    continue;
                }
                *out.entry(nu).or_insert(C64::default()) += p;
            }
        }
        (ScalarField { coeffs: out }, dropped)
    }
}

/// Sparse Fourier coefficients of a 2x2 matrix function on T^d.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSeries {
    pub dim: usize,
    pub coeffs: BTreeMap<Nu, CMat>,
}

impl MatrixSeries {
    pub fn new(dim: usize) -> Self {
        MatrixSeries {
            dim,
            coeffs: BTreeMap::new(),
        }
    }

    /// Entry (i, j) of the coefficient at nu, 1-based indices.
    pub fn entry(&self, i: usize, j: usize, nu: &Nu) -> C64 {
        self.coeffs.get(nu).map(|m| m[(i - 1, j - 1)]).unwrap_or_default()
    }

    pub fn eval(&self, psi: &[f64]) -> CMat {
        let mut out = CMat::zeros();
        for (nu, m) in &self.coeffs {
            out += m * C64::from_polar(1.0, nu.phase(psi));
        }
        out
    }

    pub fn support(&self) -> impl Iterator<Item = &Nu> {
        self.coeffs.keys()
    }

    /// Largest l1 norm of a stored momentum (0 for an empty field).
    pub fn radius(&self) -> i64 {
        self.coeffs.keys().map(Nu::l1).max().unwrap_or(0)
    }

    /// Momenta at which entry (i, j) is nonzero.
    pub fn entry_support(&self, i: usize, j: usize) -> Vec<Nu> {
        self.coeffs
            .iter()
            .filter(|(_, m)| m[(i - 1, j - 1)] != C64::default())
            .map(|(nu, _)| *nu)
            .collect()
    }

    fn check_dims(&self) -> Result<()> {
        for nu in self.coeffs.keys() {
            if nu.dim() != self.dim {
                return Err(Error::Validation {
                    nu: *nu,
                    relation: format!("momentum dimension {} != field dimension {}", nu.dim(), self.dim),
                });
            }
        }
        Ok(())
    }

    fn check_traceless(&self) -> Result<()> {
        for (nu, m) in &self.coeffs {
            let tr = m[(0, 0)] + m[(1, 1)];
            if tr.norm() > FIELD_TOL * scale(m) {
                return Err(Error::Validation {
                    nu: *nu,
                    relation: format!("trace {tr} != 0"),
                });
            }
        }
        Ok(())
    }
}

fn scale(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(1.0, f64::max)
}

fn violation(nu: Nu, relation: String) -> Error {
    Error::Validation { nu, relation }
}

/// Fourier coefficients of a real traceless field f: T^d -> sl(2,R).
#[derive(Clone, Debug, PartialEq)]
pub struct RealMatrixField(MatrixSeries);

/// Fourier coefficients of g = M f M^{-1}, valued in the real form m of
/// sl(2,C) (g11 = conj g22, g12 = conj g21 pointwise).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrixField(MatrixSeries);

impl RealMatrixField {
    pub fn new(series: MatrixSeries) -> Result<Self> {
        series.check_dims()?;
        series.check_traceless()?;
        for (nu, m) in &series.coeffs {
            let partner = series.coeffs.get(&-*nu).copied().unwrap_or_else(CMat::zeros);
            let defect = (m.map(|z| z.conj()) - partner)
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            if defect > FIELD_TOL * scale(m) {
                return Err(violation(
                    *nu,
                    format!("reality: f_{{-nu}} != conj(f_nu) (defect {defect:e})"),
                ));
            }
        }
        Ok(RealMatrixField(series))
    }

    pub fn series(&self) -> &MatrixSeries {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    /// f(psi) as a real matrix.
    pub fn eval_real(&self, psi: &[f64]) -> Matrix2<f64> {
        self.0.eval(psi).map(|z| z.re)
    }

    /// Inverse of [`complex_reduce`]: f = M^{-1} g M.
    pub fn from_complex(g: &ComplexMatrixField) -> Self {
        let (m, minv) = conjugator();
        let coeffs = g.0.coeffs.iter().map(|(nu, gm)| (*nu, minv * gm * m)).collect();
        RealMatrixField(MatrixSeries { dim: g.0.dim, coeffs })
    }
}

impl ComplexMatrixField {
    pub fn new(series: MatrixSeries) -> Result<Self> {
        series.check_dims()?;
        series.check_traceless()?;
        for (nu, m) in &series.coeffs {
            let tol = FIELD_TOL * scale(m);
            let partner = series.coeffs.get(&-*nu).copied().unwrap_or_else(CMat::zeros);
            if (m[(0, 0)] - partner[(1, 1)].conj()).norm() > tol {
                return Err(violation(*nu, "m-symmetry: g11_nu != conj(g22_{-nu})".into()));
            }
            if (m[(0, 1)] - partner[(1, 0)].conj()).norm() > tol {
                return Err(violation(*nu, "m-symmetry: g12_nu != conj(g21_{-nu})".into()));
            }
        }
        Ok(ComplexMatrixField(series))
    }

    pub fn zero(dim: usize) -> Self {
        ComplexMatrixField(MatrixSeries::new(dim))
    }

    pub fn series(&self) -> &MatrixSeries {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    /// Entry g_{ij,nu}, 1-based.
    pub fn f(&self, i: usize, j: usize, nu: &Nu) -> C64 {
        self.0.entry(i, j, nu)
    }

    pub fn eval(&self, psi: &[f64]) -> CMat {
        self.0.eval(psi)
    }

    pub fn is_zero(&self) -> bool {
        self.0.coeffs.values().all(|m| m.iter().all(|z| *z == C64::default()))
    }
}

/// The pair (M, M^{-1}) with M = (1/2)[[1,-i],[1,i]].
pub fn conjugator() -> (CMat, CMat) {
    let h = C64::new(0.5, 0.0);
    let m = CMat::new(h, -I * h, h, I * h);
    let one = C64::new(1.0, 0.0);
    let minv = CMat::new(one, one, I, -I);
    (m, minv)
}

/// Coefficientwise reduction g = M f M^{-1}.
pub fn complex_reduce(f: &RealMatrixField) -> Result<ComplexMatrixField> {
    let mut out = MatrixSeries::new(f.dim());
    for (nu, m) in &f.0.coeffs {
        let (f11, f12, f21, f22) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let tr = f11 + f22;
        if tr.norm() > FIELD_TOL * scale(m) {
            return Err(violation(*nu, format!("trace {tr} != 0")));
        }
        let g11 = (f11 + f22 + I * (f12 - f21)) * 0.5;
        let g12 = (f11 - f22 - I * (f12 + f21)) * 0.5;
        let g21 = (f11 - f22 + I * (f12 + f21)) * 0.5;
        let g22 = (f11 + f22 - I * (f12 - f21)) * 0.5;
        out.coeffs.insert(*nu, CMat::new(g11, g12, g21, g22));
    }
    ComplexMatrixField::new(out)
}

/// diag(e^{i lambda0 t}, e^{-i lambda0 t}).
pub fn base_solution(lambda0: f64, t: f64) -> CMat {
    let p = C64::from_polar(1.0, lambda0 * t);
    CMat::new(p, C64::default(), C64::default(), p.conj())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuxiliaryState {
    pub a: C64,
    pub c: C64,
    pub t: f64,
}

/// Right-hand side of the auxiliary (a, c) system at psi = omega t.
pub fn auxiliary_rhs(
    s: &AuxiliaryState,
    eps: f64,
    mu: f64,
    lambda0: f64,
    g: &ComplexMatrixField,
    omega: &[f64],
) -> (C64, C64) {
    let psi: Vec<f64> = omega.iter().map(|w| w * s.t).collect();
    let m = g.eval(&psi);
    let (f11, f12, f21, f22) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let imu = I * mu;
    let da = eps * f11 + imu + eps * (f11 * s.a + f12 * s.c) + imu * s.a;
    let dc = -2.0 * I * lambda0 * s.c + eps * f21 + eps * (f21 * s.a + f22 * s.c) - imu * s.c;
    (da, dc)
}

/// H = a + a* + |a|^2 - |c|^2.
pub fn first_integral(a: C64, c: C64) -> f64 {
    2.0 * a.re + a.norm_sqr() - c.norm_sqr()
}
