//! Small-divisor bookkeeping: the sequence alpha_n, dyadic scales, smooth
//! cutoffs and the Melnikov gate on lambda0.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Nu;

pub const BETA: f64 = 0.25;

/// Relative size of the last C0 term above which the primary sum is deemed
/// not converged at n_max.
pub const CAUCHY_TOL: f64 = 1e-2;

/// All momenta of dimension `d` with |nu|_1 == r.
pub fn shell(d: usize, r: i64) -> Vec<Nu> {
    fn rec(d: usize, left: i64, prefix: &mut Vec<i32>, out: &mut Vec<Nu>) {
        if prefix.len() + 1 == d {
            prefix.push(left as i32);
            out.push(Nu::new(prefix));
            prefix.pop();
            if left != 0 {
                prefix.push(-left as i32);
                out.push(Nu::new(prefix));
                prefix.pop();
            }
            return;
        }
        for x in -left..=left {
            prefix.push(x as i32);
            rec(d, left - x.abs(), prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if r == 0 {
        out.push(Nu::zero(d));
    } else {
        rec(d, r, &mut Vec::with_capacity(d), &mut out);
    }
    out.sort();
    out
}

fn is_zero_divisor(x: f64, nu: &Nu, omega: &[f64]) -> bool {
    let wmax = omega.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    x.abs() <= 4.0 * f64::EPSILON * nu.l1() as f64 * wmax
}

/// alpha_n = min over nonzero |nu|_1 <= 2^n of |omega . nu|, n = 0..=n_max,
/// together with a minimizer for each n.
pub fn alpha_with_minimizers(omega: &[f64], n_max: usize) -> Result<Vec<(f64, Nu)>> {
    let d = omega.len();
    if d == 0 || d > crate::model::MAX_DIM {
        return Err(Error::Usage(format!("omega must have 1..=3 components, got {d}")));
    }
    let mut out = Vec::with_capacity(n_max + 1);
    let mut best = f64::INFINITY;
    let mut arg = Nu::zero(d);
    let mut r = 0i64;
    for n in 0..=n_max {
        let top = 1i64 << n;
        while r < top {
            r += 1;
            for nu in shell(d, r) {
                let x = nu.dot(omega);
                if is_zero_divisor(x, &nu, omega) {
                    return Err(Error::RationalDependence(nu));
                }
                if x.abs() < best {
                    best = x.abs();
                    arg = nu;
                }
            }
        }
        out.push((best, arg));
    }
    Ok(out)
}

pub fn alpha_sequence(omega: &[f64], n_max: usize) -> Result<Vec<f64>> {
    Ok(alpha_with_minimizers(omega, n_max)?.into_iter().map(|p| p.0).collect())
}

pub fn bryuno_from_alpha(alpha: &[f64]) -> f64 {
    alpha
        .iter()
        .enumerate()
        .map(|(n, a)| (0.5f64).powi(n as i32) * (1.0 / a).ln())
        .sum()
}

/// Sum_{n <= n_max} 2^{-n} log(1/alpha_n).
pub fn bryuno_partial(omega: &[f64], n_max: usize) -> Result<f64> {
    Ok(bryuno_from_alpha(&alpha_sequence(omega, n_max)?))
}

/// Dyadic scale n(nu): the unique n >= 0 with 2^{n-1} < |nu|_1 <= 2^n.
pub fn scale_of(nu: &Nu) -> Result<usize> {
    let m = nu.l1();
    if m == 0 {
        return Err(Error::Domain("scale_of(0) is undefined".into()));
    }
    let mut n = 0;
    while (1i64 << n) < m {
        n += 1;
    }
    Ok(n)
}

/// C-infinity step h with h = 0 on s <= 0 and h = 1 on s >= 1.
pub fn unit_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let z = 1.0 / s - 1.0 / (1.0 - s);
        1.0 / (1.0 + z.exp())
    }
}

/// psi(x): 0 for |x| <= c1/2, 1 for |x| >= c1, smooth and even.
pub fn smooth_step(x: f64, c1: f64) -> f64 {
    unit_step(2.0 * x.abs() / c1 - 1.0)
}

/// Delta0(x) = (1/2 (1/x^2 + 1/(x+2 lambda0)^2))^{-1/2}, zero at the poles.
pub fn delta0(x: f64, lambda0: f64) -> f64 {
    let y = x + 2.0 * lambda0;
    if x == 0.0 || y == 0.0 {
        return 0.0;
    }
    let s = 0.5 * (1.0 / (x * x) + 1.0 / (y * y));
    if !s.is_finite() {
        return 0.0;
    }
    1.0 / s.sqrt()
}

pub fn rho0(x: f64, lambda0: f64) -> f64 {
    if x + lambda0 >= 0.0 {
        0.0
    } else {
        lambda0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum C0Variant {
    /// C0 = sum 2^{n(d-1)} alpha_n.
    Primary,
    /// C0 = sum 2^{n(d-2)} alpha_n, with gamma_n 2^{-n} in cutoffs and gates.
    Fallback,
}

#[derive(Clone, Debug)]
pub struct ScaleSystem {
    pub omega: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_argmin: Vec<Nu>,
    pub c0: f64,
    /// gamma_n = alpha_n / C0.
    pub gamma: Vec<f64>,
    /// gamma_n as used by cutoffs and gates (carries the 2^{-n} factor in the
    /// fallback variant).
    pub gamma_eff: Vec<f64>,
    pub c1: f64,
    pub beta: f64,
    pub n_max: usize,
    pub variant: C0Variant,
}

impl ScaleSystem {
    pub fn new(omega: &[f64], n_max: usize, c1: f64) -> Result<Self> {
        let am = alpha_with_minimizers(omega, n_max)?;
        let alpha: Vec<f64> = am.iter().map(|p| p.0).collect();
        let d = omega.len() as i32;
        let sum_with = |e: i32| -> (f64, f64) {
            let terms: Vec<f64> = alpha
                .iter()
                .enumerate()
                .map(|(n, a)| 2f64.powi(n as i32 * e) * a)
                .collect();
            (terms.iter().sum(), *terms.last().unwrap())
        };
        let (s1, last1) = sum_with(d - 1);
        let (c0, variant) = if last1 <= CAUCHY_TOL * s1 {
            (s1, C0Variant::Primary)
        } else {
            (sum_with(d - 2).0, C0Variant::Fallback)
        };
        if !(c1 >= 0.0 && c1 <= c0) {
            return Err(Error::Domain(format!("C1 = {c1} must lie in [0, C0 = {c0}]")));
        }
        let gamma: Vec<f64> = alpha.iter().map(|a| a / c0).collect();
        let gamma_eff = gamma
            .iter()
            .enumerate()
            .map(|(n, g)| match variant {
                C0Variant::Primary => *g,
                C0Variant::Fallback => g * 0.5f64.powi(n as i32),
            })
            .collect();
        Ok(ScaleSystem {
            omega: omega.to_vec(),
            alpha,
            alpha_argmin: am.iter().map(|p| p.1).collect(),
            c0,
            gamma,
            gamma_eff,
            c1,
            beta: BETA,
            n_max,
            variant,
        })
    }

    /// Same alpha sequence, different C1.
    pub fn with_c1(&self, c1: f64) -> Result<Self> {
        if !(c1 >= 0.0 && c1 <= self.c0) {
            return Err(Error::Domain(format!("C1 = {c1} must lie in [0, C0 = {}]", self.c0)));
        }
        Ok(ScaleSystem { c1, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    /// psi_n(x) = psi(x / (beta gamma_n)).
    pub fn psi_n(&self, x: f64, n: usize) -> f64 {
        smooth_step(x / (self.beta * self.gamma_eff[n]), self.c1)
    }

    pub fn chi_n(&self, x: f64, n: usize) -> f64 {
        1.0 - self.psi_n(x, n)
    }

    /// Psi_n(x) = chi_0 ... chi_{n-1} psi_n, all evaluated at Delta0(x).
    pub fn support_product(&self, x: f64, n: usize, lambda0: f64) -> f64 {
        let dl = delta0(x, lambda0);
        let mut p = self.psi_n(dl, n);
        for q in 0..n {
            if p == 0.0 {
                break;
            }
            p *= self.chi_n(dl, q);
        }
        p
    }

    /// Xi_n(x) = chi_0 ... chi_n at Delta0(x); Xi_{-1} = 1.
    pub fn xi(&self, x: f64, n: isize, lambda0: f64) -> f64 {
        let dl = delta0(x, lambda0);
        (0..=n).map(|q| self.chi_n(dl, q as usize)).product()
    }

    /// Scales n <= n_max at which Psi_n(x) != 0, with their weights.
    pub fn scale_weights(&self, x: f64, lambda0: f64) -> Vec<(usize, f64)> {
        let dl = delta0(x, lambda0);
        let mut out = Vec::new();
        let mut chain = 1.0;
        for n in 0..=self.n_max {
            let p = self.psi_n(dl, n);
            if p * chain != 0.0 {
                out.push((n, chain * p));
            }
            chain *= 1.0 - p;
            if chain == 0.0 {
                break;
            }
        }
        out
    }

    /// Smallest Delta0 covered with full weight: above this the partition
    /// of unity over n <= n_max is exact.
    pub fn deepest_full(&self) -> f64 {
        self.c1 * self.beta * self.gamma_eff[self.n_max]
    }

    /// |sum_{n <= n_max} Psi_n(x) - 1|.
    pub fn partition_defect(&self, x: f64, lambda0: f64) -> f64 {
        let s: f64 = (0..=self.n_max).map(|n| self.support_product(x, n, lambda0)).sum();
        (s - 1.0).abs()
    }

    /// Worst partition defect over `samples` points of a Weyl sequence on
    /// [-2 lambda0 - reach, reach] with Delta0 above [`Self::deepest_full`].
    /// Returns (worst defect, points used).
    pub fn partition_scan(&self, lambda0: f64, reach: f64, samples: usize) -> (f64, usize) {
        let (lo, hi) = (-2.0 * lambda0 - reach, reach);
        let step = (5f64.sqrt() - 1.0) / 2.0;
        let floor = self.deepest_full();
        let (mut worst, mut used, mut u) = (0.0f64, 0, 0.5);
        while used < samples {
            u = (u + step).fract();
            let x = lo + u * (hi - lo);
            if delta0(x, lambda0) > floor {
                worst = worst.max(self.partition_defect(x, lambda0));
                used += 1;
            }
        }
        (worst, used)
    }

    /// Bounds (lower, upper) of Delta0 where Psi_n can be nonzero.
    pub fn window(&self, n: usize) -> (f64, f64) {
        let lo = 0.5 * self.beta * self.gamma_eff[n] * self.c1;
        let hi = if n == 0 {
            f64::INFINITY
        } else {
            self.beta * self.gamma_eff[n - 1] * self.c1
        };
        (lo, hi)
    }

    /// Gate threshold C1 gamma_{n(nu)} for nu != 0.
    pub fn gate_threshold(&self, nu: &Nu) -> Result<f64> {
        let n = scale_of(nu)?;
        if n > self.n_max {
            return Err(Error::Domain(format!(
                "|nu|_1 = {} exceeds 2^n_max = {}",
                nu.l1(),
                1u64 << self.n_max
            )));
        }
        Ok(self.c1 * self.gamma_eff[n])
    }

    /// Sum_n 2^{n(d-1)} gamma_n over the effective gammas, the per-unit-C1
    /// ceiling of the excluded measure.
    pub fn measure_constant(&self, n_upto: usize) -> f64 {
        let d = self.dim() as i32;
        (0..=n_upto.min(self.n_max))
            .map(|n| 2f64.powi(n as i32 * (d - 1)) * self.gamma_eff[n])
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivisorGateReport {
    pub accepted: bool,
    pub worst_nu: Option<Nu>,
    pub worst_margin: f64,
}

/// The list of (omega . nu, threshold, nu) over 0 < |nu|_1 <= n_check,
/// sorted by omega . nu for fast gate queries.
#[derive(Clone, Debug)]
pub struct ResonanceCatalogue {
    entries: Vec<(f64, f64, Nu)>,
    max_threshold: f64,
}

impl ResonanceCatalogue {
    pub fn new(scales: &ScaleSystem, n_check: usize) -> Result<Self> {
        if n_check as u64 > (1u64 << scales.n_max) {
            return Err(Error::Usage(format!(
                "N_check = {n_check} exceeds 2^n_max = {}",
                1u64 << scales.n_max
            )));
        }
        // First gate line |omega . nu| > C1 gamma_n(nu) holds since C1 <= C0.
        debug_assert!(scales.c1 <= scales.c0);
        let mut entries = Vec::new();
        for r in 1..=n_check as i64 {
            for nu in shell(scales.dim(), r) {
                entries.push((nu.dot(&scales.omega), scales.gate_threshold(&nu)?, nu));
            }
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let max_threshold = entries.iter().map(|e| e.1).fold(0.0, f64::max);
        Ok(ResonanceCatalogue { entries, max_threshold })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Worst margin min_nu (|omega . nu + 2 lambda0| - C1 gamma_n(nu)); the
    /// report's nu is the witness in the `+` convention.
    pub fn gate(&self, lambda0: f64) -> DivisorGateReport {
        if self.entries.is_empty() {
            return DivisorGateReport {
                accepted: true,
                worst_nu: None,
                worst_margin: f64::INFINITY,
            };
        }
        let target = -2.0 * lambda0;
        let pos = self.entries.partition_point(|e| e.0 < target);
        let mut best = (f64::INFINITY, self.entries[0].2);
        let consider = |i: usize, best: &mut (f64, Nu)| -> f64 {
            let (x, thr, nu) = self.entries[i];
            let dist = (x - target).abs();
            let m = dist - thr;
            if m < best.0 || (m == best.0 && nu < best.1) {
                *best = (m, nu);
            }
            dist
        };
        for i in pos..self.entries.len() {
            if consider(i, &mut best) - self.max_threshold > best.0 {
                break;
            }
        }
        for i in (0..pos).rev() {
            if consider(i, &mut best) - self.max_threshold > best.0 {
                break;
            }
        }
        DivisorGateReport {
            accepted: best.0 > 0.0,
            worst_nu: Some(best.1),
            worst_margin: best.0,
        }
    }
}

/// Second Melnikov condition |omega . nu +- 2 lambda0| > C1 gamma_n(nu) for
/// 0 < |nu|_1 <= n_check.
pub fn melnikov_gate(lambda0: f64, scales: &ScaleSystem, n_check: usize) -> Result<DivisorGateReport> {
    Ok(ResonanceCatalogue::new(scales, n_check)?.gate(lambda0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> Vec<f64> {
        vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
    }

    #[test]
    fn shells_have_expected_sizes() {
        assert_eq!(shell(2, 3).len(), 12);
        assert_eq!(shell(1, 2).len(), 2);
        assert_eq!(shell(3, 1).len(), 6);
        assert!(shell(2, 4).iter().all(|n| n.l1() == 4));
    }

    #[test]
    fn golden_alphas() {
        let am = alpha_with_minimizers(&golden(), 2).unwrap();
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        assert!((am[0].0 - phi).abs() < 1e-12);
        assert!((am[1].0 - (1.0 - phi)).abs() < 1e-12);
        assert!((am[2].0 - (5f64.sqrt() - 2.0)).abs() < 1e-12);
        assert!(am[1].1 == Nu::new(&[1, -1]) || am[1].1 == Nu::new(&[-1, 1]));
        assert!(am[2].1 == Nu::new(&[-1, 2]) || am[2].1 == Nu::new(&[1, -2]));
    }

    #[test]
    fn rational_dependence_detected() {
        match alpha_sequence(&[1.0, 0.5], 2) {
            Err(Error::RationalDependence(nu)) => assert_eq!(nu.dot(&[1.0, 0.5]), 0.0),
            other => panic!("expected rational dependence, got {other:?}"),
        }
    }

    #[test]
    fn bryuno_examples() {
        let w = golden();
        assert!((bryuno_partial(&w, 0).unwrap() - 0.481_211_825).abs() < 1e-8);
        let b2 = bryuno_partial(&w, 2).unwrap();
        assert!((b2 - 1.3233).abs() < 1e-3, "{b2}");
        assert_eq!(bryuno_from_alpha(&[1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn scale_of_examples() {
        assert_eq!(scale_of(&Nu::new(&[1, 0])).unwrap(), 0);
        assert_eq!(scale_of(&Nu::new(&[1, -1])).unwrap(), 1);
        assert_eq!(scale_of(&Nu::new(&[2, 1])).unwrap(), 2);
        assert_eq!(scale_of(&Nu::new(&[4, 0])).unwrap(), 2);
        assert_eq!(scale_of(&Nu::new(&[4, 1])).unwrap(), 3);
        assert!(scale_of(&Nu::zero(2)).is_err());
    }

    #[test]
    fn smooth_step_examples() {
        let c1 = 0.3;
        assert_eq!(smooth_step(2.0 * c1, c1), 1.0);
        assert_eq!(smooth_step(0.0, c1), 0.0);
        let v = smooth_step(0.75 * c1, c1);
        assert!(v > 0.0 && v < 1.0);
        assert_eq!(v, smooth_step(-0.75 * c1, c1));
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn delta0_and_rho0() {
        assert_eq!(delta0(0.0, 1.0), 0.0);
        assert_eq!(delta0(-2.0, 1.0), 0.0);
        assert!((delta0(-1.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(rho0(0.5, 1.0), 0.0);
        assert_eq!(rho0(-1.5, 1.0), 1.0);
        assert_eq!(rho0(-1.0, 1.0), 0.0);
        assert!(((-1.5f64) + 2.0 * rho0(-1.5, 1.0)).abs() == 0.5);
    }

    #[test]
    fn golden_uses_fallback() {
        let s = ScaleSystem::new(&golden(), 8, 0.5).unwrap();
        assert_eq!(s.variant, C0Variant::Fallback);
        assert!(s.alpha.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.gamma_eff.windows(2).all(|w| w[1] <= w[0]));
        assert!(ScaleSystem::new(&golden(), 8, 100.0).is_err());
    }

    #[test]
    fn exact_resonance_rejected() {
        let s = ScaleSystem::new(&golden(), 6, 1e-3).unwrap();
        let nu = Nu::new(&[-1, 2]);
        let lambda0 = -nu.dot(&s.omega) / 2.0;
        let r = melnikov_gate(lambda0, &s, 16).unwrap();
        assert!(!r.accepted);
        assert_eq!(r.worst_nu, Some(nu));
    }

    #[test]
    fn zero_c1_accepts() {
        let s = ScaleSystem::new(&golden(), 6, 0.0).unwrap();
        assert!(melnikov_gate(0.7, &s, 16).unwrap().accepted);
    }

    #[test]
    fn catalogue_gate_matches_brute_force() {
        let s = ScaleSystem::new(&golden(), 5, 0.2).unwrap();
        let cat = ResonanceCatalogue::new(&s, 32).unwrap();
        for i in 0..200 {
            let l0 = 0.3 + 0.9 * i as f64 / 199.0;
            let mut best = f64::INFINITY;
            for r in 1..=32 {
                for nu in shell(2, r) {
                    best = best.min((nu.dot(&s.omega) + 2.0 * l0).abs() - s.gate_threshold(&nu).unwrap());
                }
            }
            assert_eq!(cat.gate(l0).worst_margin, best);
        }
    }

    #[test]
    fn partition_is_exact_above_deepest_window() {
        let s = ScaleSystem::new(&golden(), 6, 0.25).unwrap();
        let (worst, used) = s.partition_scan(0.7, 2.0, 10_000);
        assert_eq!(used, 10_000);
        assert!(worst <= 1e-12, "{worst:e}");
    }

    #[test]
    fn support_product_examples() {
        let s = ScaleSystem::new(&golden(), 6, 0.5).unwrap();
        let l0 = 0.9;
        let x = 1.0;
        assert!(delta0(x, l0) >= s.c1 * s.beta * s.gamma_eff[0]);
        assert_eq!(s.support_product(x, 0, l0), 1.0);
        assert!((1..=6).all(|n| s.support_product(x, n, l0) == 0.0));
        assert!((0..=6).all(|n| s.support_product(0.0, n, l0) == 0.0));
    }
}
