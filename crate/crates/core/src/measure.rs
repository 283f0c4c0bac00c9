//! Parameter scans: the second Melnikov gate over a lambda0 grid, the
//! excluded measure and its C1-linearity, and the map lambda0 -> lambda.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ComplexMatrixField, Nu};
use crate::series::{FormalSeries, Problem};
use crate::smalldiv::{ResonanceCatalogue, ScaleSystem};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanPoint {
    pub lambda0: f64,
    pub accepted: bool,
    pub worst_nu: Option<Nu>,
    pub margin: f64,
    pub lambda_image: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanReport {
    pub interval: (f64, f64),
    pub c1: f64,
    pub n_check: usize,
    pub spacing: f64,
    pub points: Vec<ScanPoint>,
    pub rejected: usize,
    /// spacing * rejected.
    pub excluded_measure: f64,
    /// Sum over the catalogue of |{lambda0 in [a, b] : |omega . nu + 2 lambda0| <= C1 gamma_n(nu)}|.
    pub union_bound: f64,
    /// Number of those intervals meeting [a, b].
    pub intervals_hit: usize,
    /// measure_constant * C1; the excluded measure is bounded by a fixed
    /// multiple of this.
    pub ceiling: f64,
}

/// Gate every midpoint a + (i + 1/2) (b - a) / grid_size.
pub fn scan_lambda0(
    interval: (f64, f64),
    grid_size: usize,
    scales: &ScaleSystem,
    n_check: usize,
) -> Result<ScanReport> {
    let (a, b) = interval;
    if !(b > a) || grid_size == 0 {
        return Err(Error::Usage(format!("empty scan: [{a}, {b}] with {grid_size} points")));
    }
    let cat = ResonanceCatalogue::new(scales, n_check)?;
    let spacing = (b - a) / grid_size as f64;
    let points: Vec<ScanPoint> = (0..grid_size)
        .into_par_iter()
        .map(|i| {
            let lambda0 = a + (i as f64 + 0.5) * spacing;
            let r = cat.gate(lambda0);
            ScanPoint {
                lambda0,
                accepted: r.accepted,
                worst_nu: r.worst_nu,
                margin: r.worst_margin,
                lambda_image: None,
            }
        })
        .collect();
    let rejected = points.iter().filter(|p| !p.accepted).count();
    let mut union_bound = 0.0;
    let mut intervals_hit = 0;
    for r in 1..=n_check as i64 {
        for nu in crate::smalldiv::shell(scales.dim(), r) {
            let thr = scales.gate_threshold(&nu)?;
            let centre = -0.5 * nu.dot(&scales.omega);
            let lo = (centre - 0.5 * thr).max(a);
            let hi = (centre + 0.5 * thr).min(b);
            if hi > lo {
                union_bound += hi - lo;
                intervals_hit += 1;
            }
        }
    }
    Ok(ScanReport {
        interval,
        c1: scales.c1,
        n_check,
        spacing,
        rejected,
        excluded_measure: spacing * rejected as f64,
        union_bound,
        intervals_hit,
        ceiling: scales.measure_constant(scales.n_max) * scales.c1,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearityReport {
    pub c1: Vec<f64>,
    pub excluded: Vec<f64>,
    /// excluded / C1 at each C1.
    pub ratios: Vec<f64>,
    /// Least-squares constant of excluded = const * C1.
    pub fitted_const: f64,
    /// max |ratio / fitted_const - 1|.
    pub max_relative_spread: f64,
}

pub fn measure_linearity(
    interval: (f64, f64),
    grid_size: usize,
    scales: &ScaleSystem,
    n_check: usize,
    c1s: &[f64],
) -> Result<LinearityReport> {
    let mut excluded = Vec::new();
    for &c in c1s {
        excluded.push(scan_lambda0(interval, grid_size, &scales.with_c1(c)?, n_check)?.excluded_measure);
    }
    let sxy: f64 = c1s.iter().zip(&excluded).map(|(c, e)| c * e).sum();
    let sxx: f64 = c1s.iter().map(|c| c * c).sum();
    let fitted_const = sxy / sxx;
    let ratios: Vec<f64> = c1s.iter().zip(&excluded).map(|(c, e)| e / c).collect();
    let max_relative_spread = ratios
        .iter()
        .map(|r| (r / fitted_const - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(LinearityReport {
        c1: c1s.to_vec(),
        excluded,
        ratios,
        fitted_const,
        max_relative_spread,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaMapReport {
    /// (lambda0, lambda).
    pub points: Vec<(f64, f64)>,
    /// Central-difference |d mu / d lambda0| over interior points.
    pub max_slope: f64,
    pub monotone: bool,
}

/// lambda = lambda0 + mu(lambda0) for each given lambda0, with mu from the
/// order-k series at eps.
pub fn lambda_map(
    lambda0s: &[f64],
    eps: f64,
    g: &ComplexMatrixField,
    omega: &[f64],
    k: usize,
) -> Result<LambdaMapReport> {
    let points: Vec<Result<(f64, f64)>> = lambda0s
        .par_iter()
        .map(|&l0| {
            let s = FormalSeries::solve(Problem::new(g.clone(), omega, l0)?, k)?;
            Ok((l0, l0 + s.evaluate_mu(eps)))
        })
        .collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    let mut max_slope: f64 = 0.0;
    for w in points.windows(3) {
        let (l_lo, m_lo) = (w[0].0, w[0].1 - w[0].0);
        let (l_hi, m_hi) = (w[2].0, w[2].1 - w[2].0);
        max_slope = max_slope.max(((m_hi - m_lo) / (l_hi - l_lo)).abs());
    }
    let monotone = points.windows(2).all(|w| w[1].1 > w[0].1);
    Ok(LambdaMapReport {
        points,
        max_slope,
        monotone,
    })
}

/// Lambda0 intervals whose images land in [a, b]:
/// [a - eps mu1 + A eps^2 / C1, b - eps mu1 - A eps^2 / C1], with the
/// neighbourhood |lambda0| < gap |eps|^sigma removed when it meets 0.
#[allow(clippy::too_many_arguments)]
pub fn interval_setup(
    interval: (f64, f64),
    eps: f64,
    mu1: f64,
    a_margin: f64,
    c1: f64,
    sigma: f64,
    gap: f64,
) -> Result<Vec<(f64, f64)>> {
    let (a, b) = interval;
    let m = if eps == 0.0 { 0.0 } else { a_margin * eps * eps / c1 };
    if !(b - a > 2.0 * m) {
        return Err(Error::Domain(format!(
            "interval [{a}, {b}] collapses under margin {m:e}"
        )));
    }
    let (a0, b0) = (a - eps * mu1 + m, b - eps * mu1 - m);
    if eps == 0.0 || !(a0 <= 0.0 && 0.0 <= b0) {
        return Ok(vec![(a0, b0)]);
    }
    let w = gap * eps.abs().powf(sigma);
    Ok([(a0, -w), (w, b0)].into_iter().filter(|(l, h)| h > l).collect())
}

/// A = max C1 |mu - eps mu1| / eps^2 over the samples, the margin constant
/// for [`interval_setup`].
pub fn estimate_margin(
    lambda0s: &[f64],
    eps: f64,
    c1: f64,
    g: &ComplexMatrixField,
    omega: &[f64],
    k: usize,
) -> Result<f64> {
    let vals: Vec<Result<f64>> = lambda0s
        .par_iter()
        .map(|&l0| {
            let s = FormalSeries::solve(Problem::new(g.clone(), omega, l0)?, k)?;
            Ok(c1 * (s.evaluate_mu(eps) - eps * s.mu(1).re).abs() / (eps * eps))
        })
        .collect();
    Ok(vals
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> Vec<f64> {
        vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
    }

    #[test]
    fn empty_gate_excludes_nothing() {
        let s = ScaleSystem::new(&golden(), 6, 0.0).unwrap();
        let r = scan_lambda0((0.5, 1.5), 1000, &s, 32).unwrap();
        assert_eq!(r.rejected, 0);
        assert_eq!(r.excluded_measure, 0.0);
    }

    #[test]
    fn rejections_have_witnesses() {
        let s = ScaleSystem::new(&golden(), 6, 0.1).unwrap();
        let r = scan_lambda0((0.5, 1.5), 2000, &s, 32).unwrap();
        assert!(r.rejected > 0);
        for p in r.points.iter().filter(|p| !p.accepted) {
            let nu = p.worst_nu.unwrap();
            let thr = s.gate_threshold(&nu).unwrap();
            assert!((nu.dot(&golden()) + 2.0 * p.lambda0).abs() <= thr);
        }
        assert!(r.excluded_measure <= r.union_bound + r.intervals_hit as f64 * r.spacing);
    }

    #[test]
    fn interval_shapes() {
        assert_eq!(
            interval_setup((1.0, 2.0), 0.0, 0.3, 5.0, 0.1, 0.5, 1.0).unwrap(),
            vec![(1.0, 2.0)]
        );
        let iv = interval_setup((-1.0, 1.0), 1e-2, 0.0, 0.0, 0.1, 0.5, 1.0).unwrap();
        assert_eq!(iv.len(), 2);
        assert!((iv[1].0 - iv[0].1 - 0.2).abs() < 1e-12);
        assert!(interval_setup((1.0, 1.001), 0.1, 0.0, 1.0, 0.01, 0.5, 1.0).is_err());
    }
}
