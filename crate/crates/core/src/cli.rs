//! Command-line driver: run configuration, subcommand pipelines and the
//! CSV / JSON-lines artifacts they write.
//!
//! Configuration is layered: built-in defaults, then a `key = value` file
//! (`--config`), then `--set key=value` overrides, then dedicated flags.
//! Exit status is 0 on success, 1 when a pipeline check fails or a domain
//! error stops it, and 2 on usage, parse or I/O errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{lambda_map, measure_linearity, scan_lambda0};
use crate::model::{ComplexMatrixField, Nu, RealMatrixField};
use crate::renorm::{counting_report, Renormalizer};
use crate::series::{FormalSeries, Problem};
use crate::smalldiv::{melnikov_gate, ScaleSystem};
use crate::trees::{oracle_table, Context, TreeDiagram, TreeSet, TREE_BUDGET};
use crate::verify::{conservation_drift, det_drift, integrate_auxiliary, integrate_full, verify_table, AcPair};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "SKEWPROD_OUT";

#[derive(Clone, Debug, PartialEq)]
pub enum FieldSource {
    /// The shipped two-mode field.
    Sparse,
    /// The shipped field with constant diagonal and four resonant modes.
    Rich,
    File(PathBuf),
}

impl FieldSource {
    fn parse(s: &str) -> Self {
        match s {
            "sparse" => FieldSource::Sparse,
            "rich" => FieldSource::Rich,
            p => FieldSource::File(PathBuf::from(p)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub omega: Vec<f64>,
    pub field: FieldSource,
    pub lambda0: f64,
    /// Lambda0 interval scanned by `scan`.
    pub interval: (f64, f64),
    /// `verify` uses every value; `renorm` and `scan` use the first.
    pub epsilon: Vec<f64>,
    pub k: usize,
    pub k_se: usize,
    pub n_max: usize,
    pub n_check: usize,
    pub c1: f64,
    /// C1 values of the linearity fit in `scan`.
    pub c1_list: Vec<f64>,
    pub grid_size: usize,
    pub t_end: f64,
    pub h: f64,
    pub divisor_floor: f64,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    pub trajectory: bool,
    /// Number of trees written to `trees.dot`.
    pub dot: usize,
}

pub fn golden_omega() -> Vec<f64> {
    vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            omega: golden_omega(),
            field: FieldSource::Sparse,
            lambda0: 0.7,
            interval: (0.5, 1.5),
            epsilon: vec![1e-2, 5e-3, 2.5e-3],
            k: 3,
            k_se: 3,
            n_max: 6,
            n_check: 64,
            c1: 0.25,
            c1_list: vec![1e-3, 2e-3, 4e-3, 8e-3, 1e-2],
            grid_size: 10_000,
            t_end: 20.0,
            h: 1e-3,
            divisor_floor: crate::series::DIVISOR_FLOOR,
            out_dir: std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("skewprod-out"), PathBuf::from),
            jobs: None,
            trajectory: false,
            dot: 0,
        }
    }
}

fn floats(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

fn one<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

impl RunConfig {
    /// Set one key. Keys are case-insensitive.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key.trim().to_ascii_lowercase().as_str() {
            "omega" => {
                self.omega = if v == "golden" { golden_omega() } else { floats(v)? };
            }
            "field" => self.field = FieldSource::parse(v),
            "lambda0" => self.lambda0 = one(v)?,
            "interval" => match floats(v)?.as_slice() {
                [a, b] => self.interval = (*a, *b),
                _ => return Err(format!("interval needs two numbers, got {v:?}")),
            },
            "epsilon" => self.epsilon = floats(v)?,
            "k" => self.k = one(v)?,
            "k_se" => self.k_se = one(v)?,
            "n_max" => self.n_max = one(v)?,
            "n_check" => self.n_check = one(v)?,
            "c1" => self.c1 = one(v)?,
            "c1_list" => self.c1_list = floats(v)?,
            "grid_size" => self.grid_size = one(v)?,
            "t" => self.t_end = one(v)?,
            "h" => self.h = one(v)?,
            "divisor_floor" => self.divisor_floor = one(v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "jobs" => self.jobs = Some(one(v)?),
            "trajectory" => self.trajectory = one(v)?,
            "dot" => self.dot = one(v)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Apply a `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            self.set(k, v).map_err(err)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.omega.is_empty() || self.omega.len() > crate::model::MAX_DIM {
            return bad(format!("omega must have 1..=3 components, got {}", self.omega.len()));
        }
        if !(self.lambda0 > 0.0) {
            return bad(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        if self.epsilon.is_empty() || self.epsilon.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("epsilon must be a nonempty list of nonnegative numbers".into());
        }
        if self.k == 0 || self.k_se == 0 || self.n_check == 0 || self.grid_size == 0 {
            return bad("K, K_SE, N_check and grid_size must be positive".into());
        }
        if !(self.c1 > 0.0) || self.c1_list.iter().any(|c| !(*c > 0.0)) {
            return bad("C1 values must be positive".into());
        }
        if !(self.t_end > 0.0 && self.h > 0.0 && self.divisor_floor > 0.0) {
            return bad("T, h and divisor_floor must be positive".into());
        }
        if !(self.interval.1 > self.interval.0) {
            return bad(format!("empty interval {:?}", self.interval));
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive".into());
        }
        Ok(())
    }

    pub fn load_field(&self) -> Result<ComplexMatrixField> {
        let g = match &self.field {
            FieldSource::Sparse => crate::io::golden_sparse(),
            FieldSource::Rich => crate::io::golden_rich(),
            FieldSource::File(p) => crate::io::load_field(p, self.omega.len())?.to_complex()?,
        };
        if !g.is_zero() && g.dim() != self.omega.len() {
            return Err(Error::Usage(format!(
                "field dimension {} does not match omega dimension {}",
                g.dim(),
                self.omega.len()
            )));
        }
        Ok(g)
    }

    fn scales(&self) -> Result<ScaleSystem> {
        ScaleSystem::new(&self.omega, self.n_max, self.c1)
    }

    fn problem(&self, g: ComplexMatrixField) -> Result<Problem> {
        let mut p = Problem::new(g, &self.omega, self.lambda0)?;
        p.divisor_floor = self.divisor_floor;
        Ok(p)
    }

    fn context(&self, g: ComplexMatrixField) -> Context {
        let mut ctx = Context::new(g, &self.omega, self.lambda0);
        ctx.divisor_floor = self.divisor_floor;
        ctx
    }
}

/// Outcome of one pipeline assertion: passes iff `value <= bound`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Check {
            name: name.to_string(),
            passed: value <= bound,
            value,
            bound,
        }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        let d = if value < lo {
            lo - value
        } else if value > hi {
            value - hi
        } else {
            0.0
        };
        Check {
            name: name.to_string(),
            passed: d == 0.0,
            value,
            bound: if value < lo { lo } else { hi },
        }
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Check {
            name: name.to_string(),
            passed: ok,
            value: if ok { 0.0 } else { 1.0 },
            bound: 0.0,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Files written and checks evaluated by one or more pipelines.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn file(&mut self, cfg: &RunConfig, name: &str) -> PathBuf {
        let p = cfg.out_dir.join(name);
        self.files.push(p.clone());
        p
    }
}

#[derive(Serialize)]
struct BryunoRow {
    n: usize,
    alpha_n: f64,
    gamma_n: f64,
    partial_bryuno_sum: f64,
}

pub fn run_bryuno(cfg: &RunConfig, out: &mut Outcome) -> Result<()> {
    let s = cfg.scales()?;
    let mut sum = 0.0;
    let rows: Vec<BryunoRow> = (0..=cfg.n_max)
        .map(|n| {
            sum += 0.5f64.powi(n as i32) * (1.0 / s.alpha[n]).ln();
            BryunoRow {
                n,
                alpha_n: s.alpha[n],
                gamma_n: s.gamma[n],
                partial_bryuno_sum: sum,
            }
        })
        .collect();
    write_csv(&out.file(cfg, "bryuno.csv"), &rows)?;
    let monotone = s.alpha.windows(2).all(|w| w[1] <= w[0]) && s.alpha.iter().all(|a| *a > 0.0);
    out.checks
        .push(Check::holds("bryuno.alpha_positive_nonincreasing", monotone));
    out.notes.push(format!("C0 = {:.6e} ({:?} variant)", s.c0, s.variant));
    Ok(())
}

#[derive(Serialize)]
struct CoefficientRecord {
    k: usize,
    j: u8,
    nu: Nu,
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct SolveRow {
    k: usize,
    mu_re: f64,
    mu_im: f64,
    a0: f64,
    c0_re: f64,
    c0_im: f64,
    h_defect: f64,
    order_scale: f64,
}

pub fn run_solve(cfg: &RunConfig, out: &mut Outcome) -> Result<FormalSeries> {
    let g = cfg.load_field()?;
    if g.is_zero() {
        out.notes
            .push("trivial run: the field is zero, so every coefficient vanishes".into());
    }
    let series = FormalSeries::solve(cfg.problem(g)?, cfg.k)?;
    let mut jl = String::new();
    let mut rows = Vec::new();
    let (mut worst_h, mut worst_im) = (0.0f64, 0.0f64);
    for k in 1..=cfg.k {
        let sl = series.slice(k);
        let mut push = |j: u8, nu: Nu, z: crate::model::C64| {
            let rec = CoefficientRecord {
                k,
                j,
                nu,
                re: z.re,
                im: z.im,
            };
            jl.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            jl.push('\n');
        };
        for (nu, z) in &sl.a.coeffs {
            push(1, *nu, *z);
        }
        for (nu, z) in &sl.c.coeffs {
            push(2, *nu, *z);
        }
        push(3, Nu::zero(cfg.omega.len()), sl.mu);
        let h = series.max_h_defect(k) / series.order_scale(k);
        worst_h = worst_h.max(h);
        worst_im = worst_im.max(sl.mu.im.abs() / sl.mu.norm().max(1.0));
        rows.push(SolveRow {
            k,
            mu_re: sl.mu.re,
            mu_im: sl.mu.im,
            a0: sl.a0(),
            c0_re: sl.c0().re,
            c0_im: sl.c0().im,
            h_defect: h,
            order_scale: series.order_scale(k),
        });
    }
    write_text(&out.file(cfg, "coefficients.jsonl"), &jl)?;
    write_csv(&out.file(cfg, "solve_summary.csv"), &rows)?;
    out.checks
        .push(Check::at_most("solve.mu_imaginary_part", worst_im, 1e-10));
    out.checks
        .push(Check::at_most("solve.first_integral_defect", worst_h, 1e-10));
    Ok(series)
}

#[derive(Serialize)]
struct TreeRow {
    k: usize,
    j: u8,
    nu: String,
    trees: usize,
    tree_re: f64,
    tree_im: f64,
    series_re: f64,
    series_im: f64,
    defect: f64,
}

pub fn run_trees(cfg: &RunConfig, out: &mut Outcome) -> Result<()> {
    let g = cfg.load_field()?;
    let series = FormalSeries::solve(cfg.problem(g.clone())?, cfg.k)?;
    let set = TreeSet::build(&g, cfg.k, TREE_BUDGET)?;
    let ctx = cfg.context(g);
    let table = oracle_table(&set, &series, &ctx, cfg.k)?;
    let rows: Vec<TreeRow> = table
        .iter()
        .map(|r| TreeRow {
            k: r.k,
            j: r.j,
            nu: r.nu.to_string(),
            trees: r.trees,
            tree_re: r.tree_sum.re,
            tree_im: r.tree_sum.im,
            series_re: r.series.re,
            series_im: r.series.im,
            defect: r.defect,
        })
        .collect();
    write_csv(&out.file(cfg, "trees.csv"), &rows)?;
    if cfg.dot > 0 {
        let mut dot = String::new();
        'outer: for k in 1..=cfg.k {
            for (j, nu) in set.roots(k) {
                for t in set.trees(k, j, &nu) {
                    if dot.matches("digraph").count() >= cfg.dot {
                        break 'outer;
                    }
                    dot.push_str(&format!("// k={k} j={j} nu={nu}\n"));
                    dot.push_str(&TreeDiagram::from_tree(t).to_dot());
                }
            }
        }
        write_text(&out.file(cfg, "trees.dot"), &dot)?;
    }
    let worst = table.iter().map(|r| r.defect).fold(0.0, f64::max);
    out.checks.push(Check::at_most("trees.series_vs_trees", worst, 1e-10));
    let dups: usize = (1..=cfg.k).map(|k| set.duplicate_count(k)).sum();
    out.checks
        .push(Check::at_most("trees.duplicate_canonical_forms", dups as f64, 0.0));
    Ok(())
}

#[derive(Serialize)]
struct CancellationRow {
    j: u8,
    re: f64,
    im: f64,
    abs: f64,
}

#[derive(Serialize)]
struct CountingRow {
    k_max: usize,
    trees: usize,
    labelings: usize,
    violations: usize,
    min_slack: f64,
}

#[derive(Serialize)]
struct ShiftRow {
    k_max: usize,
    second_kind: usize,
    labelings: usize,
    excluded: usize,
    excluded_nonzero: usize,
    max_pair_defect: f64,
    max_sum_defect: f64,
}

pub fn run_renorm(cfg: &RunConfig, out: &mut Outcome) -> Result<()> {
    let g = cfg.load_field()?;
    let scales = cfg.scales()?;
    let gate = melnikov_gate(cfg.lambda0, &scales, cfg.n_check)?;
    out.checks.push(Check::holds("renorm.melnikov_gate", gate.accepted));
    let r = Renormalizer::new(cfg.context(g), scales.clone(), cfg.epsilon[0], cfg.k_se)?;
    let l2 = -2.0 * cfg.lambda0;
    let mut points = Vec::new();
    for dx in [0.0, 0.01, -0.01, 0.05] {
        points.push((1u8, dx));
        points.push((2u8, l2 + dx));
    }
    write_csv(&out.file(cfg, "renorm_table.csv"), &r.table_rows(&points)?)?;

    let sym = r.symmetry_rows()?;
    write_csv(&out.file(cfg, "renorm_symmetry.csv"), &sym)?;
    let worst_sym = sym.iter().map(|s| s.symmetry_defect).fold(0.0, f64::max);
    let worst_van = sym.iter().map(|s| s.vanishing_defect).fold(0.0, f64::max);
    out.checks.push(Check::at_most("renorm.symmetry", worst_sym, 1e-8));
    out.checks.push(Check::at_most("renorm.vanishing", worst_van, 1e-8));

    let mut canc = Vec::new();
    for j in [1u8, 2] {
        let z = r.scale_minus_one_sum(j)?;
        canc.push(CancellationRow {
            j,
            re: z.re,
            im: z.im,
            abs: z.norm(),
        });
    }
    let worst_c = canc.iter().map(|c| c.abs).fold(0.0, f64::max);
    write_csv(&out.file(cfg, "renorm_cancellation.csv"), &canc)?;
    out.checks
        .push(Check::at_most("renorm.scale_minus_one_cancellation", worst_c, 1e-14));

    let k_count = cfg.k.max(cfg.k_se);
    let set = if k_count <= r.trees.k_max() {
        r.trees.clone()
    } else {
        TreeSet::build(&r.ctx.g, k_count, TREE_BUDGET)?
    };
    let cr = counting_report(&set, &r.ctx, &scales, k_count);
    write_csv(
        &out.file(cfg, "renorm_counting.csv"),
        &[CountingRow {
            k_max: k_count,
            trees: cr.trees,
            labelings: cr.labelings,
            violations: cr.violations,
            min_slack: cr.min_slack,
        }],
    )?;
    out.checks.push(Check::at_most(
        "renorm.counting_bound_violations",
        cr.violations as f64,
        0.0,
    ));

    let k_shift = cfg.k_se.min(3);
    let sr = r.shift_report(k_shift, &[0.0, 0.004, -0.02])?;
    write_csv(
        &out.file(cfg, "renorm_shift.csv"),
        &[ShiftRow {
            k_max: k_shift,
            second_kind: sr.second_kind,
            labelings: sr.labelings,
            excluded: sr.excluded.values().sum(),
            excluded_nonzero: sr.excluded_nonzero,
            max_pair_defect: sr.max_pair_defect,
            max_sum_defect: sr.max_sum_defect,
        }],
    )?;
    out.checks
        .push(Check::at_most("renorm.shift_pair", sr.max_pair_defect, 1e-12));
    out.checks
        .push(Check::at_most("renorm.shift_sum", sr.max_sum_defect, 1e-12));
    out.checks.push(Check::at_most(
        "renorm.shift_excluded_nonzero",
        sr.excluded_nonzero as f64,
        0.0,
    ));
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    a_re: f64,
    a_im: f64,
    c_re: f64,
    c_im: f64,
    h: f64,
}

pub fn run_verify(cfg: &RunConfig, out: &mut Outcome) -> Result<()> {
    let g = cfg.load_field()?;
    let series = FormalSeries::solve(cfg.problem(g.clone())?, cfg.k)?;
    let rows = verify_table(&series, &cfg.epsilon, cfg.t_end, cfg.h)?;
    write_csv(&out.file(cfg, "verify.csv"), &rows)?;
    let drift = rows.iter().map(|r| r.drift).fold(0.0, f64::max);
    out.checks
        .push(Check::at_most("verify.first_integral_drift", drift, 1e-7));

    let eps_max = cfg.epsilon.iter().copied().fold(0.0, f64::max);
    let f = RealMatrixField::from_complex(&g);
    let lambda = cfg.lambda0 + series.evaluate_mu(eps_max);
    let stride = ((1.0 / cfg.h).round() as usize).max(1);
    let full = integrate_full(
        lambda,
        eps_max,
        &f,
        &cfg.omega,
        nalgebra::Matrix2::identity(),
        cfg.t_end,
        cfg.h,
        stride,
    )?;
    out.checks
        .push(Check::at_most("verify.det_drift", det_drift(&full), 1e-8));

    // Successive halvings of epsilon should shrink the residual by 2^(K+1).
    let target = 2f64.powi(cfg.k as i32 + 1);
    for w in rows.windows(2) {
        if (w[0].epsilon / w[1].epsilon - 2.0).abs() < 1e-9 && w[1].residual > 0.0 {
            let name = format!("verify.residual_ratio_eps_{:e}", w[0].epsilon);
            out.checks.push(Check::within(
                &name,
                w[0].residual / w[1].residual,
                target / 2.0,
                target * 2.0,
            ));
        }
    }
    if rows.len() >= 2 {
        let p = cfg.k as f64 + 1.0;
        out.checks.push(Check::within(
            "verify.deviation_exponent",
            rows[0].fitted_exponent,
            p - 0.5,
            p + 0.5,
        ));
    }

    if cfg.trajectory {
        let eps = cfg.epsilon[0];
        let (a, c) = series.eval_ac(eps, &vec![0.0; cfg.omega.len()]);
        let traj = integrate_auxiliary(
            eps,
            series.evaluate_mu(eps),
            cfg.lambda0,
            &g,
            &cfg.omega,
            AcPair(a, c),
            cfg.t_end,
            cfg.h,
            stride / 10,
        )?;
        let rows: Vec<TrajectoryRow> = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(t, s)| TrajectoryRow {
                t: *t,
                a_re: s.0.re,
                a_im: s.0.im,
                c_re: s.1.re,
                c_im: s.1.im,
                h: crate::model::first_integral(s.0, s.1),
            })
            .collect();
        write_csv(&out.file(cfg, "trajectory.csv"), &rows)?;
        out.notes
            .push(format!("trajectory drift {:e}", conservation_drift(&traj)));
    }
    Ok(())
}

#[derive(Serialize)]
struct ScanRow {
    lambda0: f64,
    accepted: bool,
    worst_nu: String,
    margin: f64,
    lambda_image: Option<f64>,
}

#[derive(Serialize)]
struct ScanSummary {
    interval: (f64, f64),
    c1: f64,
    n_check: usize,
    grid_size: usize,
    rejected: usize,
    excluded_measure: f64,
    union_bound: f64,
    intervals_hit: usize,
    ceiling: f64,
    linearity: crate::measure::LinearityReport,
    partition_defect: f64,
    partition_samples: usize,
    lambda_map_max_slope: f64,
    lambda_map_monotone: bool,
}

pub fn run_scan(cfg: &RunConfig, out: &mut Outcome) -> Result<()> {
    let g = cfg.load_field()?;
    let scales = cfg.scales()?;
    let rep = scan_lambda0(cfg.interval, cfg.grid_size, &scales, cfg.n_check)?;
    let accepted: Vec<f64> = rep.points.iter().filter(|p| p.accepted).map(|p| p.lambda0).collect();
    let map = lambda_map(&accepted, cfg.epsilon[0], &g, &cfg.omega, cfg.k)?;
    let mut images = map.points.iter().map(|p| p.1);
    let rows: Vec<ScanRow> = rep
        .points
        .iter()
        .map(|p| ScanRow {
            lambda0: p.lambda0,
            accepted: p.accepted,
            worst_nu: p.worst_nu.map_or(String::new(), |n| n.to_string()),
            margin: p.margin,
            lambda_image: if p.accepted { images.next() } else { None },
        })
        .collect();
    write_csv(&out.file(cfg, "scan.csv"), &rows)?;

    let lin = measure_linearity(cfg.interval, cfg.grid_size, &scales, cfg.n_check, &cfg.c1_list)?;
    let reach = cfg.interval.1.abs().max(cfg.interval.0.abs()) + 1.0;
    let (pdef, psamples) = scales.partition_scan(cfg.lambda0, reach, 10_000);
    let summary = ScanSummary {
        interval: cfg.interval,
        c1: cfg.c1,
        n_check: cfg.n_check,
        grid_size: cfg.grid_size,
        rejected: rep.rejected,
        excluded_measure: rep.excluded_measure,
        union_bound: rep.union_bound,
        intervals_hit: rep.intervals_hit,
        ceiling: rep.ceiling,
        partition_defect: pdef,
        partition_samples: psamples,
        lambda_map_max_slope: map.max_slope,
        lambda_map_monotone: map.monotone,
        linearity: lin.clone(),
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write_text(&out.file(cfg, "scan_summary.json"), &text)?;

    let slack = rep.union_bound + rep.intervals_hit as f64 * rep.spacing;
    out.checks.push(Check::at_most(
        "scan.excluded_within_union_bound",
        rep.excluded_measure,
        slack,
    ));
    out.checks
        .push(Check::at_most("scan.linearity_spread", lin.max_relative_spread, 0.5));
    out.checks.push(Check::at_most("scan.partition_of_unity", pdef, 1e-12));
    out.checks.push(Check::holds(
        "scan.lambda_map_monotone",
        map.monotone || accepted.len() < 2,
    ));
    Ok(())
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Diophantine sequence alpha_n, gamma_n and partial Bryuno sums.
    Bryuno,
    /// Order-by-order series coefficients and the counterterm.
    Solve,
    /// Tree enumeration and the tree-vs-series comparison.
    Trees {
        /// Write the first N trees to trees.dot.
        #[arg(long, value_name = "N")]
        dot: Option<usize>,
    },
    /// Renormalized propagators, symmetry, cancellation and counting checks.
    Renorm,
    /// Conjugation residuals, numerical reducibility and conservation drift.
    Verify {
        /// Dump the auxiliary trajectory to trajectory.csv.
        #[arg(long)]
        trajectory: bool,
    },
    /// Melnikov scan of a lambda0 interval and the excluded measure.
    Scan,
    /// Every pipeline in sequence.
    All,
}

#[derive(Parser, Debug)]
#[command(
    name = "skewprod",
    version,
    about = "Reducibility series for quasi-periodic SL(2,R) skew products"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// key = value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Field: "sparse", "rich" or a JSON-lines path.
    #[arg(long, global = true)]
    field: Option<String>,
    /// Unperturbed rotation rate.
    #[arg(long, global = true)]
    lambda0: Option<f64>,
    /// Comma-separated epsilon values.
    #[arg(long, global = true)]
    epsilon: Option<String>,
    /// Output directory (default: $SKEWPROD_OUT or ./skewprod-out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.config {
        let text = fs::read_to_string(p).map_err(|source| Error::Io {
            path: p.clone(),
            source,
        })?;
        cfg.apply_text(&text, p)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v).map_err(Error::Usage)?;
    }
    let mut flag = |k: &str, v: Option<String>| -> Result<()> {
        match v {
            Some(v) => cfg.set(k, &v).map_err(Error::Usage),
            None => Ok(()),
        }
    };
    flag("field", cli.field.clone())?;
    flag("lambda0", cli.lambda0.map(|x| x.to_string()))?;
    flag("epsilon", cli.epsilon.clone())?;
    flag("jobs", cli.jobs.map(|x| x.to_string()))?;
    flag("out_dir", cli.out.as_ref().map(|p| p.display().to_string()))?;
    match cli.command {
        Command::Trees { dot: Some(n) } => cfg.dot = n,
        Command::Verify { trajectory: true } => cfg.trajectory = true,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run one subcommand with a validated configuration.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    fs::create_dir_all(&cfg.out_dir).map_err(|source| Error::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    let mut out = Outcome::default();
    let body = |out: &mut Outcome| -> Result<()> {
        match command {
            Command::Bryuno => run_bryuno(cfg, out),
            Command::Solve => run_solve(cfg, out).map(|_| ()),
            Command::Trees { .. } => run_trees(cfg, out),
            Command::Renorm => run_renorm(cfg, out),
            Command::Verify { .. } => run_verify(cfg, out),
            Command::Scan => run_scan(cfg, out),
            Command::All => {
                run_bryuno(cfg, out)?;
                run_solve(cfg, out)?;
                run_trees(cfg, out)?;
                run_renorm(cfg, out)?;
                run_verify(cfg, out)?;
                run_scan(cfg, out)
            }
        }
    };
    match cfg.jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
            pool.install(|| body(&mut out))?;
        }
        None => body(&mut out)?,
    }
    write_csv(&out.file(cfg, "checks.csv"), &out.checks.clone())?;
    Ok(out)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Io { .. } | Error::Parse { .. } | Error::Validation { .. } => 2,
        _ => 1,
    }
}

/// Parse `argv` (program name first), run, report to stdout/stderr and
/// return the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = build_config(&cli).and_then(|cfg| execute(cli.command, &cfg));
    match result {
        Ok(out) => {
            let mut so = std::io::stdout().lock();
            for n in &out.notes {
                let _ = writeln!(so, "note: {n}");
            }
            for c in &out.checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                let _ = writeln!(so, "{tag} {} value={:e} bound={:e}", c.name, c.value, c.bound);
            }
            for f in &out.files {
                let _ = writeln!(so, "wrote {}", f.display());
            }
            if out.passed() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
