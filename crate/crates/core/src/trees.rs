//! Nonlinear decorated trees: enumeration by production rules, evaluation,
//! and a flat diagram form used for scale analysis and DOT output.
//!
//! Line components: j = 1 carries a, j = 2 carries c, j = 3 carries the
//! counterterm mu (always at zero momentum). Production rules:
//!
//! * endpoint: a single node of mode nu with factor g_{row(j),1,nu};
//! * branch1: a node of mode nu1 with one entering (j', nu - nu1) line and
//!   factor g_{row(j),j',nu1};
//! * insertion: a mode-0 node joining a (3, 0) mu-tree to a (j_in, nu) tree,
//!   generated with the mu-tree in either slot, factor (1/2)(-1)^{j+1} i;
//! * pairing: a mode-0 node with exit (1, 0) joining a (j', nu') tree to the
//!   conjugate of another (j', nu') tree, factor (1/2)(-1)^{j'}.
//!
//! Here row(1) = 1, row(2) = 2, row(3) = 1.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ComplexMatrixField, Nu, C64, I};
use crate::series::DIVISOR_FLOOR;

/// Default cap on the total number of enumerated trees.
pub const TREE_BUDGET: usize = 5_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InsertTag {
    MuFirst,
    MuSecond,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tree {
    Endpoint {
        j: u8,
        nu: Nu,
    },
    Branch1 {
        j: u8,
        nu: Nu,
        mode: Nu,
        child: Arc<Tree>,
    },
    Insertion {
        j: u8,
        nu: Nu,
        tag: InsertTag,
        mu_tree: Arc<Tree>,
        child: Arc<Tree>,
    },
    Pairing {
        jp: u8,
        nup: Nu,
        plain: Arc<Tree>,
        conj: Arc<Tree>,
    },
}

pub fn row(j: u8) -> usize {
    if j == 2 {
        2
    } else {
        1
    }
}

pub fn insertion_factor(j_out: u8) -> C64 {
    let sign = if j_out % 2 == 1 { 1.0 } else { -1.0 };
    0.5 * sign * I
}

pub fn pairing_factor(jp: u8) -> C64 {
    C64::new(if jp == 1 { -0.5 } else { 0.5 }, 0.0)
}

impl Tree {
    /// Root label (j, nu).
    pub fn root(&self) -> (u8, Nu) {
        match self {
            Tree::Endpoint { j, nu } | Tree::Branch1 { j, nu, .. } | Tree::Insertion { j, nu, .. } => (*j, *nu),
            Tree::Pairing { nup, .. } => (1, Nu::zero(nup.dim())),
        }
    }

    pub fn order(&self) -> usize {
        match self {
            Tree::Endpoint { .. } => 1,
            Tree::Branch1 { child, .. } => 1 + child.order(),
            Tree::Insertion { mu_tree, child, .. } => mu_tree.order() + child.order(),
            Tree::Pairing { plain, conj, .. } => plain.order() + conj.order(),
        }
    }

    /// Node modes in preorder.
    pub fn modes(&self, out: &mut Vec<Nu>) {
        match self {
            Tree::Endpoint { nu, .. } => out.push(*nu),
            Tree::Branch1 { mode, child, .. } => {
                out.push(*mode);
                child.modes(out);
            }
            Tree::Insertion { nu, mu_tree, child, .. } => {
                out.push(Nu::zero(nu.dim()));
                mu_tree.modes(out);
                child.modes(out);
            }
            Tree::Pairing { nup, plain, conj, .. } => {
                out.push(Nu::zero(nup.dim()));
                plain.modes(out);
                conj.modes(out);
            }
        }
    }

    /// Canonical text form; distinct trees have distinct forms.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        self.write_canonical(&mut s);
        s
    }

    fn write_canonical(&self, s: &mut String) {
        match self {
            Tree::Endpoint { j, nu } => {
                let _ = write!(s, "E{j}{nu}");
            }
            Tree::Branch1 { j, nu, mode, child } => {
                let _ = write!(s, "B{j}{nu}m{mode}[");
                child.write_canonical(s);
                s.push(']');
            }
            Tree::Insertion {
                j,
                nu,
                tag,
                mu_tree,
                child,
            } => {
                let t = if *tag == InsertTag::MuFirst { 'f' } else { 's' };
                let _ = write!(s, "I{t}{j}{nu}[");
                mu_tree.write_canonical(s);
                s.push_str("][");
                child.write_canonical(s);
                s.push(']');
            }
            Tree::Pairing { jp, nup, plain, conj } => {
                let _ = write!(s, "P{jp}{nup}[");
                plain.write_canonical(s);
                s.push_str("][*");
                conj.write_canonical(s);
                s.push(']');
            }
        }
    }
}

/// Everything needed to evaluate propagators and node factors.
#[derive(Clone, Debug)]
pub struct Context {
    pub g: ComplexMatrixField,
    pub omega: Vec<f64>,
    pub lambda0: f64,
    pub divisor_floor: f64,
}

impl Context {
    pub fn new(g: ComplexMatrixField, omega: &[f64], lambda0: f64) -> Self {
        Context {
            g,
            omega: omega.to_vec(),
            lambda0,
            divisor_floor: DIVISOR_FLOOR,
        }
    }
}

/// Bare propagator of a line (j, nu).
pub fn propagator(j: u8, nu: &Nu, omega: &[f64], lambda0: f64, floor: f64) -> Result<C64> {
    let x = nu.dot(omega);
    match (j, nu.is_zero()) {
        (1, false) => {
            if x.abs() < floor {
                return Err(Error::SmallDivisor {
                    nu: *nu,
                    j: 1,
                    divisor: x,
                });
            }
            Ok(-I / x)
        }
        (2, _) => {
            let y = x + 2.0 * lambda0;
            if y.abs() < floor {
                return Err(Error::SmallDivisor {
                    nu: *nu,
                    j: 2,
                    divisor: y,
                });
            }
            Ok(-I / y)
        }
        (1, true) => Ok(C64::new(1.0, 0.0)),
        (3, true) => Ok(I),
        _ => Err(Error::Domain(format!(
            "no propagator for component {j} at momentum {nu}"
        ))),
    }
}

pub fn tree_value(t: &Tree, ctx: &Context) -> Result<C64> {
    let (j, nu) = t.root();
    let g = propagator(j, &nu, &ctx.omega, ctx.lambda0, ctx.divisor_floor)?;
    let inner = match t {
        Tree::Endpoint { j, nu } => ctx.g.f(row(*j), 1, nu),
        Tree::Branch1 { j, mode, child, .. } => {
            let (jc, _) = child.root();
            ctx.g.f(row(*j), jc as usize, mode) * tree_value(child, ctx)?
        }
        Tree::Insertion { j, mu_tree, child, .. } => {
            insertion_factor(*j) * tree_value(mu_tree, ctx)? * tree_value(child, ctx)?
        }
        Tree::Pairing { jp, plain, conj, .. } => {
            pairing_factor(*jp) * tree_value(plain, ctx)? * tree_value(conj, ctx)?.conj()
        }
    };
    Ok(g * inner)
}

/// All trees through a maximal order, grouped by (order, j, nu).
type Level = BTreeMap<(u8, Nu), Vec<Arc<Tree>>>;

#[derive(Clone, Debug)]
pub struct TreeSet {
    levels: Vec<Level>,
    dim: usize,
}

fn entries(g: &ComplexMatrixField, i: usize, j: usize) -> Vec<(Nu, C64)> {
    g.series()
        .entry_support(i, j)
        .into_iter()
        .map(|nu| (nu, g.f(i, j, &nu)))
        .collect()
}

impl TreeSet {
    /// Enumerate every tree of order <= k_max with modes in the support of g.
    pub fn build(g: &ComplexMatrixField, k_max: usize, budget: usize) -> Result<Self> {
        let dim = g.dim();
        let zero = Nu::zero(dim);
        let mut levels: Vec<Level> = vec![BTreeMap::new()];
        let mut total = 0usize;
        let mut push = |lvl: &mut BTreeMap<(u8, Nu), Vec<Arc<Tree>>>, t: Tree| -> Result<()> {
            total += 1;
            if total > budget {
                return Err(Error::Budget {
                    what: "tree enumeration".into(),
                    limit: budget,
                });
            }
            lvl.entry(t.root()).or_default().push(Arc::new(t));
            Ok(())
        };
        for k in 1..=k_max {
            let mut lvl = BTreeMap::new();
            if k == 1 {
                for (nu, _) in entries(g, 1, 1) {
                    let j = if nu.is_zero() { 3 } else { 1 };
                    push(&mut lvl, Tree::Endpoint { j, nu })?;
                }
                for (nu, _) in entries(g, 2, 1) {
                    push(&mut lvl, Tree::Endpoint { j: 2, nu })?;
                }
            } else {
                let prev = &levels[k - 1];
                for j_out in [1u8, 2, 3] {
                    for jc in [1u8, 2] {
                        let modes = entries(g, row(j_out), jc as usize);
                        for ((_, nu2), kids) in prev.iter().filter(|e| e.0 .0 == jc) {
                            for (mode, _) in &modes {
                                let nu = *mode + *nu2;
                                let allowed = match j_out {
                                    1 => !nu.is_zero(),
                                    3 => nu.is_zero(),
                                    _ => true,
                                };
                                if !allowed {
                                    continue;
                                }
                                for child in kids {
                                    push(
                                        &mut lvl,
                                        Tree::Branch1 {
                                            j: j_out,
                                            nu,
                                            mode: *mode,
                                            child: child.clone(),
                                        },
                                    )?;
                                }
                            }
                        }
                    }
                }
                for k1 in 1..k {
                    let Some(mus) = levels[k1].get(&(3, zero)) else {
                        continue;
                    };
                    for ((j_in, nu), kids) in &levels[k - k1] {
                        let j_out = match (*j_in, nu.is_zero()) {
                            (3, _) => continue,
                            (j, false) => j,
                            (2, true) => 2,
                            (_, true) => 3,
                        };
                        for tag in [InsertTag::MuFirst, InsertTag::MuSecond] {
                            for m in mus {
                                for child in kids {
                                    push(
                                        &mut lvl,
                                        Tree::Insertion {
                                            j: j_out,
                                            nu: *nu,
                                            tag,
                                            mu_tree: m.clone(),
                                            child: child.clone(),
                                        },
                                    )?;
                                }
                            }
                        }
                    }
                }
                for k1 in 1..k {
                    for ((jp, nup), plains) in &levels[k1] {
                        if *jp == 3 {
                            continue;
                        }
                        let Some(conjs) = levels[k - k1].get(&(*jp, *nup)) else {
                            continue;
                        };
                        for p in plains {
                            for c in conjs {
                                push(
                                    &mut lvl,
                                    Tree::Pairing {
                                        jp: *jp,
                                        nup: *nup,
                                        plain: p.clone(),
                                        conj: c.clone(),
                                    },
                                )?;
                            }
                        }
                    }
                }
            }
            levels.push(lvl);
        }
        Ok(TreeSet { levels, dim })
    }

    pub fn k_max(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trees(&self, k: usize, j: u8, nu: &Nu) -> &[Arc<Tree>] {
        self.levels
            .get(k)
            .and_then(|l| l.get(&(j, *nu)))
            .map_or(&[], Vec::as_slice)
    }

    /// Root labels (j, nu) carrying at least one tree of order k.
    pub fn roots(&self, k: usize) -> Vec<(u8, Nu)> {
        self.levels.get(k).map_or(Vec::new(), |l| l.keys().copied().collect())
    }

    pub fn count(&self, k: usize) -> usize {
        self.levels.get(k).map_or(0, |l| l.values().map(Vec::len).sum())
    }

    /// (largest number of trees sharing a root and a mode multiset, 2^{4k}).
    pub fn shape_bound(&self, k: usize) -> (usize, usize) {
        let mut groups: BTreeMap<(u8, Nu, Vec<Nu>), usize> = BTreeMap::new();
        for ((j, nu), ts) in &self.levels[k] {
            for t in ts {
                let mut m = Vec::new();
                t.modes(&mut m);
                m.sort();
                *groups.entry((*j, *nu, m)).or_default() += 1;
            }
        }
        (groups.values().copied().max().unwrap_or(0), 1usize << (4 * k).min(60))
    }

    /// Number of canonical forms shared by two retained trees (0 when the
    /// serialization is injective and the grammar produces no duplicates).
    pub fn duplicate_count(&self, k: usize) -> usize {
        let mut seen = HashSet::new();
        let mut dup = 0;
        for ts in self.levels[k].values() {
            for t in ts {
                if !seen.insert(t.canonical()) {
                    dup += 1;
                }
            }
        }
        dup
    }
}

/// Trees of order k with root (j, nu).
pub fn enumerate_trees(g: &ComplexMatrixField, k: usize, j: u8, nu: &Nu) -> Result<Vec<Arc<Tree>>> {
    Ok(TreeSet::build(g, k, TREE_BUDGET)?.trees(k, j, nu).to_vec())
}

/// Sum of tree values in enumeration order.
pub fn tree_sum(set: &TreeSet, k: usize, j: u8, nu: &Nu, ctx: &Context) -> Result<C64> {
    let vals: Vec<Result<C64>> = set.trees(k, j, nu).par_iter().map(|t| tree_value(t, ctx)).collect();
    let mut s = C64::default();
    for v in vals {
        s += v?;
    }
    Ok(s)
}

/// Tree sum against the recursive coefficient at one (k, j, nu).
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRow {
    pub k: usize,
    pub j: u8,
    pub nu: Nu,
    pub trees: usize,
    pub tree_sum: C64,
    pub series: C64,
    /// |tree_sum - series| / max(|series|, 1).
    pub defect: f64,
}

/// Compare tree sums with the recursive series for every order <= k_max
/// and every (j, nu) that carries trees or a nonzero coefficient.
pub fn oracle_table(
    set: &TreeSet,
    series: &crate::series::FormalSeries,
    ctx: &Context,
    k_max: usize,
) -> Result<Vec<OracleRow>> {
    let mut rows = Vec::new();
    for k in 1..=k_max.min(set.k_max()).min(series.order()) {
        let mut keys: std::collections::BTreeSet<(u8, Nu)> = set.roots(k).into_iter().collect();
        let sl = series.slice(k);
        keys.extend(
            sl.a.coeffs
                .iter()
                .filter(|(_, v)| v.norm() > 0.0)
                .map(|(nu, _)| (1, *nu)),
        );
        keys.extend(
            sl.c.coeffs
                .iter()
                .filter(|(_, v)| v.norm() > 0.0)
                .map(|(nu, _)| (2, *nu)),
        );
        if sl.mu.norm() > 0.0 {
            keys.insert((3, Nu::zero(set.dim())));
        }
        for (j, nu) in keys {
            let t = tree_sum(set, k, j, &nu, ctx)?;
            let c = series.coefficient(k, j, &nu);
            rows.push(OracleRow {
                k,
                j,
                nu,
                trees: set.trees(k, j, &nu).len(),
                tree_sum: t,
                series: c,
                defect: (t - c).norm() / c.norm().max(1.0),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Branch1,
    Branch2,
    EndpointBlack,
    EndpointWhite,
}

/// How a node's factor is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Factor {
    /// g_{row,col,mode}.
    Field {
        row: usize,
        col: usize,
    },
    Const(C64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    pub mode: Nu,
    pub order: u8,
    pub factor: Factor,
    /// Id of the line leaving this node towards the root.
    pub exit: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub id: usize,
    pub from: usize,
    /// `None` for the root line.
    pub to: Option<usize>,
    pub j: u8,
    pub momentum: Nu,
    /// Odd number of conjugation marks between this line and the root.
    pub conjugate: bool,
    /// -1 for zero-momentum lines, >= 0 otherwise; `None` until assigned.
    pub scale: Option<i32>,
}

/// Flat form of a tree. Node `i` and its exit line `i` share an index.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeDiagram {
    pub nodes: Vec<Node>,
    pub lines: Vec<Line>,
    pub root_line: usize,
}

impl TreeDiagram {
    pub fn from_tree(t: &Tree) -> Self {
        let mut d = TreeDiagram {
            nodes: Vec::new(),
            lines: Vec::new(),
            root_line: 0,
        };
        d.add(t, None, false);
        d
    }

    fn add(&mut self, t: &Tree, parent: Option<usize>, conjugate: bool) -> usize {
        let id = self.nodes.len();
        let (j, momentum) = t.root();
        let zero = Nu::zero(momentum.dim());
        let (kind, mode, order, factor) = match t {
            Tree::Endpoint { j, nu } => {
                let kind = if nu.is_zero() && *j == 2 {
                    NodeKind::EndpointWhite
                } else {
                    NodeKind::EndpointBlack
                };
                (kind, *nu, 1, Factor::Field { row: row(*j), col: 1 })
            }
            Tree::Branch1 { j, mode, child, .. } => (
                NodeKind::Branch1,
                *mode,
                1,
                Factor::Field {
                    row: row(*j),
                    col: child.root().0 as usize,
                },
            ),
            Tree::Insertion { j, .. } => (NodeKind::Branch2, zero, 0, Factor::Const(insertion_factor(*j))),
            Tree::Pairing { jp, .. } => (NodeKind::Branch2, zero, 0, Factor::Const(pairing_factor(*jp))),
        };
        self.nodes.push(Node {
            id,
            kind,
            mode,
            order,
            factor,
            exit: id,
        });
        self.lines.push(Line {
            id,
            from: id,
            to: parent,
            j,
            momentum,
            conjugate,
            scale: None,
        });
        match t {
            Tree::Endpoint { .. } => {}
            Tree::Branch1 { child, .. } => {
                self.add(child, Some(id), conjugate);
            }
            Tree::Insertion {
                tag, mu_tree, child, ..
            } => {
                if *tag == InsertTag::MuFirst {
                    self.add(mu_tree, Some(id), conjugate);
                    self.add(child, Some(id), conjugate);
                } else {
                    self.add(child, Some(id), conjugate);
                    self.add(mu_tree, Some(id), conjugate);
                }
            }
            Tree::Pairing { plain, conj, .. } => {
                self.add(plain, Some(id), conjugate);
                self.add(conj, Some(id), !conjugate);
            }
        }
        id
    }

    /// Lines entering node `v`.
    pub fn entering(&self, v: usize) -> impl Iterator<Item = &Line> {
        self.lines.iter().filter(move |l| l.to == Some(v))
    }

    /// Order |P| - |V2| = number of nodes with order 1.
    pub fn order(&self) -> usize {
        self.nodes.iter().map(|n| n.order as usize).sum()
    }

    /// Check conservation at every node; entering lines whose conjugation
    /// flag differs from the exit line's count with reversed momentum.
    pub fn check_conservation(&self) -> Result<()> {
        for n in &self.nodes {
            let exit = &self.lines[n.exit];
            let mut s = n.mode;
            for l in self.entering(n.id) {
                s = if l.conjugate == exit.conjugate {
                    s + l.momentum
                } else {
                    s - l.momentum
                };
            }
            if s != exit.momentum {
                return Err(Error::Domain(format!(
                    "conservation fails at node {}: {} != {}",
                    n.id, s, exit.momentum
                )));
            }
        }
        Ok(())
    }

    pub fn node_factor(&self, v: usize, g: &ComplexMatrixField) -> C64 {
        let n = &self.nodes[v];
        match n.factor {
            Factor::Field { row, col } => g.f(row, col, &n.mode),
            Factor::Const(c) => c,
        }
    }

    /// Product of factors and `prop(line)` values, conjugating the
    /// contributions of conjugated lines and their nodes.
    pub fn value_with<F>(&self, g: &ComplexMatrixField, mut prop: F) -> Result<C64>
    where
        F: FnMut(&Line) -> Result<C64>,
    {
        let mut v = C64::new(1.0, 0.0);
        for n in &self.nodes {
            let l = &self.lines[n.exit];
            let z = self.node_factor(n.id, g) * prop(l)?;
            v *= if l.conjugate { z.conj() } else { z };
        }
        Ok(v)
    }

    pub fn value(&self, ctx: &Context) -> Result<C64> {
        self.value_with(&ctx.g, |l| {
            propagator(l.j, &l.momentum, &ctx.omega, ctx.lambda0, ctx.divisor_floor)
        })
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph tree {\n  rankdir=RL;\n  root [shape=point];\n");
        for n in &self.nodes {
            let shape = match n.kind {
                NodeKind::Branch1 => "circle",
                NodeKind::Branch2 => "diamond",
                NodeKind::EndpointBlack => "doublecircle",
                NodeKind::EndpointWhite => "box",
            };
            let _ = writeln!(s, "  v{} [shape={shape}, label=\"{}\"];", n.id, n.mode);
        }
        for l in &self.lines {
            let to = l.to.map_or("root".to_string(), |t| format!("v{t}"));
            let scale = l.scale.map_or(String::new(), |n| format!(" n={n}"));
            let star = if l.conjugate { "*" } else { "" };
            let _ = writeln!(
                s,
                "  v{} -> {to} [label=\"j={} {}{star}{scale}\"];",
                l.from, l.j, l.momentum
            );
        }
        s.push_str("}\n");
        s
    }
}
