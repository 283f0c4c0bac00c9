//! Multiscale resummation: scale labelings, self-energy cluster detection,
//! the self-energy functions M^[n]_j, renormalized propagators and
//! coefficients, and the shift operation on self-energy clusters.
//!
//! A self-energy cluster is represented by a hole tree: a tree in which one
//! leaf is the entering external line. Lines on the path from that leaf to
//! the exit carry momentum nu0 + nu_ext, so their propagators are evaluated
//! at omega . nu0 + x where x = omega . nu_ext. Every other line carries a
//! fixed momentum.
//!
//! A cluster on scale m is a maximal connected set of nodes joined by lines
//! of scale <= m, containing a line of scale m; single nodes are clusters on
//! scale -1. External lines of a cluster on scale m have scale > m.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Nu, C64, I};
use crate::smalldiv::{delta0, ScaleSystem};
use crate::trees::{insertion_factor, row, Context, InsertTag, Tree, TreeDiagram, TreeSet, TREE_BUDGET};

/// Label used for external lines of a cluster.
pub const EXTERNAL: i32 = i32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub enum HoleTree {
    Hole {
        j: u8,
    },
    Branch1 {
        j: u8,
        nu0: Nu,
        mode: Nu,
        child: Box<HoleTree>,
    },
    Insertion {
        j: u8,
        nu0: Nu,
        tag: InsertTag,
        mu_tree: Arc<Tree>,
        child: Box<HoleTree>,
    },
}

impl HoleTree {
    pub fn order(&self) -> usize {
        match self {
            HoleTree::Hole { .. } => 0,
            HoleTree::Branch1 { child, .. } => 1 + child.order(),
            HoleTree::Insertion { mu_tree, child, .. } => mu_tree.order() + child.order(),
        }
    }

    pub fn j(&self) -> u8 {
        match self {
            HoleTree::Hole { j } | HoleTree::Branch1 { j, .. } | HoleTree::Insertion { j, .. } => *j,
        }
    }

    pub fn nu0(&self, dim: usize) -> Nu {
        match self {
            HoleTree::Hole { .. } => Nu::zero(dim),
            HoleTree::Branch1 { nu0, .. } | HoleTree::Insertion { nu0, .. } => *nu0,
        }
    }

    /// First kind: both external lines attach to the same node.
    pub fn is_first_kind(&self) -> bool {
        match self {
            HoleTree::Branch1 { child, .. } | HoleTree::Insertion { child, .. } => {
                matches!(**child, HoleTree::Hole { .. })
            }
            HoleTree::Hole { .. } => false,
        }
    }
}

/// A line of a [`Graph`].
#[derive(Clone, Debug, PartialEq)]
pub struct GLine {
    pub j: u8,
    pub nu: Nu,
    /// Carries the external momentum in addition to `nu`.
    pub shifted: bool,
    pub conj: bool,
    /// `None` for the entering external line of a cluster.
    pub from: Option<usize>,
    /// `None` for the root or exit line.
    pub to: Option<usize>,
    pub external: bool,
}

impl GLine {
    pub fn zero_momentum(&self) -> bool {
        !self.shifted && self.nu.is_zero()
    }

    pub fn argument(&self, omega: &[f64], x: f64) -> f64 {
        self.nu.dot(omega) + if self.shifted { x } else { 0.0 }
    }
}

/// Flat diagram shared by trees and clusters. Node i leaves along line i;
/// the entering external line of a cluster, if any, comes last.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub factors: Vec<C64>,
    pub modes: Vec<Nu>,
    /// 1 for nodes carrying a field factor, 0 for insertions and pairings.
    pub orders: Vec<u8>,
    pub lines: Vec<GLine>,
}

impl Graph {
    fn empty() -> Self {
        Graph {
            factors: Vec::new(),
            modes: Vec::new(),
            orders: Vec::new(),
            lines: Vec::new(),
        }
    }

    pub fn from_tree(t: &Tree, ctx: &Context) -> Self {
        let d = TreeDiagram::from_tree(t);
        Graph {
            factors: (0..d.nodes.len()).map(|v| d.node_factor(v, &ctx.g)).collect(),
            modes: d.nodes.iter().map(|n| n.mode).collect(),
            orders: d.nodes.iter().map(|n| n.order).collect(),
            lines: d
                .lines
                .iter()
                .map(|l| GLine {
                    j: l.j,
                    nu: l.momentum,
                    shifted: false,
                    conj: l.conjugate,
                    from: Some(l.from),
                    to: l.to,
                    external: false,
                })
                .collect(),
        }
    }

    pub fn from_hole_tree(h: &HoleTree, ctx: &Context) -> Self {
        let mut g = Graph::empty();
        let mut hole = None;
        g.add_hole(h, None, ctx, &mut hole);
        g.lines[0].external = true;
        g.lines.extend(hole);
        g
    }

    fn push_node(&mut self, factor: C64, mode: Nu, order: u8, line: GLine) -> usize {
        let id = self.factors.len();
        self.factors.push(factor);
        self.modes.push(mode);
        self.orders.push(order);
        self.lines.push(line);
        id
    }

    fn add_subtree(&mut self, t: &Tree, parent: usize, ctx: &Context) {
        let sub = Graph::from_tree(t, ctx);
        let off = self.factors.len();
        self.factors.extend(sub.factors);
        self.modes.extend(sub.modes);
        self.orders.extend(sub.orders);
        for mut l in sub.lines {
            l.from = l.from.map(|f| f + off);
            l.to = Some(l.to.map_or(parent, |t| t + off));
            self.lines.push(l);
        }
    }

    fn add_hole(&mut self, h: &HoleTree, parent: Option<usize>, ctx: &Context, hole: &mut Option<GLine>) {
        let dim = ctx.omega.len();
        let line = GLine {
            j: h.j(),
            nu: h.nu0(dim),
            shifted: true,
            conj: false,
            from: None,
            to: parent,
            external: false,
        };
        match h {
            HoleTree::Hole { .. } => {
                *hole = Some(GLine { external: true, ..line });
            }
            HoleTree::Branch1 { j, mode, child, .. } => {
                let f = ctx.g.f(row(*j), child.j() as usize, mode);
                let id = self.factors.len();
                self.push_node(f, *mode, 1, GLine { from: Some(id), ..line });
                self.add_hole(child, Some(id), ctx, hole);
            }
            HoleTree::Insertion {
                j, tag, mu_tree, child, ..
            } => {
                let id = self.factors.len();
                self.push_node(insertion_factor(*j), Nu::zero(dim), 0, GLine { from: Some(id), ..line });
                if *tag == InsertTag::MuFirst {
                    self.add_subtree(mu_tree, id, ctx);
                    self.add_hole(child, Some(id), ctx, hole);
                } else {
                    self.add_hole(child, Some(id), ctx, hole);
                    self.add_subtree(mu_tree, id, ctx);
                }
            }
        }
    }

    pub fn hole_line(&self) -> Option<usize> {
        self.lines.iter().position(|l| l.from.is_none())
    }

    pub fn num_nodes(&self) -> usize {
        self.factors.len()
    }

    pub fn order(&self) -> usize {
        self.orders.iter().map(|&o| o as usize).sum()
    }

    /// M(theta) = sum of |nu_v|_1 over nodes.
    pub fn mode_mass(&self) -> i64 {
        self.modes.iter().map(Nu::l1).sum()
    }
}

/// A cluster found inside a labeled graph.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectedCluster {
    pub nodes: Vec<usize>,
    pub scale: i32,
    pub entering: Vec<usize>,
    pub exiting: Vec<usize>,
    pub order: usize,
    pub self_energy: bool,
}

fn find(p: &mut [usize], mut i: usize) -> usize {
    while p[i] != i {
        p[i] = p[p[i]];
        i = p[i];
    }
    i
}

/// All clusters of a labeled graph on scales in `thresholds`, with their
/// self-energy status.
pub fn clusters(g: &Graph, labels: &[i32], thresholds: std::ops::RangeInclusive<i32>) -> Vec<DetectedCluster> {
    let n = g.num_nodes();
    let mut out = Vec::new();
    for m in thresholds {
        let mut parent: Vec<usize> = (0..n).collect();
        for (l, line) in g.lines.iter().enumerate() {
            if let (Some(a), Some(b)) = (line.from, line.to) {
                if labels[l] <= m {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    parent[ra] = rb;
                }
            }
        }
        let comp: Vec<usize> = (0..n).map(|v| find(&mut parent, v)).collect();
        let mut roots: Vec<usize> = comp.clone();
        roots.sort_unstable();
        roots.dedup();
        for r in roots {
            let nodes: Vec<usize> = (0..n).filter(|&v| comp[v] == r).collect();
            let inside = |v: Option<usize>| v.is_some_and(|v| comp[v] == r);
            let mut max_inner = -1;
            let mut entering = Vec::new();
            let mut exiting = Vec::new();
            for (l, line) in g.lines.iter().enumerate() {
                let (fi, ti) = (inside(line.from), inside(line.to));
                if fi && (ti || (line.to.is_none() && labels[l] <= m)) {
                    max_inner = max_inner.max(labels[l]);
                } else if ti && !fi {
                    entering.push(l);
                } else if fi {
                    exiting.push(l);
                }
            }
            if max_inner != m && !(m == -1 && max_inner <= -1) {
                continue;
            }
            let order = nodes.iter().map(|&v| g.orders[v] as usize).sum();
            let self_energy = is_self_energy(g, &entering, &exiting);
            out.push(DetectedCluster {
                nodes,
                scale: m,
                entering,
                exiting,
                order,
                self_energy,
            });
        }
    }
    out
}

fn is_self_energy(g: &Graph, entering: &[usize], exiting: &[usize]) -> bool {
    if entering.len() != 1 || exiting.len() != 1 {
        return false;
    }
    let (a, b) = (&g.lines[entering[0]], &g.lines[exiting[0]]);
    if a.j != b.j || a.nu != b.nu || a.shifted != b.shifted || a.conj != b.conj {
        return false;
    }
    let top = b.from.expect("exiting line leaves a node");
    let mut v = a.to.expect("entering line reaches a node");
    while v != top {
        let l = &g.lines[v];
        if l.zero_momentum() {
            return false;
        }
        v = l.to.expect("path reaches the exiting node");
    }
    true
}

/// Scale options of a line at argument y: -1 for zero momentum, otherwise
/// the scales with nonzero support weight.
pub fn scale_options(line: &GLine, y: f64, scales: &ScaleSystem, lambda0: f64) -> Vec<i32> {
    if line.zero_momentum() {
        return vec![-1];
    }
    scales
        .scale_weights(y, lambda0)
        .into_iter()
        .map(|(n, _)| n as i32)
        .collect()
}

/// Visit every labeling in the product of per-line options.
pub fn for_each_labeling(options: &[Vec<i32>], mut f: impl FnMut(&[i32])) {
    fn rec(options: &[Vec<i32>], cur: &mut Vec<i32>, f: &mut dyn FnMut(&[i32])) {
        if cur.len() == options.len() {
            f(cur);
            return;
        }
        for &o in &options[cur.len()] {
            cur.push(o);
            rec(options, cur, f);
            cur.pop();
        }
    }
    if options.iter().any(Vec::is_empty) {
        return;
    }
    rec(options, &mut Vec::with_capacity(options.len()), &mut f);
}

/// Enumerated self-energy cluster skeleton.
#[derive(Clone, Debug)]
pub struct ClusterShape {
    pub tree: HoleTree,
    pub graph: Graph,
    pub j: u8,
    pub k: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Diagnostics {
    /// Smallest |x + 2 M^[<=n]_j(x)| / Delta0(x) over evaluated propagators.
    pub worst_denominator_ratio: f64,
    /// Largest |Im M^[n]_j(x)| / max(1, |M^[n]_j(x)|).
    pub worst_imag: f64,
    pub propagator_evaluations: u64,
}

pub struct Renormalizer {
    pub ctx: Context,
    pub scales: ScaleSystem,
    pub eps: f64,
    pub k_se: usize,
    pub trees: TreeSet,
    shapes: [Vec<ClusterShape>; 2],
    memo: RefCell<HashMap<(u8, usize, u64), C64>>,
    diag: RefCell<Diagnostics>,
}

/// Hole trees HT(k, j, nu0) with the hole carrying component `jh`.
fn hole_trees(g: &Context, set: &TreeSet, k: usize, j: u8, nu0: Nu, jh: u8) -> Vec<HoleTree> {
    let dim = g.omega.len();
    let mut out = Vec::new();
    if k == 0 {
        if j == jh && nu0.is_zero() {
            out.push(HoleTree::Hole { j });
        }
        return out;
    }
    for jc in [1u8, 2] {
        for mode in g.g.series().entry_support(row(j), jc as usize) {
            for child in hole_trees(g, set, k - 1, jc, nu0 - mode, jh) {
                out.push(HoleTree::Branch1 {
                    j,
                    nu0,
                    mode,
                    child: Box::new(child),
                });
            }
        }
    }
    for k1 in 1..=k {
        let mus = set.trees(k1, 3, &Nu::zero(dim));
        if mus.is_empty() {
            continue;
        }
        for child in hole_trees(g, set, k - k1, j, nu0, jh) {
            for tag in [InsertTag::MuFirst, InsertTag::MuSecond] {
                for m in mus {
                    out.push(HoleTree::Insertion {
                        j,
                        nu0,
                        tag,
                        mu_tree: m.clone(),
                        child: Box::new(child.clone()),
                    });
                }
            }
        }
    }
    out
}

impl Renormalizer {
    pub fn new(ctx: Context, scales: ScaleSystem, eps: f64, k_se: usize) -> Result<Self> {
        let dim = ctx.omega.len();
        let zero = Nu::zero(dim);
        for (i, jj) in [(1, 2), (2, 1)] {
            if ctx.g.f(i, jj, &zero) != C64::default() {
                return Err(Error::Domain(format!(
                    "resummation needs g{i}{jj} to vanish at nu = 0 (zero-momentum self-energy clusters beyond order one)"
                )));
            }
        }
        let trees = TreeSet::build(&ctx.g, k_se.max(1), TREE_BUDGET)?;
        let mut shapes: [Vec<ClusterShape>; 2] = [Vec::new(), Vec::new()];
        for j in [1u8, 2] {
            for k in 1..=k_se {
                for h in hole_trees(&ctx, &trees, k, j, zero, j) {
                    let graph = Graph::from_hole_tree(&h, &ctx);
                    shapes[j as usize - 1].push(ClusterShape { tree: h, graph, j, k });
                }
            }
        }
        Ok(Renormalizer {
            ctx,
            scales,
            eps,
            k_se,
            trees,
            shapes,
            memo: RefCell::new(HashMap::new()),
            diag: RefCell::new(Diagnostics {
                worst_denominator_ratio: f64::INFINITY,
                ..Default::default()
            }),
        })
    }

    pub fn lambda0(&self) -> f64 {
        self.ctx.lambda0
    }

    pub fn shapes(&self, j: u8) -> &[ClusterShape] {
        &self.shapes[j as usize - 1]
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diag.borrow().clone()
    }

    fn bare_zero(&self, j: u8) -> C64 {
        match j {
            1 => C64::new(1.0, 0.0),
            2 => -I / (2.0 * self.lambda0()),
            _ => I,
        }
    }

    /// g^[n]_j(y) = -i Psi_n(Delta0(y)) / (y + 2 M^[<=n]_j(y)).
    pub fn g_renorm(&self, n: usize, j: u8, y: f64) -> Result<C64> {
        let w = self.scales.support_product(y, n, self.lambda0());
        if w == 0.0 {
            return Ok(C64::default());
        }
        let den = y + 2.0 * self.m_upto(n, j, y)?;
        let d0 = delta0(y, self.lambda0());
        {
            let mut d = self.diag.borrow_mut();
            d.propagator_evaluations += 1;
            if d0 > 0.0 {
                d.worst_denominator_ratio = d.worst_denominator_ratio.min(den.norm() / d0);
            }
        }
        if den.norm() == 0.0 {
            return Err(Error::Domain(format!("vanishing renormalized denominator at x = {y}")));
        }
        Ok(-I * w / den)
    }

    fn line_propagator(&self, line: &GLine, label: i32, x: f64) -> Result<C64> {
        let z = if label < 0 {
            self.bare_zero(line.j)
        } else {
            self.g_renorm(label as usize, line.j, line.argument(&self.ctx.omega, x))?
        };
        Ok(if line.conj { z.conj() } else { z })
    }

    /// Product of node factors and renormalized propagators over the
    /// internal lines of `g` with the given labels (external lines skipped).
    pub fn graph_value(&self, g: &Graph, labels: &[i32], x: f64) -> Result<C64> {
        let mut v = C64::new(1.0, 0.0);
        for (i, f) in g.factors.iter().enumerate() {
            v *= if g.lines[i].conj { f.conj() } else { *f };
        }
        for (l, line) in g.lines.iter().enumerate() {
            if line.external {
                continue;
            }
            if v == C64::default() {
                break;
            }
            v *= self.line_propagator(line, labels[l], x)?;
        }
        Ok(v)
    }

    /// Self-energy value eps^k prod g prod F of a labeled cluster at x.
    pub fn self_energy_value(&self, c: &ClusterShape, labels: &[i32], x: f64) -> Result<C64> {
        Ok(self.eps.powi(c.k as i32) * self.graph_value(&c.graph, labels, x)?)
    }

    /// Per-line scale options of a cluster at x (externals fixed).
    pub fn cluster_options(&self, c: &ClusterShape, x: f64) -> Vec<Vec<i32>> {
        c.graph
            .lines
            .iter()
            .map(|l| {
                if l.external {
                    vec![EXTERNAL]
                } else {
                    scale_options(l, l.argument(&self.ctx.omega, x), &self.scales, self.lambda0())
                }
            })
            .collect()
    }

    /// True when `labels` make `c` a renormalized self-energy cluster on
    /// scale m: max internal label m and no self-energy cluster inside.
    pub fn is_renormalized_cluster(&self, c: &ClusterShape, labels: &[i32], m: i32) -> bool {
        let max = c
            .graph
            .lines
            .iter()
            .zip(labels)
            .filter(|(l, _)| !l.external)
            .map(|(_, &n)| n)
            .max()
            .unwrap_or(-1);
        if max != m {
            return false;
        }
        !clusters(&c.graph, labels, -1..=m - 1).iter().any(|d| d.self_energy)
    }

    /// Labeled renormalized clusters of component j on scale m at x.
    pub fn labeled_clusters(&self, j: u8, m: i32, x: f64) -> Vec<(usize, Vec<i32>)> {
        let mut out = Vec::new();
        for (i, c) in self.shapes(j).iter().enumerate() {
            let mut opts = self.cluster_options(c, x);
            for o in opts.iter_mut() {
                o.retain(|&n| n <= m || n == EXTERNAL);
            }
            for_each_labeling(&opts, |lab| {
                if self.is_renormalized_cluster(c, lab, m) {
                    out.push((i, lab.to_vec()));
                }
            });
        }
        out
    }

    /// (i/2) sum over renormalized clusters on scale p - 1 of V_T(y),
    /// without the chi-chain prefactor.
    pub fn m_bare(&self, p: usize, j: u8, y: f64) -> Result<C64> {
        if p == 0 {
            return Ok(if j == 2 {
                C64::new(self.lambda0(), 0.0)
            } else {
                C64::default()
            });
        }
        let key = (j, p, y.to_bits());
        if let Some(v) = self.memo.borrow().get(&key) {
            return Ok(*v);
        }
        let mut s = C64::default();
        for (i, lab) in self.labeled_clusters(j, p as i32 - 1, y) {
            s += self.self_energy_value(&self.shapes(j)[i], &lab, y)?;
        }
        let v = 0.5 * I * s;
        {
            let mut d = self.diag.borrow_mut();
            d.worst_imag = d.worst_imag.max(v.im.abs() / v.norm().max(1.0));
        }
        self.memo.borrow_mut().insert(key, v);
        Ok(v)
    }

    /// M^[p]_j(y) including the chi_0 ... chi_{p-1} prefactor.
    pub fn m_scale(&self, p: usize, j: u8, y: f64) -> Result<C64> {
        if p == 0 {
            return self.m_bare(0, j, y);
        }
        let xi = self.scales.xi(y, p as isize - 1, self.lambda0());
        if xi == 0.0 {
            return Ok(C64::default());
        }
        Ok(xi * self.m_bare(p, j, y)?)
    }

    /// M^[<=n]_j(y).
    pub fn m_upto(&self, n: usize, j: u8, y: f64) -> Result<C64> {
        let mut s = C64::default();
        for p in 0..=n {
            s += self.m_scale(p, j, y)?;
        }
        Ok(s)
    }

    /// Labelings of a concrete tree that contain no self-energy cluster.
    pub fn renormalized_labelings(&self, g: &Graph) -> Vec<Vec<i32>> {
        renormalized_labelings(g, &self.scales, self.lambda0())
    }

    /// u^[k]_{j,nu}: renormalized trees only, renormalized propagators.
    pub fn renorm_coefficient(&self, k: usize, j: u8, nu: &Nu) -> Result<C64> {
        let mut s = C64::default();
        for t in self.trees.trees(k, j, nu) {
            let g = Graph::from_tree(t, &self.ctx);
            for lab in self.renormalized_labelings(&g) {
                s += self.graph_value(&g, &lab, 0.0)?;
            }
        }
        Ok(s)
    }

    /// Sum of the order-1 cluster values on scale -1 (single node clusters
    /// and first-order mu insertions) for component j.
    pub fn scale_minus_one_sum(&self, j: u8) -> Result<C64> {
        let mut s = C64::default();
        for c in self.shapes(j).iter().filter(|c| c.k == 1) {
            let opts = self.cluster_options(c, 0.0);
            if opts.iter().flatten().any(|&n| n >= 0 && n != EXTERNAL) {
                continue;
            }
            let lab: Vec<i32> = opts.iter().map(|o| o[0]).collect();
            s += self.graph_value(&c.graph, &lab, 0.0)?;
        }
        Ok(s)
    }

    /// The two first-kind partners of a second-kind cluster, as hole trees
    /// (mu-tree first, mu-tree second). Defined for j = 1 clusters whose
    /// path lines all have nonzero nu0 and whose hole hangs from a branch1.
    pub fn shift_partners(&self, c: &ClusterShape) -> Result<(HoleTree, HoleTree)> {
        if c.tree.is_first_kind() {
            return Err(Error::Domain(
                "shift operation needs a cluster of the second kind".into(),
            ));
        }
        if c.j != 1 {
            return Err(Error::Domain("shift operation is defined for component 1".into()));
        }
        let dim = self.ctx.omega.len();
        let mu = Arc::new(strip_hole(&c.tree, true, dim)?);
        if !self
            .trees
            .trees(c.k, 3, &Nu::zero(dim))
            .iter()
            .any(|t| t.canonical() == mu.canonical())
        {
            return Err(Error::Domain("shifted cluster is not an enumerated mu-tree".into()));
        }
        let make = |tag| HoleTree::Insertion {
            j: 1,
            nu0: Nu::zero(dim),
            tag,
            mu_tree: mu.clone(),
            child: Box::new(HoleTree::Hole { j: 1 }),
        };
        Ok((make(InsertTag::MuFirst), make(InsertTag::MuSecond)))
    }

    /// Labels of a partner graph given labels of the original cluster: the
    /// original exit becomes the (3, 0) line on scale -1.
    pub fn partner_labels(&self, c: &ClusterShape, partner: &Graph, labels: &[i32]) -> Vec<i32> {
        let hole = c.graph.hole_line().expect("cluster has a hole");
        let mut out = vec![EXTERNAL; partner.lines.len()];
        // Partner: node 0 is the insertion; nodes 1.. are the original nodes.
        out[1] = -1;
        for l in 1..c.graph.lines.len() {
            if l == hole {
                continue;
            }
            out[l + 1] = labels[l];
        }
        let ph = partner.hole_line().expect("partner has a hole");
        out[ph] = EXTERNAL;
        out
    }
}

/// The mu-tree obtained by removing the hole of a second-kind cluster.
fn strip_hole(h: &HoleTree, top: bool, dim: usize) -> Result<Tree> {
    let j_of = |j: u8| if top { 3 } else { j };
    match h {
        HoleTree::Branch1 { j, nu0, mode, child } => {
            if !top && nu0.is_zero() {
                return Err(Error::Domain("path line with zero momentum".into()));
            }
            match &**child {
                HoleTree::Hole { j: jh } => {
                    if *jh != 1 {
                        return Err(Error::Domain("hole must carry component 1".into()));
                    }
                    if top {
                        return Err(Error::Domain("cluster of the first kind".into()));
                    }
                    Ok(Tree::Endpoint { j: *j, nu: *mode })
                }
                _ => Ok(Tree::Branch1 {
                    j: j_of(*j),
                    nu: if top { Nu::zero(dim) } else { *nu0 },
                    mode: *mode,
                    child: Arc::new(strip_hole(child, false, dim)?),
                }),
            }
        }
        HoleTree::Insertion {
            j,
            nu0,
            tag,
            mu_tree,
            child,
        } => {
            if top {
                return Err(Error::Domain("insertion node at the top of the shifted path".into()));
            }
            if nu0.is_zero() {
                return Err(Error::Domain("path line with zero momentum".into()));
            }
            if matches!(**child, HoleTree::Hole { .. }) {
                return Err(Error::Domain("hole attached to an insertion node".into()));
            }
            Ok(Tree::Insertion {
                j: *j,
                nu: *nu0,
                tag: *tag,
                mu_tree: mu_tree.clone(),
                child: Arc::new(strip_hole(child, false, dim)?),
            })
        }
        HoleTree::Hole { .. } => Err(Error::Domain("trivial cluster".into())),
    }
}

/// Scale options of every line of a concrete tree graph.
pub fn tree_options(g: &Graph, scales: &ScaleSystem, lambda0: f64) -> Vec<Vec<i32>> {
    g.lines
        .iter()
        .map(|l| scale_options(l, l.argument(&scales.omega, 0.0), scales, lambda0))
        .collect()
}

/// Labelings of a concrete tree that contain no self-energy cluster.
pub fn renormalized_labelings(g: &Graph, scales: &ScaleSystem, lambda0: f64) -> Vec<Vec<i32>> {
    let mut out = Vec::new();
    let top = scales.n_max as i32;
    for_each_labeling(&tree_options(g, scales, lambda0), |lab| {
        if !clusters(g, lab, -1..=top).iter().any(|d| d.self_energy) {
            out.push(lab.to_vec());
        }
    });
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CountingReport {
    pub trees: usize,
    pub labelings: usize,
    pub violations: usize,
    /// Smallest slack 2 * 2^{-n} M - 1 - N_n over checked (tree, n).
    pub min_slack: f64,
}

/// Check N_n <= 2 * 2^{-n} M(theta) - 1 for every scale n >= 0 present.
pub fn counting_bound_check(g: &Graph, labels: &[i32]) -> (bool, f64) {
    let m = g.mode_mass() as f64;
    let mut ok = true;
    let mut slack = f64::INFINITY;
    let scales: BTreeSet<i32> = labels.iter().copied().filter(|&n| n >= 0).collect();
    for n in scales {
        let count = labels.iter().filter(|&&l| l == n).count() as f64;
        let s = 2.0 * 0.5f64.powi(n) * m - 1.0 - count;
        slack = slack.min(s);
        if s < 0.0 {
            ok = false;
        }
    }
    (ok, slack)
}

/// Counting bound over every renormalized labeling of every tree of order
/// 1..=k_max in `set`.
pub fn counting_report(set: &TreeSet, ctx: &Context, scales: &ScaleSystem, k_max: usize) -> CountingReport {
    use rayon::prelude::*;
    let jobs: Vec<Arc<Tree>> = (1..=k_max.min(set.k_max()))
        .flat_map(|k| {
            set.roots(k)
                .into_iter()
                .flat_map(move |(j, nu)| set.trees(k, j, &nu).to_vec())
        })
        .collect();
    let parts: Vec<CountingReport> = jobs
        .par_iter()
        .map(|t| {
            let g = Graph::from_tree(t, ctx);
            let mut r = CountingReport {
                trees: 1,
                min_slack: f64::INFINITY,
                ..Default::default()
            };
            for lab in renormalized_labelings(&g, scales, ctx.lambda0) {
                let (ok, slack) = counting_bound_check(&g, &lab);
                r.labelings += 1;
                r.violations += usize::from(!ok);
                r.min_slack = r.min_slack.min(slack);
            }
            r
        })
        .collect();
    parts.into_iter().fold(
        CountingReport {
            min_slack: f64::INFINITY,
            ..Default::default()
        },
        |mut a, b| {
            a.trees += b.trees;
            a.labelings += b.labelings;
            a.violations += b.violations;
            a.min_slack = a.min_slack.min(b.min_slack);
            a
        },
    )
}

/// M^[n]_1(0) against -M^[n]_2(-2 lambda0), bare values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SymmetryRow {
    pub n: usize,
    pub m1_at_zero: f64,
    pub m2_at_minus: f64,
    /// (1/2) sum of |V_T| over the contributing clusters.
    pub scale: f64,
    pub clusters: usize,
    /// |M1(0) + M2(-2 lambda0)| / scale.
    pub symmetry_defect: f64,
    /// max(|M1(0)|, |M2(-2 lambda0)|) / scale.
    pub vanishing_defect: f64,
    /// max |Im| / max(1, |M|) of the two values.
    pub imag_defect: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ShiftReport {
    pub second_kind: usize,
    pub labelings: usize,
    /// Second-kind clusters outside the domain of the shift construction,
    /// by reason.
    pub excluded: std::collections::BTreeMap<String, usize>,
    /// Excluded clusters with a nonzero renormalized value at x = 0.
    pub excluded_nonzero: usize,
    /// max |V_T'(x) - V_T''(x)| / |V_T(0)|.
    pub max_pair_defect: f64,
    /// max |V_T'(0) + V_T''(0) + V_T(0)| / |V_T(0)|.
    pub max_sum_defect: f64,
}

/// One entry of a self-energy table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub n: usize,
    pub j: u8,
    pub x: f64,
    pub re: f64,
    pub im: f64,
}

impl Renormalizer {
    pub fn symmetry_rows(&self) -> Result<Vec<SymmetryRow>> {
        let minus = -2.0 * self.lambda0();
        let mut rows = Vec::new();
        for n in 1..=self.scales.n_max {
            let mut scale: f64 = 0.0;
            let mut count = 0;
            for (j, x) in [(1u8, 0.0), (2, minus)] {
                let mut s = 0.0;
                for (i, lab) in self.labeled_clusters(j, n as i32 - 1, x) {
                    s += 0.5 * self.self_energy_value(&self.shapes(j)[i], &lab, x)?.norm();
                    count += 1;
                }
                scale = scale.max(s);
            }
            let a = self.m_bare(n, 1, 0.0)?;
            let b = self.m_bare(n, 2, minus)?;
            let rel = |v: f64| if scale > 0.0 { v / scale } else { v };
            rows.push(SymmetryRow {
                n,
                m1_at_zero: a.re,
                m2_at_minus: b.re,
                scale,
                clusters: count,
                symmetry_defect: rel((a + b).norm()),
                vanishing_defect: rel(a.norm().max(b.norm())),
                imag_defect: (a.im.abs() / a.norm().max(1.0)).max(b.im.abs() / b.norm().max(1.0)),
            });
        }
        Ok(rows)
    }

    /// Shift identities over every second-kind cluster of component 1 and
    /// every renormalized labeling of it at x = 0, with V_T' = V_T'' also
    /// compared at the points `xs`.
    pub fn shift_report(&self, k_max: usize, xs: &[f64]) -> Result<ShiftReport> {
        let mut r = ShiftReport::default();
        for c in self
            .shapes(1)
            .iter()
            .filter(|c| c.k <= k_max && !c.tree.is_first_kind())
        {
            r.second_kind += 1;
            let mut labs = Vec::new();
            for_each_labeling(&self.cluster_options(c, 0.0), |lab| {
                let m = lab.iter().copied().filter(|&n| n != EXTERNAL).max().unwrap_or(-1);
                if m >= 0 && self.is_renormalized_cluster(c, lab, m) {
                    labs.push(lab.to_vec());
                }
            });
            let (t1, t2) = match self.shift_partners(c) {
                Ok(p) => p,
                Err(Error::Domain(why)) => {
                    *r.excluded.entry(why).or_default() += 1;
                    for lab in &labs {
                        if self.graph_value(&c.graph, lab, 0.0)?.norm() != 0.0 {
                            r.excluded_nonzero += 1;
                            break;
                        }
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            let g1 = Graph::from_hole_tree(&t1, &self.ctx);
            let g2 = Graph::from_hole_tree(&t2, &self.ctx);
            for lab in labs {
                r.labelings += 1;
                let v = self.graph_value(&c.graph, &lab, 0.0)?;
                if v.norm() == 0.0 {
                    continue;
                }
                let (l1, l2) = (self.partner_labels(c, &g1, &lab), self.partner_labels(c, &g2, &lab));
                let v1 = self.graph_value(&g1, &l1, 0.0)?;
                let v2 = self.graph_value(&g2, &l2, 0.0)?;
                r.max_sum_defect = r.max_sum_defect.max((v1 + v2 + v).norm() / v.norm());
                for &x in xs {
                    let d = self.graph_value(&g1, &l1, x)? - self.graph_value(&g2, &l2, x)?;
                    r.max_pair_defect = r.max_pair_defect.max(d.norm() / v.norm());
                }
            }
        }
        Ok(r)
    }

    /// max over roots (j, nu) of orders <= k_max of
    /// |sum_k eps^k u^[k]_{j,nu} - sum_k eps^k u^(k)_{j,nu}|, which is
    /// O(eps^{k_max + 1}) when every line lies above the deepest window.
    pub fn resummation_defect(&self, k_max: usize) -> Result<f64> {
        let mut roots = BTreeSet::new();
        for k in 1..=k_max.min(self.trees.k_max()) {
            roots.extend(self.trees.roots(k));
        }
        let mut worst: f64 = 0.0;
        for (j, nu) in &roots {
            let mut d = C64::default();
            for k in 1..=k_max.min(self.trees.k_max()) {
                let e = self.eps.powi(k as i32);
                d += e
                    * (self.renorm_coefficient(k, *j, nu)?
                        - crate::trees::tree_sum(&self.trees, k, *j, nu, &self.ctx)?);
            }
            worst = worst.max(d.norm());
        }
        Ok(worst)
    }

    /// Smallest Delta0 over nonzero line momenta of trees of order <= k_max,
    /// divided by the deepest fully covered Delta0.
    pub fn coverage_margin(&self, k_max: usize) -> f64 {
        let mut m = f64::INFINITY;
        for k in 1..=k_max.min(self.trees.k_max()) {
            for (j, nu) in self.trees.roots(k) {
                for t in self.trees.trees(k, j, &nu) {
                    for l in Graph::from_tree(t, &self.ctx)
                        .lines
                        .iter()
                        .filter(|l| !l.zero_momentum())
                    {
                        m = m.min(delta0(l.nu.dot(&self.ctx.omega), self.lambda0()));
                    }
                }
            }
        }
        m / self.scales.deepest_full()
    }

    /// M^[<=n]_j at the given points for n = 0..=n_max.
    pub fn table_rows(&self, points: &[(u8, f64)]) -> Result<Vec<TableRow>> {
        let mut out = Vec::new();
        for &(j, x) in points {
            for n in 0..=self.scales.n_max {
                let m = self.m_upto(n, j, x)?;
                out.push(TableRow {
                    n,
                    j,
                    x,
                    re: m.re,
                    im: m.im,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::golden_sparse;

    fn golden() -> Vec<f64> {
        vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
    }

    fn rich(eps: f64) -> Renormalizer {
        let scales = ScaleSystem::new(&golden(), 6, 0.25).unwrap();
        let ctx = Context::new(crate::io::golden_rich(), &golden(), 0.7);
        Renormalizer::new(ctx, scales, eps, 3).unwrap()
    }

    #[test]
    fn zero_scale_table_entries() {
        let r = rich(1e-3);
        for x in [0.3, -0.01, 1.7] {
            assert_eq!(r.m_upto(0, 1, x).unwrap(), C64::default());
            assert_eq!(r.m_upto(0, 2, x).unwrap(), C64::new(0.7, 0.0));
        }
        let y = 0.4;
        let g0 = r.g_renorm(0, 1, y).unwrap();
        let expect = -I * r.scales.support_product(y, 0, 0.7) / y;
        assert!((g0 - expect).norm() < 1e-15);
    }

    #[test]
    fn scale_minus_one_pair_cancels() {
        let r = rich(1e-3);
        for j in [1, 2] {
            assert!(r.scale_minus_one_sum(j).unwrap().norm() <= 1e-14);
        }
        // The two members are individually nonzero.
        let mu1 = r.renorm_coefficient(1, 3, &Nu::zero(2)).unwrap();
        assert!((mu1 - I * r.ctx.g.f(1, 1, &Nu::zero(2))).norm() < 1e-15);
        assert!(mu1.norm() > 0.1);
    }

    #[test]
    fn precondition_rejects_zero_mode_offdiagonal() {
        let mut s = crate::io::golden_sparse().series().clone();
        let z = C64::default();
        s.coeffs.insert(
            Nu::zero(2),
            crate::model::CMat::new(z, C64::new(0.1, 0.0), C64::new(0.1, 0.0), z),
        );
        let g = crate::model::ComplexMatrixField::new(s).unwrap();
        let scales = ScaleSystem::new(&golden(), 6, 0.25).unwrap();
        assert!(Renormalizer::new(Context::new(g, &golden(), 0.7), scales, 1e-3, 3).is_err());
    }

    #[test]
    fn symmetry_and_vanishing_at_special_points() {
        let r = rich(1e-3);
        let rows = r.symmetry_rows().unwrap();
        assert!(rows.iter().filter(|row| row.clusters > 0).count() >= 3);
        for row in rows {
            assert!(row.symmetry_defect <= 1e-8, "{row:?}");
            assert!(row.vanishing_defect <= 1e-8, "{row:?}");
            assert!(row.imag_defect <= 1e-9, "{row:?}");
        }
    }

    #[test]
    fn shift_identities() {
        let r = rich(1e-3);
        let rep = r.shift_report(3, &[0.0, 0.004, -0.02]).unwrap();
        assert!(rep.labelings > 0);
        assert_eq!(rep.excluded_nonzero, 0);
        assert!(rep.max_pair_defect <= 1e-12 && rep.max_sum_defect <= 1e-12, "{rep:?}");
    }

    #[test]
    fn first_kind_has_no_partners() {
        let r = rich(1e-3);
        let c = r.shapes(1).iter().find(|c| c.tree.is_first_kind()).unwrap();
        assert!(matches!(r.shift_partners(c), Err(Error::Domain(_))));
        let c = r.shapes(1).iter().find(|c| r.shift_partners(c).is_ok()).unwrap();
        let (t1, _) = r.shift_partners(c).unwrap();
        let shape = ClusterShape {
            graph: Graph::from_hole_tree(&t1, &r.ctx),
            tree: t1,
            j: 1,
            k: c.k,
        };
        assert!(r.shift_partners(&shape).is_err());
    }

    #[test]
    fn resummation_preserves_low_orders() {
        let r1 = rich(1e-3);
        assert!(r1.coverage_margin(3) > 1.0);
        let d1 = r1.resummation_defect(3).unwrap();
        let d2 = rich(5e-4).resummation_defect(3).unwrap();
        let ratio = d1 / d2;
        assert!((12.0..20.0).contains(&ratio), "{d1:e} {d2:e}");
    }

    #[test]
    fn first_order_departs_at_higher_order() {
        let (r1, r2) = (rich(1e-3), rich(5e-4));
        for (j, nu) in r1.trees.roots(1) {
            let b = crate::trees::tree_sum(&r1.trees, 1, j, &nu, &r1.ctx).unwrap();
            let d1 = (r1.renorm_coefficient(1, j, &nu).unwrap() - b).norm();
            let d2 = (r2.renorm_coefficient(1, j, &nu).unwrap() - b).norm();
            if d1 > 1e-12 {
                assert!((3.5..4.5).contains(&(d1 / d2)), "{j} {nu} {d1:e} {d2:e}");
            } else {
                assert!(d2 <= 1e-12);
            }
        }
    }

    #[test]
    fn denominators_respect_lower_bound() {
        let r = rich(1e-3);
        r.symmetry_rows().unwrap();
        r.resummation_defect(2).unwrap();
        assert!(r.diagnostics().worst_denominator_ratio >= 0.5);
    }

    #[test]
    fn minimal_counting_case_is_tight() {
        let ctx = Context::new(golden_sparse(), &golden(), 0.7);
        let t = Tree::Endpoint {
            j: 2,
            nu: Nu::new(&[-1, 0]),
        };
        let g = Graph::from_tree(&t, &ctx);
        let (ok, slack) = counting_bound_check(&g, &[0]);
        assert!(ok);
        assert_eq!(slack, 0.0);
    }

    #[test]
    fn same_scale_tree_has_no_self_energy() {
        let ctx = Context::new(golden_sparse(), &golden(), 0.7);
        let set = TreeSet::build(&ctx.g, 3, TREE_BUDGET).unwrap();
        for (j, nu) in set.roots(3) {
            for t in set.trees(3, j, &nu) {
                let g = Graph::from_tree(t, &ctx);
                let lab: Vec<i32> = g.lines.iter().map(|l| if l.zero_momentum() { -1 } else { 0 }).collect();
                let found = clusters(&g, &lab, 0..=0);
                assert!(found.iter().all(|c| !c.self_energy));
            }
        }
    }
}
