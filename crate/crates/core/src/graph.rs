//! Maximal monotone M-graphs `A(t,x) in R^d x R^d`, selections, and the two
//! mollification routes.
//!
//! Three representations cover the discontinuous constitutive laws of
//! interest: subdifferentials of convex potentials, radial profiles
//! `A in a(|xi|) xi/|xi|` with jump intervals, and tabulated 1-d relations
//! with vertical segments and optional domain gaps. A selection picks one
//! value per argument; mollifying it against an even bump in the gradient
//! argument (direct route), or mollifying an inverse selection and adding
//! `eps Id` before inverting (inverse route), produces the single-valued
//! continuous monotone maps the Galerkin layer needs.

use crate::conjugate::ConjugateApprox;
use crate::domain::{dot, norm, Vec2};
use crate::error::{Error, Result};
use crate::expr::{Expr, Vars};
use crate::mollify::{Kernel, Stencil};
use crate::nfunc::NFunction;
use crate::report::{AxiomCheck, AxiomReport, Verdict};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Value set of a graph at one gradient argument.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueSet {
    Point(Vec2),
    Segment(Vec2, Vec2),
    /// Ball centered at the origin (the segment `[-r, r]` in 1-d).
    Ball(f64),
    /// Argument outside the relation's domain (tabulated gaps).
    Empty,
}

impl ValueSet {
    pub fn distance(&self, v: &Vec2, d: usize) -> f64 {
        match self {
            ValueSet::Point(p) => {
                let diff = [v[0] - p[0], v[1] - p[1]];
                norm(&diff, d)
            }
            ValueSet::Segment(p, q) => {
                let pq = [q[0] - p[0], q[1] - p[1]];
                let pv = [v[0] - p[0], v[1] - p[1]];
                let len2 = dot(&pq, &pq, d);
                let t = if len2 > 0.0 {
                    (dot(&pv, &pq, d) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let c = [p[0] + t * pq[0], p[1] + t * pq[1]];
                let diff = [v[0] - c[0], v[1] - c[1]];
                norm(&diff, d)
            }
            ValueSet::Ball(r) => (norm(v, d) - r).max(0.0),
            ValueSet::Empty => f64::INFINITY,
        }
    }

    pub fn contains(&self, v: &Vec2, d: usize, tol: f64) -> bool {
        self.distance(v, d) <= tol
    }

    /// Element of least norm; the default selection rule.
    pub fn minimal_norm(&self, d: usize) -> Option<Vec2> {
        match self {
            ValueSet::Point(p) => Some(*p),
            ValueSet::Segment(p, q) => {
                let pq = [q[0] - p[0], q[1] - p[1]];
                let len2 = dot(&pq, &pq, d);
                let t = if len2 > 0.0 {
                    (-dot(p, &pq, d) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                Some([p[0] + t * pq[0], p[1] + t * pq[1]])
            }
            ValueSet::Ball(_) => Some([0.0, 0.0]),
            ValueSet::Empty => None,
        }
    }

    pub fn midpoint(&self, _d: usize) -> Option<Vec2> {
        match self {
            ValueSet::Point(p) => Some(*p),
            ValueSet::Segment(p, q) => Some([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0]),
            ValueSet::Ball(_) => Some([0.0, 0.0]),
            ValueSet::Empty => None,
        }
    }

    /// Finite scan set: endpoints and center for segments, axis points for
    /// balls. Used by the axiom and inclusion sample plans.
    pub fn representatives(&self, d: usize) -> Vec<Vec2> {
        match self {
            ValueSet::Point(p) => vec![*p],
            ValueSet::Segment(p, q) => {
                vec![*p, *q, [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0]]
            }
            ValueSet::Ball(r) => {
                let mut out = vec![[0.0; 2], [*r, 0.0], [-*r, 0.0]];
                if d == 2 {
                    out.push([0.0, *r]);
                    out.push([0.0, -*r]);
                }
                out
            }
            ValueSet::Empty => vec![],
        }
    }

    fn scale(&self, g: f64) -> ValueSet {
        match self {
            ValueSet::Point(p) => ValueSet::Point([g * p[0], g * p[1]]),
            ValueSet::Segment(p, q) => {
                ValueSet::Segment([g * p[0], g * p[1]], [g * q[0], g * q[1]])
            }
            ValueSet::Ball(r) => ValueSet::Ball(g * r),
            ValueSet::Empty => ValueSet::Empty,
        }
    }
}

/// One breakpoint of a radial profile: value interval `[lo, hi]` at `s`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RadialNode {
    pub s: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Nondecreasing piecewise-linear `a(s)`, `s >= 0`, with jump intervals at
/// the nodes; the value set at `xi = 0` is `ball(0, a(0+))`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialMonotone {
    pub nodes: Vec<RadialNode>,
    pub tail_slope: f64,
}

impl RadialMonotone {
    pub fn new(nodes: Vec<RadialNode>, tail_slope: f64) -> Result<Self> {
        if nodes.is_empty() || nodes[0].s != 0.0 {
            return Err(Error::Parameter("radial profile must start at s = 0".into()));
        }
        if !(tail_slope >= 0.0) {
            return Err(Error::Parameter("tail slope must be non-negative".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if !(n.lo >= 0.0 && n.hi >= n.lo) {
                return Err(Error::Parameter(format!(
                    "node {i}: need 0 <= lo <= hi, got [{}, {}]",
                    n.lo, n.hi
                )));
            }
            if i + 1 < nodes.len() {
                let next = &nodes[i + 1];
                if next.s <= n.s {
                    return Err(Error::Parameter("node abscissae must increase".into()));
                }
                if next.lo < n.hi {
                    return Err(Error::Parameter(format!(
                        "profile decreases between nodes {i} and {}",
                        i + 1
                    )));
                }
            }
        }
        Ok(RadialMonotone { nodes, tail_slope })
    }

    /// `a(s) = s`.
    pub fn identity() -> Self {
        RadialMonotone {
            nodes: vec![RadialNode { s: 0.0, lo: 0.0, hi: 0.0 }],
            tail_slope: 1.0,
        }
    }

    /// Identity plus the jump `[-1,1]` at the origin: `a(s) = 1 + s`.
    pub fn sign_jump_identity() -> Self {
        RadialMonotone {
            nodes: vec![RadialNode { s: 0.0, lo: 0.0, hi: 1.0 }],
            tail_slope: 1.0,
        }
    }

    /// Value interval of `a` at `s > 0`.
    fn value(&self, s: f64) -> (f64, f64) {
        let n = &self.nodes;
        let last = n.len() - 1;
        if s >= n[last].s {
            if s == n[last].s && last > 0 {
                return (n[last].lo, n[last].hi);
            }
            let v = n[last].hi + self.tail_slope * (s - n[last].s);
            return (v, v);
        }
        for i in 0..last {
            if s == n[i].s {
                return (n[i].lo, n[i].hi);
            }
            if s < n[i + 1].s && s > n[i].s {
                let w = (s - n[i].s) / (n[i + 1].s - n[i].s);
                let v = n[i].hi + w * (n[i + 1].lo - n[i].hi);
                return (v, v);
            }
        }
        (n[0].lo, n[0].hi)
    }

    /// Swap the roles of `s` and `a`: jumps become flats and flats become
    /// jumps. Fails when the tail is flat (the inverse would not cover all
    /// of `R^d`) or when the profile does not pass through the origin.
    pub fn inverse(&self) -> Result<RadialMonotone> {
        if self.tail_slope <= 0.0 {
            return Err(Error::Parameter(
                "flat tail is not invertible; inverse selection undefined for large arguments"
                    .into(),
            ));
        }
        if self.nodes[0].lo != 0.0 {
            return Err(Error::Parameter(
                "profile must pass through the origin to invert".into(),
            ));
        }
        let mut inv: Vec<RadialNode> = Vec::new();
        fn push(inv: &mut Vec<RadialNode>, a: f64, s_lo: f64, s_hi: f64) {
            if let Some(last) = inv.last_mut() {
                if (last.s - a).abs() < 1e-15 {
                    last.lo = last.lo.min(s_lo);
                    last.hi = last.hi.max(s_hi);
                    return;
                }
            }
            inv.push(RadialNode { s: a, lo: s_lo, hi: s_hi });
        }
        for (i, nd) in self.nodes.iter().enumerate() {
            push(&mut inv, nd.lo, nd.s, nd.s);
            if nd.hi > nd.lo {
                push(&mut inv, nd.hi, nd.s, nd.s);
            }
            if i + 1 < self.nodes.len() {
                let next = &self.nodes[i + 1];
                if (next.lo - nd.hi).abs() < 1e-15 {
                    // flat stretch of a: jump of the inverse at a = hi
                    push(&mut inv, nd.hi, nd.s, next.s);
                }
            }
        }
        RadialMonotone::new(inv, 1.0 / self.tail_slope)
    }
}

/// One breakpoint of a tabulated 1-d relation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TabNode {
    pub xi: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Sorted breakpoints with vertical segments; `connected[i]` marks whether
/// the linear piece between node `i` and `i+1` belongs to the relation
/// (false leaves a domain gap).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tabulated1d {
    pub nodes: Vec<TabNode>,
    pub connected: Vec<bool>,
    pub head_slope: f64,
    pub tail_slope: f64,
}

impl Tabulated1d {
    pub fn new(
        nodes: Vec<TabNode>,
        connected: Vec<bool>,
        head_slope: f64,
        tail_slope: f64,
    ) -> Result<Self> {
        if nodes.is_empty() || connected.len() + 1 != nodes.len() {
            return Err(Error::Parameter(
                "tabulated relation needs n nodes and n-1 connection flags".into(),
            ));
        }
        if !(head_slope >= 0.0) || !(tail_slope >= 0.0) {
            return Err(Error::Parameter("extrapolation slopes must be >= 0".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.hi < n.lo {
                return Err(Error::Parameter(format!("node {i}: hi < lo")));
            }
            if i + 1 < nodes.len() {
                if nodes[i + 1].xi <= n.xi {
                    return Err(Error::Parameter("breakpoints must increase".into()));
                }
                if nodes[i + 1].lo < n.hi {
                    return Err(Error::Parameter("relation must be monotone".into()));
                }
            }
        }
        Ok(Tabulated1d {
            nodes,
            connected,
            head_slope,
            tail_slope,
        })
    }

    fn value_set(&self, xi: f64) -> ValueSet {
        let n = &self.nodes;
        if xi < n[0].xi {
            let v = n[0].lo - self.head_slope * (n[0].xi - xi);
            return ValueSet::Point([v, 0.0]);
        }
        if xi > n[n.len() - 1].xi {
            let last = &n[n.len() - 1];
            return ValueSet::Point([last.hi + self.tail_slope * (xi - last.xi), 0.0]);
        }
        for (i, nd) in n.iter().enumerate() {
            if xi == nd.xi {
                return if nd.lo == nd.hi {
                    ValueSet::Point([nd.lo, 0.0])
                } else {
                    ValueSet::Segment([nd.lo, 0.0], [nd.hi, 0.0])
                };
            }
            if i + 1 < n.len() && xi > nd.xi && xi < n[i + 1].xi {
                if !self.connected[i] {
                    return ValueSet::Empty;
                }
                let w = (xi - nd.xi) / (n[i + 1].xi - nd.xi);
                return ValueSet::Point([nd.hi + w * (n[i + 1].lo - nd.hi), 0.0]);
            }
        }
        ValueSet::Empty
    }
}

type PotentialClosure = dyn Fn(&Vec2, &Vec2, usize) -> f64 + Send + Sync;

/// Convex potential whose subdifferential supplies the graph; single-valued
/// where differentiable, evaluated by central differences.
#[derive(Clone)]
pub struct Potential {
    pub expr: Option<Expr>,
    f: Arc<PotentialClosure>,
}

impl std::fmt::Debug for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.expr {
            Some(e) => write!(f, "potential({e})"),
            None => write!(f, "potential(<closure>)"),
        }
    }
}

impl Potential {
    pub fn from_expr(expr: Expr) -> Self {
        let e = expr.clone();
        Potential {
            expr: Some(expr),
            f: Arc::new(move |x, a, d| {
                e.eval(&Vars::spatial(&x[..d]).with_arg(&a[..d]))
            }),
        }
    }

    pub fn from_fn(f: impl Fn(&Vec2, &Vec2, usize) -> f64 + Send + Sync + 'static) -> Self {
        Potential {
            expr: None,
            f: Arc::new(f),
        }
    }

    fn grad(&self, x: &Vec2, a: &Vec2, d: usize) -> Vec2 {
        let h = 1e-6 * (1.0 + norm(a, d));
        let mut g = [0.0; 2];
        for i in 0..d {
            let mut ap = *a;
            let mut am = *a;
            ap[i] += h;
            am[i] -= h;
            g[i] = ((self.f)(x, &ap, d) - (self.f)(x, &am, d)) / (2.0 * h);
        }
        g
    }
}

#[derive(Clone, Debug)]
pub enum GraphKind {
    Potential(Potential),
    Radial(RadialMonotone),
    Tabulated(Tabulated1d),
}

/// A possibly multi-valued monotone relation with an optional positive
/// space-time scaling of its outputs.
#[derive(Clone, Debug)]
pub struct MonotoneGraph {
    pub dim: usize,
    pub kind: GraphKind,
    pub gamma: Option<Expr>,
}

impl MonotoneGraph {
    pub fn new(dim: usize, kind: GraphKind) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::Parameter("graph dimension must be 1 or 2".into()));
        }
        if matches!(kind, GraphKind::Tabulated(_)) && dim != 1 {
            return Err(Error::Parameter("tabulated relations are 1-d".into()));
        }
        Ok(MonotoneGraph {
            dim,
            kind,
            gamma: None,
        })
    }

    pub fn identity(dim: usize) -> Self {
        MonotoneGraph {
            dim,
            kind: GraphKind::Radial(RadialMonotone::identity()),
            gamma: None,
        }
    }

    pub fn with_gamma(mut self, gamma: Expr) -> Self {
        self.gamma = Some(gamma);
        self
    }

    fn gamma_at(&self, t: f64, x: &Vec2) -> Result<f64> {
        match &self.gamma {
            None => Ok(1.0),
            Some(g) => {
                let v = g.eval(&Vars::space_time(t, &x[..self.dim]));
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Input(format!(
                        "scaling field gamma({t}, {x:?}) = {v} must be positive"
                    )));
                }
                Ok(v)
            }
        }
    }

    /// Exact value set at `(t, x, xi)`: a point, the full jump segment, or
    /// the ball at the radial origin.
    pub fn elements(&self, t: f64, x: &Vec2, xi: &Vec2) -> Result<ValueSet> {
        let d = self.dim;
        if !xi[..d].iter().all(|c| c.is_finite()) {
            return Err(Error::Input("non-finite gradient argument".into()));
        }
        let g = self.gamma_at(t, x)?;
        let set = match &self.kind {
            GraphKind::Potential(p) => ValueSet::Point(p.grad(x, xi, d)),
            GraphKind::Radial(r) => {
                let s = norm(xi, d);
                if s == 0.0 {
                    ValueSet::Ball(r.nodes[0].hi)
                } else {
                    let (lo, hi) = r.value(s);
                    let u = [xi[0] / s, xi[1] / s];
                    if lo == hi {
                        ValueSet::Point([lo * u[0], lo * u[1]])
                    } else {
                        ValueSet::Segment([lo * u[0], lo * u[1]], [hi * u[0], hi * u[1]])
                    }
                }
            }
            GraphKind::Tabulated(tab) => tab.value_set(xi[0]),
        };
        Ok(set.scale(g))
    }

    /// The relation with the roles of `xi` and `A` swapped (radial only).
    pub fn inverse(&self) -> Result<MonotoneGraph> {
        match &self.kind {
            GraphKind::Radial(r) => Ok(MonotoneGraph {
                dim: self.dim,
                kind: GraphKind::Radial(r.inverse()?),
                gamma: self.gamma.clone(),
            }),
            _ => Err(Error::Parameter(
                "inverse route is implemented for radial graphs".into(),
            )),
        }
    }

    /// Sorted argument breakpoints of a 1-d piecewise-linear relation;
    /// `None` for potentials (smooth but not piecewise linear) and in 2-d.
    fn breakpoints_1d(&self) -> Option<Vec<f64>> {
        if self.dim != 1 {
            return None;
        }
        let mut b: Vec<f64> = match &self.kind {
            GraphKind::Radial(r) => r
                .nodes
                .iter()
                .flat_map(|n| if n.s == 0.0 { vec![0.0] } else { vec![n.s, -n.s] })
                .collect(),
            GraphKind::Tabulated(t) => t.nodes.iter().map(|n| n.xi).collect(),
            GraphKind::Potential(_) => return None,
        };
        b.sort_by(f64::total_cmp);
        b.dedup();
        Some(b)
    }
}

type SelectionClosure = dyn Fn(f64, &Vec2, &Vec2) -> Vec2 + Send + Sync;

#[derive(Clone)]
pub enum SelectionRule {
    /// Least-norm element (ball centers, projected origin on segments).
    MinimalNorm,
    Midpoint,
    Custom(Arc<SelectionClosure>),
}

impl std::fmt::Debug for SelectionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionRule::MinimalNorm => write!(f, "minimal_norm"),
            SelectionRule::Midpoint => write!(f, "midpoint"),
            SelectionRule::Custom(_) => write!(f, "custom"),
        }
    }
}

/// Single-valued map `(t,x,xi) -> A` with `(xi, A)` in the graph.
#[derive(Clone, Debug)]
pub struct Selection {
    pub graph: MonotoneGraph,
    pub rule: SelectionRule,
}

impl Selection {
    pub fn new(graph: MonotoneGraph, rule: SelectionRule) -> Self {
        Selection { graph, rule }
    }

    pub fn eval(&self, t: f64, x: &Vec2, xi: &Vec2) -> Result<Vec2> {
        if let SelectionRule::Custom(f) = &self.rule {
            return Ok(f(t, x, xi));
        }
        let set = self.graph.elements(t, x, xi)?;
        let picked = match self.rule {
            SelectionRule::MinimalNorm => set.minimal_norm(self.graph.dim),
            SelectionRule::Midpoint => set.midpoint(self.graph.dim),
            SelectionRule::Custom(_) => unreachable!(),
        };
        picked.ok_or_else(|| {
            Error::Input(format!(
                "selection undefined at xi = {xi:?}: the relation has a domain gap there"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Direct,
    Inverse,
}

/// Continuous monotone regularization of a selection.
///
/// Direct route: `A_eps(xi) = sum_j w_j A~(xi + eps y_j)` against the even
/// stencil (kernel mass renormalized to one, so the identity graph is a
/// fixed point up to rounding).
///
/// Inverse route: solve `sum_j w_j xi~(A + eps y_j) + eps A = xi` for `A`;
/// the `eps Id` part makes the map strictly monotone, hence single-valued.
#[derive(Clone, Debug)]
pub struct MollifiedSelection {
    pub base: Selection,
    pub eps: f64,
    pub route: Route,
    pub quad_points: usize,
    pub tol_inv: f64,
    stencil: Stencil,
    inverse_selection: Option<Selection>,
    /// Exact segment-convolution tables, used whenever the relation is
    /// 1-d piecewise linear; the moving stencil would otherwise turn jump
    /// graphs into staircases in `xi` and stall the Galerkin fixed point.
    cdf: Option<crate::mollify::KernelCdf>,
}

impl MollifiedSelection {
    pub fn direct(base: Selection, eps: f64, kernel: &Kernel) -> Result<Self> {
        Self::with_route(base, eps, kernel, Route::Direct, 33)
    }

    pub fn inverse(base: Selection, eps: f64, kernel: &Kernel) -> Result<Self> {
        Self::with_route(base, eps, kernel, Route::Inverse, 33)
    }

    pub fn with_route(
        base: Selection,
        eps: f64,
        kernel: &Kernel,
        route: Route,
        quad_points: usize,
    ) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Parameter("mollification eps must be positive".into()));
        }
        if kernel.dim != base.graph.dim {
            return Err(Error::Parameter("kernel/graph dimension mismatch".into()));
        }
        let inverse_selection = match route {
            Route::Direct => None,
            Route::Inverse => Some(Selection::new(base.graph.inverse()?, base.rule.clone())),
        };
        // exact-convolution path: 1-d piecewise-linear relation with a
        // rule that reduces to the graph value off the breakpoints
        let analytic_ok = !matches!(base.rule, SelectionRule::Custom(_))
            && match route {
                Route::Direct => base.graph.breakpoints_1d().is_some(),
                Route::Inverse => inverse_selection
                    .as_ref()
                    .is_some_and(|s| s.graph.breakpoints_1d().is_some()),
            };
        let cdf = analytic_ok.then(|| crate::mollify::KernelCdf::build(4096));
        Ok(MollifiedSelection {
            base,
            eps,
            route,
            quad_points,
            tol_inv: 1e-13,
            stencil: kernel.stencil(quad_points),
            inverse_selection,
            cdf,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.graph.dim
    }

    pub fn eval(&self, t: f64, x: &Vec2, xi: &Vec2) -> Result<Vec2> {
        match self.route {
            Route::Direct => self.eval_direct(t, x, xi),
            Route::Inverse => self.eval_inverse(t, x, xi),
        }
    }

    fn eval_direct(&self, t: f64, x: &Vec2, xi: &Vec2) -> Result<Vec2> {
        if let Some(cdf) = &self.cdf {
            let v = self.convolve_exact(&self.base, cdf, t, x, xi[0])?;
            return Ok([v, 0.0]);
        }
        let d = self.dim();
        let mut acc = [0.0; 2];
        for (y, w) in self.stencil.offsets.iter().zip(&self.stencil.weights) {
            let z = [xi[0] + self.eps * y[0], xi[1] + self.eps * y[1]];
            let a = self.base.eval(t, x, &z)?;
            for i in 0..d {
                acc[i] += w * a[i];
            }
        }
        Ok(acc)
    }

    /// `integral A~(xi + eps y) S(y) dy` done segmentwise: between graph
    /// breakpoints the selection is affine, so each piece contributes
    /// `(alpha + beta xi) dF + beta eps dM1` from the cumulative tables.
    fn convolve_exact(
        &self,
        sel: &Selection,
        cdf: &crate::mollify::KernelCdf,
        t: f64,
        x: &Vec2,
        xi: f64,
    ) -> Result<f64> {
        let eps = self.eps;
        let breaks = sel
            .graph
            .breakpoints_1d()
            .expect("analytic path requires breakpoints");
        let mut cuts = vec![xi - eps];
        for b in breaks {
            if b > xi - eps && b < xi + eps {
                cuts.push(b);
            }
        }
        cuts.push(xi + eps);
        let mut acc = 0.0;
        for pair in cuts.windows(2) {
            let (zl, zr) = (pair[0], pair[1]);
            let width = zr - zl;
            if width <= 0.0 {
                continue;
            }
            // two interior probes pin the affine piece
            let p1 = zl + width / 3.0;
            let p2 = zr - width / 3.0;
            let v1 = sel.eval(t, x, &[p1, 0.0])?[0];
            let v2 = sel.eval(t, x, &[p2, 0.0])?[0];
            let beta = (v2 - v1) / (p2 - p1);
            let alpha = v1 - beta * p1;
            let yl = (zl - xi) / eps;
            let yr = (zr - xi) / eps;
            let df = cdf.cdf(yr) - cdf.cdf(yl);
            let dm = cdf.first_moment(yr) - cdf.first_moment(yl);
            acc += (alpha + beta * xi) * df + beta * eps * dm;
        }
        Ok(acc)
    }

    /// `xi_eps(A) = (xi~ * S_eps)(A) + eps A`.
    fn xi_eps(&self, t: f64, x: &Vec2, a: &Vec2) -> Result<Vec2> {
        let sel = self.inverse_selection.as_ref().expect("inverse route");
        let d = self.dim();
        if let Some(cdf) = &self.cdf {
            let v = self.convolve_exact(sel, cdf, t, x, a[0])?;
            return Ok([v + self.eps * a[0], 0.0]);
        }
        let mut acc = [0.0; 2];
        for (y, w) in self.stencil.offsets.iter().zip(&self.stencil.weights) {
            let z = [a[0] + self.eps * y[0], a[1] + self.eps * y[1]];
            let v = sel.eval(t, x, &z)?;
            for i in 0..d {
                acc[i] += w * v[i];
            }
        }
        for i in 0..d {
            acc[i] += self.eps * a[i];
        }
        Ok(acc)
    }

    fn eval_inverse(&self, t: f64, x: &Vec2, xi: &Vec2) -> Result<Vec2> {
        let d = self.dim();
        let scale = 1.0 + norm(xi, d);
        if d == 1 {
            // strictly increasing scalar map: expanding bracket + bisection
            let g = |a: f64| -> Result<f64> { Ok(self.xi_eps(t, x, &[a, 0.0])?[0]) };
            let target = xi[0];
            let mut lo = -1.0 - target.abs() / self.eps;
            let mut hi = 1.0 + target.abs() / self.eps;
            let mut guard = 0;
            while g(lo)? > target {
                lo *= 2.0;
                guard += 1;
                if guard > 80 {
                    return Err(Error::Convergence("bracket expansion failed (low)".into()));
                }
            }
            while g(hi)? < target {
                hi *= 2.0;
                guard += 1;
                if guard > 160 {
                    return Err(Error::Convergence("bracket expansion failed (high)".into()));
                }
            }
            let mut iter = 0;
            while hi - lo > self.tol_inv * scale && iter < 200 {
                let mid = 0.5 * (lo + hi);
                if g(mid)? < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                iter += 1;
            }
            return Ok([0.5 * (lo + hi), 0.0]);
        }
        // damped fixed point; strict monotonicity of xi_eps guarantees a
        // contraction for small enough steps
        let mut a = [xi[0] / (1.0 + self.eps), xi[1] / (1.0 + self.eps)];
        let mut tau = 0.5 / (1.0 + self.eps);
        let mut res_prev = f64::INFINITY;
        for _ in 0..500 {
            let v = self.xi_eps(t, x, &a)?;
            let r = [xi[0] - v[0], xi[1] - v[1]];
            let rn = norm(&r, d);
            if rn <= self.tol_inv * scale {
                return Ok(a);
            }
            if rn > res_prev {
                tau *= 0.5;
                if tau < 1e-12 {
                    break;
                }
            }
            res_prev = rn;
            for i in 0..d {
                a[i] += tau * r[i];
            }
        }
        Err(Error::Convergence(format!(
            "inverse-route iteration stalled at xi = {xi:?} (eps = {})",
            self.eps
        )))
    }
}

/// Coercivity data of the growth condition
/// `A . xi >= -k(t,x) + c_* (M(x,xi) + M*(x,A))`.
#[derive(Clone, Debug)]
pub struct CoercivityParams {
    pub c_star: f64,
    pub k: Expr,
    pub nf: NFunction,
}

impl CoercivityParams {
    pub fn k_at(&self, t: f64, x: &Vec2) -> f64 {
        self.k.eval(&Vars::space_time(t, &x[..self.nf.dim()]))
    }
}

/// Sample plan for graph axioms: where elements are generated, how many
/// random probes test maximality, and the tolerances in play.
#[derive(Clone, Debug)]
pub struct GraphSamplePlan {
    pub tx_points: Vec<(f64, Vec2)>,
    pub xi_mags: Vec<f64>,
    pub dirs: Vec<Vec2>,
    pub probe_count: usize,
    pub probe_box: f64,
    pub pair_count: usize,
    pub membership_tol: f64,
    pub witness_tol: f64,
    pub seed: u64,
}

impl GraphSamplePlan {
    pub fn standard(dim: usize, seed: u64) -> Self {
        let mut dirs = vec![[1.0, 0.0], [-1.0, 0.0]];
        if dim == 2 {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            dirs.extend_from_slice(&[[0.0, 1.0], [0.0, -1.0], [s, s], [-s, s]]);
        }
        GraphSamplePlan {
            tx_points: vec![(0.5, [0.5, 0.5])],
            xi_mags: vec![0.25, 0.5, 1.0, 2.0, 5.0],
            dirs,
            probe_count: 64,
            probe_box: 4.0,
            pair_count: 512,
            membership_tol: 1e-9,
            witness_tol: 1e-12,
            seed,
        }
    }
}

/// All graph elements the plan generates at one `(t,x)`: the jump segments
/// contribute their endpoints and centers, radial nodes are always hit.
pub fn sample_elements(
    g: &MonotoneGraph,
    t: f64,
    x: &Vec2,
    plan: &GraphSamplePlan,
) -> Result<Vec<(Vec2, Vec2)>> {
    let d = g.dim;
    let mut mags = plan.xi_mags.clone();
    match &g.kind {
        GraphKind::Radial(r) => mags.extend(r.nodes.iter().map(|n| n.s)),
        GraphKind::Tabulated(tab) => mags.extend(tab.nodes.iter().map(|n| n.xi.abs())),
        GraphKind::Potential(_) => {}
    }
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    let mut xis = vec![[0.0; 2]];
    for m in &mags {
        if *m == 0.0 {
            continue;
        }
        for dir in &plan.dirs {
            xis.push([m * dir[0], m * dir[1]]);
        }
    }
    let mut out = Vec::new();
    for xi in xis {
        let set = g.elements(t, x, &xi)?;
        for a in set.representatives(d) {
            out.push((xi, a));
        }
    }
    Ok(out)
}

/// Verify (A1) origin membership, (A2) monotonicity on sampled element
/// pairs, (A3) maximality through the selection-equivalence proxy (probes
/// off the graph must admit a monotonicity-violating witness), and (A4)
/// the M-graph coercivity with the numerical conjugate.
pub fn verify_graph_axioms(
    g: &MonotoneGraph,
    cp: &CoercivityParams,
    cj: &ConjugateApprox,
    plan: &GraphSamplePlan,
    tol: f64,
) -> Result<AxiomReport> {
    if plan.tx_points.is_empty() || plan.xi_mags.is_empty() {
        return Err(Error::Input("graph sample plan is empty".into()));
    }
    let d = g.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x9e3779b97f4a7c15);

    // (A1)
    let mut a1_margin = f64::NEG_INFINITY;
    for (t, x) in &plan.tx_points {
        let set = g.elements(*t, x, &[0.0, 0.0])?;
        let dist = set.distance(&[0.0, 0.0], d);
        a1_margin = a1_margin.max(dist);
    }
    let a1 = AxiomCheck::new(
        "A1_origin",
        Verdict::from_bool(a1_margin <= tol),
        -a1_margin,
    );

    // (A2)
    let mut a2_margin = f64::INFINITY;
    let mut a2_worst = [0.0; 2];
    for (t, x) in &plan.tx_points {
        let elems = sample_elements(g, *t, x, plan)?;
        for _ in 0..plan.pair_count {
            let (xi1, av1) = elems[rng.gen_range(0..elems.len())];
            let (xi2, av2) = elems[rng.gen_range(0..elems.len())];
            let m = (av1[0] - av2[0]) * (xi1[0] - xi2[0]) + (av1[1] - av2[1]) * (xi1[1] - xi2[1]);
            if m < a2_margin {
                a2_margin = m;
                a2_worst = xi1;
            }
        }
    }
    let mut a2 = AxiomCheck::new(
        "A2_monotone",
        Verdict::from_bool(a2_margin >= -tol),
        a2_margin,
    );
    a2.worst_a = Some(a2_worst[..d].to_vec());

    // (A3): sampled selection-equivalence proxy
    let mut violations = 0usize;
    let mut probes_off_graph = 0usize;
    for (t, x) in &plan.tx_points {
        let elems = sample_elements(g, *t, x, plan)?;
        for _ in 0..plan.probe_count {
            let mut xi2 = [0.0; 2];
            let mut av2 = [0.0; 2];
            for i in 0..d {
                xi2[i] = rng.gen_range(-plan.probe_box..plan.probe_box);
                av2[i] = rng.gen_range(-plan.probe_box..plan.probe_box);
            }
            let set = g.elements(*t, x, &xi2)?;
            if set.contains(&av2, d, plan.membership_tol) {
                continue;
            }
            probes_off_graph += 1;
            let mut witnessed = false;
            for (xi1, av1) in &elems {
                let m = (av1[0] - av2[0]) * (xi1[0] - xi2[0])
                    + (av1[1] - av2[1]) * (xi1[1] - xi2[1]);
                if m < -plan.witness_tol {
                    witnessed = true;
                    break;
                }
            }
            if !witnessed {
                // local elements around the probe argument
                'local: for h in [1e-3, 1e-1, 0.5] {
                    for dir in &plan.dirs {
                        let z = [xi2[0] + h * dir[0], xi2[1] + h * dir[1]];
                        let s = g.elements(*t, x, &z)?;
                        for av1 in s.representatives(d) {
                            let m = (av1[0] - av2[0]) * (z[0] - xi2[0])
                                + (av1[1] - av2[1]) * (z[1] - xi2[1]);
                            if m < -plan.witness_tol {
                                witnessed = true;
                                break 'local;
                            }
                        }
                    }
                }
            }
            if !witnessed {
                violations += 1;
            }
        }
    }
    let mut a3 = AxiomCheck::new(
        "A3_maximal_proxy",
        Verdict::from_bool(violations == 0),
        -(violations as f64),
    );
    a3.note = Some(format!(
        "sampled proxy: {probes_off_graph} off-graph probes, {violations} without a violating witness; pass means no violation found, not a maximality certificate"
    ));

    // (A4)
    let mut a4_margin = f64::INFINITY;
    let mut a4_worst = ([0.0; 2], [0.0; 2]);
    for (t, x) in &plan.tx_points {
        let elems = sample_elements(g, *t, x, plan)?;
        for (xi, av) in elems {
            let m_val = cp.nf.eval_raw(x, &xi);
            let mstar = cj.eval_raw(x, &av)?;
            let k = cp.k_at(*t, x);
            let m = dot(&av, &xi, d) + k - cp.c_star * (m_val + mstar);
            if m < a4_margin {
                a4_margin = m;
                a4_worst = (xi, av);
            }
        }
    }
    let mut a4 = AxiomCheck::new(
        "A4_m_graph",
        Verdict::from_bool(a4_margin >= -tol),
        a4_margin,
    );
    a4.worst_a = Some(a4_worst.0[..d].to_vec());

    Ok(AxiomReport::from_checks("monotone graph", vec![a1, a2, a3, a4]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub margin: f64,
    pub worst_t: f64,
    pub worst_x: Vec<f64>,
    pub worst_xi: Vec<f64>,
    pub samples: usize,
}

fn coercivity_margin_by(
    eval: impl Fn(f64, &Vec2, &Vec2) -> Result<Vec2>,
    cp: &CoercivityParams,
    cj: &ConjugateApprox,
    tx_points: &[(f64, Vec2)],
    xi_points: &[Vec2],
) -> Result<CoercivityReport> {
    if tx_points.is_empty() || xi_points.is_empty() {
        return Err(Error::Input("coercivity margin needs samples".into()));
    }
    let d = cp.nf.dim();
    let mut worst = (f64::INFINITY, 0.0, [0.0; 2], [0.0; 2]);
    let mut count = 0;
    for (t, x) in tx_points {
        for xi in xi_points {
            let a = eval(*t, x, xi)?;
            let m_val = cp.nf.eval_raw(x, xi);
            let mstar = cj.eval_raw(x, &a)?;
            let margin = dot(&a, xi, d) + cp.k_at(*t, x) - cp.c_star * (m_val + mstar);
            count += 1;
            if margin < worst.0 {
                worst = (margin, *t, *x, *xi);
            }
        }
    }
    Ok(CoercivityReport {
        margin: worst.0,
        worst_t: worst.1,
        worst_x: worst.2[..d].to_vec(),
        worst_xi: worst.3[..d].to_vec(),
        samples: count,
    })
}

pub fn coercivity_margin_selection(
    sel: &Selection,
    cp: &CoercivityParams,
    cj: &ConjugateApprox,
    tx_points: &[(f64, Vec2)],
    xi_points: &[Vec2],
) -> Result<CoercivityReport> {
    coercivity_margin_by(|t, x, xi| sel.eval(t, x, xi), cp, cj, tx_points, xi_points)
}

pub fn coercivity_margin_mollified(
    ms: &MollifiedSelection,
    cp: &CoercivityParams,
    cj: &ConjugateApprox,
    tx_points: &[(f64, Vec2)],
    xi_points: &[Vec2],
) -> Result<CoercivityReport> {
    coercivity_margin_by(|t, x, xi| ms.eval(t, x, xi), cp, cj, tx_points, xi_points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SpatialDomain;

    fn dom1() -> SpatialDomain {
        SpatialDomain::unit_box(1, &[1.0]).unwrap()
    }

    fn kernel1() -> Kernel {
        Kernel::standard(1).unwrap()
    }

    fn sign_graph() -> MonotoneGraph {
        // a(s) = 1 for s > 0 with the jump [-1,1] at the origin
        MonotoneGraph::new(
            1,
            GraphKind::Radial(
                RadialMonotone::new(vec![RadialNode { s: 0.0, lo: 0.0, hi: 1.0 }], 0.0).unwrap(),
            ),
        )
        .unwrap()
    }

    #[test]
    fn elements_match_representations() {
        let id2 = MonotoneGraph::identity(2);
        let set = id2.elements(0.0, &[0.5, 0.5], &[2.0, 0.0]).unwrap();
        assert_eq!(set, ValueSet::Point([2.0, 0.0]));

        let sg = sign_graph();
        match sg.elements(0.0, &[0.5, 0.0], &[0.0, 0.0]).unwrap() {
            ValueSet::Ball(r) => assert_eq!(r, 1.0),
            other => panic!("expected ball, got {other:?}"),
        }
        // the segment [-1,1] in 1-d: +-1 are members, +-1.5 are not
        let set = sg.elements(0.0, &[0.5, 0.0], &[0.0, 0.0]).unwrap();
        assert!(set.contains(&[1.0, 0.0], 1, 1e-12));
        assert!(set.contains(&[-1.0, 0.0], 1, 1e-12));
        assert!((set.distance(&[1.5, 0.0], 1) - 0.5).abs() < 1e-15);

        let quartic = MonotoneGraph::new(
            1,
            GraphKind::Potential(Potential::from_fn(|_, a, d| norm(a, d).powi(4) / 4.0)),
        )
        .unwrap();
        match quartic.elements(0.0, &[0.5, 0.0], &[1.0, 0.0]).unwrap() {
            ValueSet::Point(p) => assert!((p[0] - 1.0).abs() < 1e-7, "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gamma_scales_outputs() {
        let g = MonotoneGraph::identity(1).with_gamma(Expr::parse("1+t").unwrap());
        match g.elements(1.0, &[0.5, 0.0], &[3.0, 0.0]).unwrap() {
            ValueSet::Point(p) => assert_eq!(p[0], 6.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn axioms_identity_graph() {
        let g = MonotoneGraph::identity(1);
        let nf = NFunction::custom(dom1(), "half_square", Some((2.0, 2.0)), |_, a, d| {
            let n = norm(a, d);
            0.5 * n * n
        });
        let cp = CoercivityParams {
            c_star: 1.0,
            k: Expr::parse("0").unwrap(),
            nf: nf.clone(),
        };
        let cj = ConjugateApprox::new(nf);
        let plan = GraphSamplePlan::standard(1, 42);
        let rep = verify_graph_axioms(&g, &cp, &cj, &plan, 1e-6).unwrap();
        assert!(rep.verdict.passed(), "{rep:?}");
        // A.xi = |xi|^2 = M + M* exactly: margin ~ 0
        let a4 = rep.check("A4_m_graph").unwrap();
        assert!(a4.margin.abs() < 1e-6, "margin {}", a4.margin);
        assert!(rep.check("A2_monotone").unwrap().margin >= 0.0);
    }

    #[test]
    fn maximality_proxy_flags_deleted_identity() {
        // identity with values removed on |xi| < 1: monotone but not maximal
        let tab = Tabulated1d::new(
            vec![
                TabNode { xi: -1.0, lo: -1.0, hi: -1.0 },
                TabNode { xi: 1.0, lo: 1.0, hi: 1.0 },
            ],
            vec![false],
            1.0,
            1.0,
        )
        .unwrap();
        let g = MonotoneGraph::new(1, GraphKind::Tabulated(tab)).unwrap();
        let nf = NFunction::power(dom1(), 2.0).unwrap();
        let cp = CoercivityParams {
            c_star: 0.25,
            k: Expr::parse("1").unwrap(),
            nf: nf.clone(),
        };
        let cj = ConjugateApprox::new(nf);
        let plan = GraphSamplePlan::standard(1, 7);
        let rep = verify_graph_axioms(&g, &cp, &cj, &plan, 1e-9).unwrap();
        let a3 = rep.check("A3_maximal_proxy").unwrap();
        assert!(!a3.verdict.passed(), "{a3:?}");
        // the probe (0,0) specifically: every sampled element satisfies
        // monotonicity against it, yet it is not a member
        let set = g.elements(0.0, &[0.5, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(set, ValueSet::Empty);
    }

    #[test]
    fn direct_mollification_identity_exact() {
        let sel = Selection::new(MonotoneGraph::identity(1), SelectionRule::MinimalNorm);
        let ms = MollifiedSelection::direct(sel, 0.3, &kernel1()).unwrap();
        for xi in [-2.0, -0.4, 0.0, 0.7, 3.0] {
            let a = ms.eval(0.0, &[0.5, 0.0], &[xi, 0.0]).unwrap();
            assert!((a[0] - xi).abs() < 1e-12, "xi={xi}: {a:?}");
        }
        let sel2 = Selection::new(MonotoneGraph::identity(2), SelectionRule::MinimalNorm);
        let k2 = Kernel::standard(2).unwrap();
        let ms2 = MollifiedSelection::direct(sel2, 0.2, &k2).unwrap();
        let a = ms2.eval(0.0, &[0.5, 0.5], &[1.5, -0.3]).unwrap();
        assert!((a[0] - 1.5).abs() < 1e-12 && (a[1] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn direct_mollification_sign_graph() {
        let sel = Selection::new(sign_graph(), SelectionRule::Midpoint);
        let eps = 0.25;
        let ms = MollifiedSelection::direct(sel, eps, &kernel1()).unwrap();
        // odd integrand, even kernel
        let a0 = ms.eval(0.0, &[0.5, 0.0], &[0.0, 0.0]).unwrap();
        assert!(a0[0].abs() < 1e-12);
        // kernel support misses the jump at xi = 2 eps: unit weight mass
        let a = ms.eval(0.0, &[0.5, 0.0], &[2.0 * eps, 0.0]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_route_identity_and_origin() {
        let sel = Selection::new(MonotoneGraph::identity(1), SelectionRule::MinimalNorm);
        let eps = 0.5;
        let ms = MollifiedSelection::inverse(sel, eps, &kernel1()).unwrap();
        let a = ms.eval(0.0, &[0.5, 0.0], &[1.0, 0.0]).unwrap();
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-8, "{a:?}");
        let a = ms.eval(0.0, &[0.5, 0.0], &[0.0, 0.0]).unwrap();
        assert!(a[0].abs() < 1e-10);

        let sel2 = Selection::new(MonotoneGraph::identity(2), SelectionRule::MinimalNorm);
        let k2 = Kernel::standard(2).unwrap();
        let ms2 = MollifiedSelection::inverse(sel2, 0.25, &k2).unwrap();
        let a = ms2.eval(0.0, &[0.5, 0.5], &[1.0, -0.5]).unwrap();
        assert!((a[0] - 0.8).abs() < 1e-8 && (a[1] + 0.4).abs() < 1e-8, "{a:?}");
    }

    #[test]
    fn inverse_route_strictly_monotone_across_former_jump() {
        // profile with a flat stretch: the inverse selection jumps at a = 1
        let profile = RadialMonotone::new(
            vec![
                RadialNode { s: 0.0, lo: 0.0, hi: 0.0 },
                RadialNode { s: 1.0, lo: 1.0, hi: 1.0 },
                RadialNode { s: 2.0, lo: 1.0, hi: 1.0 },
            ],
            1.0,
        )
        .unwrap();
        // sanity: inverse has the jump [1,2] at a = 1
        let inv = profile.inverse().unwrap();
        assert_eq!(inv.nodes.len(), 2);
        assert!((inv.nodes[1].s - 1.0).abs() < 1e-15);
        assert!((inv.nodes[1].lo - 1.0).abs() < 1e-15 && (inv.nodes[1].hi - 2.0).abs() < 1e-15);

        let g = MonotoneGraph::new(1, GraphKind::Radial(profile)).unwrap();
        let sel = Selection::new(g, SelectionRule::MinimalNorm);
        let ms = MollifiedSelection::inverse(sel, 0.1, &kernel1()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..61 {
            let xi = -3.0 + 0.1 * k as f64;
            let a = ms.eval(0.0, &[0.5, 0.0], &[xi, 0.0]).unwrap()[0];
            assert!(a > prev, "not strictly increasing at xi={xi}: {a} <= {prev}");
            prev = a;
        }
    }

    #[test]
    fn mollified_monotonicity_both_routes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let graphs = [sign_graph(), MonotoneGraph::identity(1)];
        for g in graphs {
            for route in [Route::Direct, Route::Inverse] {
                if matches!(route, Route::Inverse)
                    && matches!(&g.kind, GraphKind::Radial(r) if r.tail_slope == 0.0)
                {
                    continue; // flat tail not invertible
                }
                let sel = Selection::new(g.clone(), SelectionRule::MinimalNorm);
                let ms =
                    MollifiedSelection::with_route(sel, 0.2, &kernel1(), route, 33).unwrap();
                for _ in 0..200 {
                    let xi1 = [rng.gen_range(-3.0..3.0), 0.0];
                    let xi2 = [rng.gen_range(-3.0..3.0), 0.0];
                    let a1 = ms.eval(0.0, &[0.5, 0.0], &xi1).unwrap();
                    let a2 = ms.eval(0.0, &[0.5, 0.0], &xi2).unwrap();
                    let m = (a1[0] - a2[0]) * (xi1[0] - xi2[0]);
                    assert!(m >= -1e-10, "route {route:?}: margin {m}");
                }
            }
        }
    }

    #[test]
    fn mollification_error_halves_with_eps_on_kinked_profile() {
        // piecewise-linear profile with a kink: |A_eps - A~| = c eps exactly
        // for the fixed stencil pattern
        let profile = RadialMonotone::new(
            vec![
                RadialNode { s: 0.0, lo: 0.0, hi: 0.0 },
                RadialNode { s: 1.0, lo: 1.0, hi: 1.0 },
            ],
            3.0,
        )
        .unwrap();
        let g = MonotoneGraph::new(1, GraphKind::Radial(profile)).unwrap();
        let sel = Selection::new(g, SelectionRule::MinimalNorm);
        let mut errs = Vec::new();
        for eps in [0.4, 0.2, 0.1] {
            let ms = MollifiedSelection::direct(sel.clone(), eps, &kernel1()).unwrap();
            let mut worst = 0.0f64;
            for k in 0..=400 {
                let xi = -4.0 + 8.0 * k as f64 / 400.0;
                let a = ms.eval(0.0, &[0.5, 0.0], &[xi, 0.0]).unwrap()[0];
                let exact = sel.eval(0.0, &[0.5, 0.0], &[xi, 0.0]).unwrap()[0];
                worst = worst.max((a - exact).abs());
            }
            errs.push(worst);
        }
        for w in errs.windows(2) {
            let ratio = w[1] / w[0];
            assert!((ratio - 0.5).abs() <= 0.1, "ratio {ratio} not within 20% of 1/2");
        }
    }

    #[test]
    fn coercivity_margins() {
        // identity graph, M = |xi|^2/2, c* = 1, k = 0, eps = 0.1
        let nf = NFunction::custom(dom1(), "half_square", Some((2.0, 2.0)), |_, a, d| {
            let n = norm(a, d);
            0.5 * n * n
        });
        let cp = CoercivityParams {
            c_star: 1.0,
            k: Expr::parse("0").unwrap(),
            nf: nf.clone(),
        };
        let cj = ConjugateApprox::new(nf.clone());
        let sel = Selection::new(MonotoneGraph::identity(1), SelectionRule::MinimalNorm);
        let ms = MollifiedSelection::direct(sel.clone(), 0.1, &kernel1()).unwrap();
        let tx = [(0.0, [0.5, 0.0])];
        let xi: Vec<Vec2> = (0..41).map(|k| [-10.0 + 0.5 * k as f64, 0.0]).collect();
        let rep = coercivity_margin_mollified(&ms, &cp, &cj, &tx, &xi).unwrap();
        assert!(rep.margin >= -1e-6, "margin {}", rep.margin);

        // zero argument: margin = k - c* M*(A(0)) with A(0) = 0
        let rep0 = coercivity_margin_mollified(&ms, &cp, &cj, &tx, &[[0.0, 0.0]]).unwrap();
        assert!(rep0.margin.abs() < 1e-8);

        // cubic radial profile against quartic growth
        let cubic = MonotoneGraph::new(
            1,
            GraphKind::Potential(Potential::from_fn(|_, a, d| norm(a, d).powi(4) / 4.0)),
        )
        .unwrap();
        let nf4 = NFunction::custom(dom1(), "quartic_over_4", Some((4.0, 4.0)), |_, a, d| {
            norm(a, d).powi(4) / 4.0
        });
        let cp4 = CoercivityParams {
            c_star: 0.5,
            k: Expr::parse("1").unwrap(),
            nf: nf4.clone(),
        };
        let cj4 = ConjugateApprox::new(nf4);
        let sel4 = Selection::new(cubic, SelectionRule::MinimalNorm);
        let xi5: Vec<Vec2> = (0..21).map(|k| [-5.0 + 0.5 * k as f64, 0.0]).collect();
        let rep4 = coercivity_margin_selection(&sel4, &cp4, &cj4, &tx, &xi5).unwrap();
        assert!(rep4.margin >= -1e-5, "margin {}", rep4.margin);
        assert!(rep4.margin.is_finite());
    }

    #[test]
    fn coercivity_transfer_from_selection_to_mollified() {
        // constant k: mollified margins dominate the direct ones up to an
        // O(eps) term from the jump
        let nf = NFunction::custom(dom1(), "half_square", Some((2.0, 2.0)), |_, a, d| {
            let n = norm(a, d);
            0.5 * n * n
        });
        let cp = CoercivityParams {
            c_star: 0.25,
            k: Expr::parse("1").unwrap(),
            nf: nf.clone(),
        };
        let cj = ConjugateApprox::new(nf);
        let g = MonotoneGraph::new(
            1,
            GraphKind::Radial(RadialMonotone::sign_jump_identity()),
        )
        .unwrap();
        let sel = Selection::new(g, SelectionRule::MinimalNorm);
        let eps = 0.1;
        let ms = MollifiedSelection::direct(sel.clone(), eps, &kernel1()).unwrap();
        let tx = [(0.0, [0.5, 0.0])];
        let xi: Vec<Vec2> = (0..81).map(|k| [-4.0 + 0.1 * k as f64, 0.0]).collect();
        let direct = coercivity_margin_selection(&sel, &cp, &cj, &tx, &xi).unwrap();
        let moll = coercivity_margin_mollified(&ms, &cp, &cj, &tx, &xi).unwrap();
        let tol = 4.0 * eps;
        assert!(
            moll.margin >= direct.margin - tol,
            "mollified {} vs direct {}",
            moll.margin,
            direct.margin
        );
    }

    #[test]
    fn inverse_route_distinct_arguments_distinct_values() {
        let g = MonotoneGraph::new(
            1,
            GraphKind::Radial(RadialMonotone::sign_jump_identity()),
        )
        .unwrap();
        let sel = Selection::new(g, SelectionRule::MinimalNorm);
        let ms = MollifiedSelection::inverse(sel, 0.2, &kernel1()).unwrap();
        let mut seen = Vec::new();
        for k in 0..41 {
            let xi = -2.0 + 0.1 * k as f64;
            let a = ms.eval(0.0, &[0.5, 0.0], &[xi, 0.0]).unwrap()[0];
            for s in &seen {
                assert!((a - s).abs() > 1e-12);
            }
            seen.push(a);
        }
    }
}
