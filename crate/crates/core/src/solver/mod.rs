//! Galerkin discretization of `u_t - div A = f` on sine eigenbases.
//!
//! Space is spanned by Dirichlet-Laplacian eigenfunctions of the box
//! (tensor products of sines), which are exactly orthonormal under the
//! crate's midpoint quadrature; time stepping is implicit Euler with a
//! damped Picard solve of the monotone stage equation
//!
//! `c^{m+1} = c^m + dt (<f, w> - N(c^{m+1}))`,
//!
//! where `N_j(c) = integral_Omega A_eps(t, x, grad u_c) . grad w_j` and
//! `A_eps` is a mollified selection of the constitutive graph.

mod diagnostics;

pub use diagnostics::*;

use crate::domain::Vec2;
use crate::error::{Error, Result};
use crate::expr::{Expr, Vars};
use crate::graph::{CoercivityParams, MollifiedSelection, MonotoneGraph, SelectionRule};
use crate::grid::{ScalarField, SpaceTimeGrid, VectorField};
use serde::{Deserialize, Serialize};

/// Problem data: grid, initial datum, bounded source, constitutive graph
/// with selection rule, and the coercivity triple `(c*, k, M)`.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub grid: SpaceTimeGrid,
    pub u0: Expr,
    pub source: Expr,
    pub graph: MonotoneGraph,
    pub rule: SelectionRule,
    pub coercivity: CoercivityParams,
}

impl ProblemSpec {
    pub fn u0_values(&self) -> Result<Vec<f64>> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(g.space_cells());
        for s in 0..g.space_cells() {
            let x = g.x_center(s);
            let v = self.u0.eval(&Vars::spatial(&x[..g.dim()]));
            if !v.is_finite() {
                return Err(Error::Input(format!("u0 not finite at x = {x:?}")));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn source_at(&self, t: f64, x: &Vec2) -> f64 {
        self.source.eval(&Vars::space_time(t, &x[..self.grid.dim()]))
    }

    pub fn sup_source(&self) -> f64 {
        let g = &self.grid;
        let mut sup = 0.0f64;
        for m in 0..=g.n_t {
            let t = m as f64 * g.dt();
            for s in 0..g.space_cells() {
                sup = sup.max(self.source_at(t, &g.x_center(s)).abs());
            }
        }
        sup
    }

    /// `integral_Q k` by the midpoint rule.
    pub fn k_mass(&self) -> f64 {
        let g = &self.grid;
        let w = g.cell_measure();
        let mut acc = 0.0;
        for m in 0..g.n_t {
            let t = g.t_center(m);
            for s in 0..g.space_cells() {
                acc += self.coercivity.k_at(t, &g.x_center(s));
            }
        }
        acc * w
    }
}

/// L2-orthonormal sine eigenbasis of the Dirichlet Laplacian on the box,
/// tabulated at cell centers. Midpoint quadrature reproduces the continuum
/// orthonormality exactly for mode indices below the grid resolution.
#[derive(Clone, Debug)]
pub struct GalerkinBasis {
    pub grid: SpaceTimeGrid,
    pub n: usize,
    pub modes: Vec<[usize; 2]>,
    pub eigenvalues: Vec<f64>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<Vec2>>,
}

impl GalerkinBasis {
    pub fn new(grid: &SpaceTimeGrid, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("basis dimension must be >= 1".into()));
        }
        let d = grid.dim();
        // enumerate multi-indices by eigenvalue; cap per-axis indices at
        // N/2 to stay clear of sampling aliases
        let cap = [grid.n_x[0] / 2, grid.n_x[1] / 2];
        let mut modes = Vec::new();
        if d == 1 {
            for k in 1..=cap[0] {
                modes.push([k, 0]);
            }
        } else {
            for k1 in 1..=cap[0] {
                for k2 in 1..=cap[1] {
                    modes.push([k1, k2]);
                }
            }
        }
        let lam = |m: &[usize; 2]| -> f64 {
            let mut v = (m[0] as f64 * std::f64::consts::PI / grid.domain.lengths[0]).powi(2);
            if d == 2 {
                v += (m[1] as f64 * std::f64::consts::PI / grid.domain.lengths[1]).powi(2);
            }
            v
        };
        modes.sort_by(|a, b| lam(a).total_cmp(&lam(b)).then(a.cmp(b)));
        if n > modes.len() {
            return Err(Error::Parameter(format!(
                "basis dimension {n} exceeds the alias-safe budget {} for this grid",
                modes.len()
            )));
        }
        modes.truncate(n);
        let eigenvalues: Vec<f64> = modes.iter().map(lam).collect();
        let sc = grid.space_cells();
        let mut values = vec![vec![0.0; sc]; n];
        let mut grads = vec![vec![[0.0; 2]; sc]; n];
        for (i, mode) in modes.iter().enumerate() {
            let mut amp = 1.0;
            for a in 0..d {
                amp *= (2.0 / grid.domain.lengths[a]).sqrt();
            }
            for s in 0..sc {
                let x = grid.x_center(s);
                let mut val = amp;
                let mut grad = [amp, amp];
                for a in 0..d {
                    let karg = mode[a] as f64 * std::f64::consts::PI / grid.domain.lengths[a];
                    let (sin_a, cos_a) = (karg * x[a]).sin_cos();
                    val *= sin_a;
                    for b in 0..d {
                        grad[b] *= if a == b { karg * cos_a } else { sin_a };
                    }
                }
                values[i][s] = val;
                grads[i][s] = [grad[0], if d == 2 { grad[1] } else { 0.0 }];
            }
        }
        Ok(GalerkinBasis {
            grid: grid.clone(),
            n,
            modes,
            eigenvalues,
            values,
            grads,
        })
    }

    #[inline]
    pub fn value(&self, i: usize, s: usize) -> f64 {
        self.values[i][s]
    }

    #[inline]
    pub fn grad(&self, i: usize, s: usize) -> &Vec2 {
        &self.grads[i][s]
    }

    /// Discrete `L2(Omega)` projection onto the span; exact orthogonal
    /// projection because the tabulated basis is orthonormal.
    pub fn project(&self, space_values: &[f64]) -> Vec<f64> {
        let w = self.grid.space_cell_measure();
        (0..self.n)
            .map(|i| {
                self.values[i]
                    .iter()
                    .zip(space_values)
                    .map(|(b, v)| b * v)
                    .sum::<f64>()
                    * w
            })
            .collect()
    }

    /// Worst deviation of the tabulated Gram matrix from the identity.
    pub fn gram_error(&self) -> f64 {
        let w = self.grid.space_cell_measure();
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i..self.n {
                let g: f64 = self.values[i]
                    .iter()
                    .zip(&self.values[j])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    * w;
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Evaluate `sum_i c_i grad w_i` at one spatial cell.
    #[inline]
    fn grad_at(&self, c: &[f64], s: usize) -> Vec2 {
        let mut g = [0.0; 2];
        for (ci, gr) in c.iter().zip(self.grads.iter()) {
            g[0] += ci * gr[s][0];
            g[1] += ci * gr[s][1];
        }
        g
    }

    fn value_at(&self, c: &[f64], s: usize) -> f64 {
        c.iter()
            .zip(self.values.iter())
            .map(|(ci, v)| ci * v[s])
            .sum()
    }
}

/// Assembled finite-dimensional system: basis, mollified nonlinearity,
/// load functional, and projected initial datum.
#[derive(Clone, Debug)]
pub struct GalerkinSystem {
    pub basis: GalerkinBasis,
    pub a_eps: MollifiedSelection,
    pub p_u0: Vec<f64>,
    source: Expr,
}

impl GalerkinSystem {
    /// `N_j(c) = integral A_eps(t, x, grad u_c) . grad w_j`.
    pub fn nonlinearity(&self, t: f64, c: &[f64]) -> Result<Vec<f64>> {
        let grid = &self.basis.grid;
        let sc = grid.space_cells();
        let w = grid.space_cell_measure();
        let mut out = vec![0.0; self.basis.n];
        for s in 0..sc {
            let x = grid.x_center(s);
            let grad_u = self.basis.grad_at(c, s);
            let a = self.a_eps.eval(t, &x, &grad_u)?;
            for (j, oj) in out.iter_mut().enumerate() {
                let gw = self.basis.grad(j, s);
                *oj += (a[0] * gw[0] + a[1] * gw[1]) * w;
            }
        }
        Ok(out)
    }

    /// `<f(t, .), w_j>`.
    pub fn load(&self, t: f64) -> Vec<f64> {
        let grid = &self.basis.grid;
        let w = grid.space_cell_measure();
        let d = grid.dim();
        let mut out = vec![0.0; self.basis.n];
        for s in 0..grid.space_cells() {
            let x = grid.x_center(s);
            let fv = self.source.eval(&Vars::space_time(t, &x[..d]));
            for (j, oj) in out.iter_mut().enumerate() {
                *oj += fv * self.basis.value(j, s) * w;
            }
        }
        out
    }

    /// Flux field `A_eps(t, x, grad u_c)` over one coefficient vector.
    pub fn flux_at(&self, t: f64, c: &[f64], s: usize) -> Result<Vec2> {
        let x = self.basis.grid.x_center(s);
        let grad_u = self.basis.grad_at(c, s);
        self.a_eps.eval(t, &x, &grad_u)
    }
}

/// Build the system: basis tables, the mollified selection `A_eps`, the
/// load, and `P^n u0` (exact orthogonal projection of the sampled datum).
pub fn assemble_galerkin(
    p: &ProblemSpec,
    n: usize,
    eps: f64,
    kernel: &crate::mollify::Kernel,
    route: crate::graph::Route,
) -> Result<GalerkinSystem> {
    let basis = GalerkinBasis::new(&p.grid, n)?;
    let sel = crate::graph::Selection::new(p.graph.clone(), p.rule.clone());
    let a_eps = MollifiedSelection::with_route(sel, eps, kernel, route, 33)?;
    let p_u0 = basis.project(&p.u0_values()?);
    Ok(GalerkinSystem {
        basis,
        a_eps,
        p_u0,
        source: p.source.clone(),
    })
}

/// Damped-Picard controls for the implicit stage equation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SchemeParams {
    pub tol_step: f64,
    pub max_iter: u32,
    pub damping0: f64,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams {
            tol_step: 1e-13,
            max_iter: 200,
            damping0: 0.5,
        }
    }
}

/// Implicit-Euler trajectory: node coefficients `c^m`, per-step Picard
/// iteration counts, and the final fixed-point residuals.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub basis: GalerkinBasis,
    pub dt: f64,
    /// `n_t + 1` rows of `n` coefficients.
    pub coeffs: Vec<Vec<f64>>,
    pub iterations: Vec<u32>,
    pub residuals: Vec<f64>,
}

pub fn integrate(sys: &GalerkinSystem, scheme: &SchemeParams) -> Result<Trajectory> {
    let grid = &sys.basis.grid;
    let dt = grid.dt();
    let mut coeffs = Vec::with_capacity(grid.n_t + 1);
    coeffs.push(sys.p_u0.clone());
    let mut iterations = Vec::with_capacity(grid.n_t);
    let mut residuals = Vec::with_capacity(grid.n_t);
    for m in 0..grid.n_t {
        let t_next = (m + 1) as f64 * dt;
        let c_prev = coeffs[m].clone();
        let load = sys.load(t_next);
        let scale = c_prev.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut x = c_prev.clone();
        let mut alpha = scheme.damping0;
        let mut prev_r: Option<Vec<f64>> = None;
        let mut prev_res = f64::INFINITY;
        let mut done = false;
        let mut iters = 0;
        let mut final_res = f64::NAN;
        while iters < scheme.max_iter {
            iters += 1;
            let nl = sys.nonlinearity(t_next, &x)?;
            // r = G(x) - x with G(x) = c_prev + dt (load - N(x))
            let mut res = 0.0f64;
            let mut r = vec![0.0; x.len()];
            for i in 0..x.len() {
                r[i] = c_prev[i] + dt * (load[i] - nl[i]) - x[i];
                res = res.max(r[i].abs());
            }
            final_res = res;
            if res <= scheme.tol_step * scale {
                done = true;
                break;
            }
            // Aitken (Irons-Tuck) relaxation: the damping that annihilates
            // the dominant residual mode, halved outright when the
            // residual grew; clamped so stiff steps cannot stall at zero
            if let Some(rp) = &prev_r {
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..x.len() {
                    let dr = r[i] - rp[i];
                    num += rp[i] * dr;
                    den += dr * dr;
                }
                if den > 0.0 {
                    alpha = (-alpha * num / den).clamp(1e-3, 1.0);
                }
                if res > prev_res {
                    alpha = (0.5 * alpha).max(1e-3);
                }
            }
            prev_res = res;
            prev_r = Some(r.clone());
            for i in 0..x.len() {
                x[i] += alpha * r[i];
            }
        }
        if !done {
            return Err(Error::Convergence(format!(
                "Picard stalled at step {m} (t = {t_next}): residual {final_res} after {iters} iterations",
            )));
        }
        iterations.push(iters);
        residuals.push(final_res);
        coeffs.push(x);
    }
    Ok(Trajectory {
        basis: sys.basis.clone(),
        dt,
        coeffs,
        iterations,
        residuals,
    })
}

impl Trajectory {
    /// Half squared discrete L2 norm at node `m`; exact because the basis
    /// is orthonormal under the grid quadrature.
    pub fn energy_half(&self, m: usize) -> f64 {
        0.5 * self.coeffs[m].iter().map(|c| c * c).sum::<f64>()
    }

    /// Cell-center coefficients: the average of the bracketing nodes, so
    /// reconstructed fields live on the same midpoint grid as everything
    /// else in the crate.
    pub fn cell_coeffs(&self, m: usize) -> Vec<f64> {
        self.coeffs[m]
            .iter()
            .zip(&self.coeffs[m + 1])
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn u_field(&self) -> ScalarField {
        let grid = &self.basis.grid;
        let mut f = ScalarField::zeros(grid);
        for m in 0..grid.n_t {
            let c = self.cell_coeffs(m);
            for s in 0..grid.space_cells() {
                *f.at_mut(m, s) = self.basis.value_at(&c, s);
            }
        }
        f
    }

    pub fn grad_field(&self) -> VectorField {
        let grid = &self.basis.grid;
        let mut f = VectorField::zeros(grid);
        for m in 0..grid.n_t {
            let c = self.cell_coeffs(m);
            for s in 0..grid.space_cells() {
                *f.at_mut(m, s) = self.basis.grad_at(&c, s);
            }
        }
        f
    }

    /// Flux field reconstructed through the system's mollified selection.
    pub fn a_field(&self, sys: &GalerkinSystem) -> Result<VectorField> {
        let grid = &self.basis.grid;
        let mut f = VectorField::zeros(grid);
        for m in 0..grid.n_t {
            let t = grid.t_center(m);
            let c = self.cell_coeffs(m);
            for s in 0..grid.space_cells() {
                *f.at_mut(m, s) = sys.flux_at(t, &c, s)?;
            }
        }
        Ok(f)
    }

    /// Trajectory CSV: `t, c_1, ..., c_n` per node.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let names: Vec<String> = (1..=self.basis.n).map(|i| format!("c{i}")).collect();
        writeln!(w, "t,{}", names.join(","))?;
        for (m, row) in self.coeffs.iter().enumerate() {
            let cols: Vec<String> = row.iter().map(|v| crate::grid::fmt_f64(*v)).collect();
            writeln!(w, "{},{}", crate::grid::fmt_f64(m as f64 * self.dt), cols.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SpatialDomain;
    use crate::mollify::Kernel;
    use crate::nfunc::NFunction;

    fn heat_spec(n_t: usize, n_x: usize) -> ProblemSpec {
        let len = std::f64::consts::PI;
        let dom = SpatialDomain::unit_box(1, &[len]).unwrap();
        let grid = SpaceTimeGrid::new(dom.clone(), 1.0, n_t, &[n_x]).unwrap();
        let nf = NFunction::power(dom, 2.0).unwrap();
        ProblemSpec {
            grid,
            u0: Expr::parse("sin(x1)").unwrap(),
            source: Expr::parse("0").unwrap(),
            graph: MonotoneGraph::identity(1),
            rule: SelectionRule::MinimalNorm,
            coercivity: CoercivityParams {
                c_star: 0.5,
                k: Expr::parse("0").unwrap(),
                nf,
            },
        }
    }

    #[test]
    fn basis_is_discretely_orthonormal() {
        let p = heat_spec(4, 64);
        let b = GalerkinBasis::new(&p.grid, 8).unwrap();
        assert!(b.gram_error() < 1e-10, "gram error {}", b.gram_error());
        assert!((b.eigenvalues[0] - 1.0).abs() < 1e-12);

        let dom2 = SpatialDomain::unit_box(2, &[1.0, 2.0]).unwrap();
        let g2 = SpaceTimeGrid::new(dom2, 1.0, 2, &[16, 16]).unwrap();
        let b2 = GalerkinBasis::new(&g2, 6).unwrap();
        assert!(b2.gram_error() < 1e-10);
        // eigenvalues sorted ascending
        for w in b2.eigenvalues.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn aliasing_bound_enforced() {
        let p = heat_spec(4, 16);
        assert!(GalerkinBasis::new(&p.grid, 8).is_ok());
        assert!(GalerkinBasis::new(&p.grid, 9).is_err());
    }

    #[test]
    fn projection_recovers_sine_datum() {
        let p = heat_spec(4, 64);
        let k = Kernel::standard(1).unwrap();
        let sys = assemble_galerkin(&p, 8, 0.1, &k, crate::graph::Route::Direct).unwrap();
        // u0 = sin(x) = ||sin||^{-1}-normalized first mode
        let norm = (std::f64::consts::PI / 2.0).sqrt();
        assert!((sys.p_u0[0] - norm).abs() < 1e-12, "{}", sys.p_u0[0]);
        for c in &sys.p_u0[1..] {
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_gives_zero_everything() {
        let mut p = heat_spec(4, 32);
        p.u0 = Expr::parse("0").unwrap();
        let k = Kernel::standard(1).unwrap();
        let sys = assemble_galerkin(&p, 4, 0.1, &k, crate::graph::Route::Direct).unwrap();
        assert!(sys.p_u0.iter().all(|c| *c == 0.0));
        assert!(sys.load(0.3).iter().all(|c| c.abs() < 1e-14));
        let traj = integrate(&sys, &SchemeParams::default()).unwrap();
        for row in &traj.coeffs {
            assert!(row.iter().all(|c| c.abs() < 1e-13));
        }
    }

    #[test]
    fn identity_graph_nonlinearity_is_stiffness_row() {
        let p = heat_spec(4, 64);
        let k = Kernel::standard(1).unwrap();
        let sys = assemble_galerkin(&p, 6, 0.1, &k, crate::graph::Route::Direct).unwrap();
        let mut c = vec![0.0; 6];
        c[0] = 1.0;
        let nl = sys.nonlinearity(0.0, &c).unwrap();
        assert!((nl[0] - sys.basis.eigenvalues[0]).abs() < 1e-10, "{nl:?}");
        for v in &nl[1..] {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn linear_heat_matches_implicit_euler_closed_form() {
        let p = heat_spec(100, 64);
        let k = Kernel::standard(1).unwrap();
        let sys = assemble_galerkin(&p, 4, 0.1, &k, crate::graph::Route::Direct).unwrap();
        let traj = integrate(&sys, &SchemeParams::default()).unwrap();
        let dt = traj.dt;
        let c0 = sys.p_u0[0];
        for m in 0..=100 {
            let exact = c0 / (1.0 + dt * sys.basis.eigenvalues[0]).powi(m as i32);
            assert!(
                (traj.coeffs[m][0] - exact).abs() <= 1e-10,
                "node {m}: {} vs {exact}",
                traj.coeffs[m][0]
            );
        }
        // Galerkin orthogonality: accepted-step residual below tolerance
        for r in &traj.residuals {
            assert!(*r <= 1e-13 * 2.0);
        }
    }

    #[test]
    fn steady_state_approach_with_constant_source() {
        let mut p = heat_spec(200, 32);
        p.u0 = Expr::parse("0").unwrap();
        p.source = Expr::parse("1").unwrap();
        let k = Kernel::standard(1).unwrap();
        let sys = assemble_galerkin(&p, 4, 0.1, &k, crate::graph::Route::Direct).unwrap();
        let traj = integrate(&sys, &SchemeParams::default()).unwrap();
        // after a transient, consecutive increments shrink monotonically
        let mut prev = f64::INFINITY;
        for m in 100..200 {
            let inc: f64 = traj.coeffs[m + 1]
                .iter()
                .zip(&traj.coeffs[m])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(inc <= prev + 1e-15, "step {m}: {inc} > {prev}");
            prev = inc;
        }
    }
}
