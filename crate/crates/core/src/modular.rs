//! Modulars, Luxemburg norms, Hoelder pairings, and modular-convergence
//! diagnostics on sampled space-time fields.
//!
//! The modular is `rho_{M,Q}(xi) = integral_Q M(x, xi(t,x))`, evaluated by
//! the crate-wide midpoint rule. Modular convergence of a sequence means
//! `rho((z_j - z)/lambda) -> 0` for some `lambda > 0`; the report keeps the
//! whole diagnostic row: modular values, an in-measure proxy, and the
//! uniform-integrability tail table that characterizes the notion.

use crate::conjugate::ConjugateApprox;
use crate::domain::norm;
use crate::error::{Error, Result};
use crate::grid::{SimpleField, SpaceTimeGrid, VectorField};
use crate::nfunc::NFunction;
use crate::report::Verdict;
use serde::{Deserialize, Serialize};

fn check_match(nf: &NFunction, grid: &SpaceTimeGrid) -> Result<()> {
    if nf.domain != grid.domain {
        return Err(Error::Input(
            "N-function domain does not match the field grid".into(),
        ));
    }
    Ok(())
}

/// `rho_{M,Q}(xi)`: midpoint quadrature of `M(x, xi)` over `Q`.
pub fn modular(nf: &NFunction, xi: &VectorField) -> Result<f64> {
    check_match(nf, &xi.grid)?;
    xi.check_finite()?;
    Ok(modular_unchecked(nf, xi, 1.0))
}

/// `rho_{M,Q}(xi/lambda)` without re-validation; internal hot path.
pub(crate) fn modular_unchecked(nf: &NFunction, xi: &VectorField, lambda: f64) -> f64 {
    let grid = &xi.grid;
    let w = grid.cell_measure();
    let sc = grid.space_cells();
    let mut acc = 0.0;
    for m in 0..grid.n_t {
        for s in 0..sc {
            let x = grid.x_center(s);
            let v = xi.at(m, s);
            let a = [v[0] / lambda, v[1] / lambda];
            acc += nf.eval_raw(&x, &a);
        }
    }
    acc * w
}

/// Luxemburg norm `inf { lambda > 0 : rho(xi/lambda) <= 1 }` by bisection
/// to relative `tol`; `0` for the zero field.
pub fn luxemburg_norm(nf: &NFunction, xi: &VectorField, tol: f64) -> Result<f64> {
    check_match(nf, &xi.grid)?;
    xi.check_finite()?;
    luxemburg_by(|lambda| modular_unchecked(nf, xi, lambda), xi, tol)
}

/// Luxemburg norm with respect to the *conjugate* integrand `M*`.
pub fn luxemburg_norm_dual(
    cj: &ConjugateApprox,
    eta: &VectorField,
    tol: f64,
) -> Result<f64> {
    check_match(&cj.nf, &eta.grid)?;
    eta.check_finite()?;
    let grid = eta.grid.clone();
    let w = grid.cell_measure();
    let sc = grid.space_cells();
    let rho = |lambda: f64| -> f64 {
        let mut acc = 0.0;
        for m in 0..grid.n_t {
            for s in 0..sc {
                let x = grid.x_center(s);
                let v = eta.at(m, s);
                let b = [v[0] / lambda, v[1] / lambda];
                match cj.eval_raw(&x, &b) {
                    Ok(val) => acc += val,
                    Err(_) => return f64::INFINITY, // treated as rho > 1
                }
            }
        }
        acc * w
    };
    luxemburg_by(rho, eta, tol)
}

fn luxemburg_by(rho: impl Fn(f64) -> f64, xi: &VectorField, tol: f64) -> Result<f64> {
    let d = xi.grid.dim();
    if xi.values.iter().all(|v| norm(v, d) == 0.0) {
        return Ok(0.0);
    }
    let mut lo = 1e-8;
    let mut hi = 1e8;
    // expand until the bracket actually straddles rho = 1
    let mut guard = 0;
    while rho(hi) > 1.0 {
        hi *= 16.0;
        guard += 1;
        if guard > 20 {
            return Err(Error::Overflow(
                "modular exceeds 1 at every probed scale; no Luxemburg bracket".into(),
            ));
        }
    }
    guard = 0;
    while rho(lo) <= 1.0 {
        lo /= 16.0;
        guard += 1;
        if guard > 20 {
            // the modular stays <= 1 down to absurd scales: norm below floor
            return Ok(lo);
        }
    }
    while hi - lo > tol * hi {
        let mid = 0.5 * (hi + lo);
        if rho(mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `integral_Q xi . eta` under the shared midpoint rule.
pub fn pairing(xi: &VectorField, eta: &VectorField) -> Result<f64> {
    if xi.grid != eta.grid {
        return Err(Error::Input("pairing requires fields on one grid".into()));
    }
    let d = xi.grid.dim();
    let w = xi.grid.cell_measure();
    let acc: f64 = xi
        .values
        .iter()
        .zip(&eta.values)
        .map(|(a, b)| crate::domain::dot(a, b, d))
        .sum();
    Ok(acc * w)
}

/// Hoelder-inequality diagnostic. The bound is tested with the classical
/// Luxemburg-norm constant 2; the measured ratio `|pairing|/(norm*dual)`
/// is reported rather than asserted against an unspecified constant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderReport {
    pub pairing: f64,
    pub norm_primal: f64,
    pub norm_dual: f64,
    pub ratio: f64,
    pub bound_ok: bool,
}

pub fn holder_pairing_check(
    nf: &NFunction,
    cj: &ConjugateApprox,
    xi: &VectorField,
    eta: &VectorField,
    tol: f64,
) -> Result<HolderReport> {
    let pair = pairing(xi, eta)?;
    let np = luxemburg_norm(nf, xi, 1e-10)?;
    let nd = luxemburg_norm_dual(cj, eta, 1e-10)?;
    let prod = np * nd;
    let ratio = if prod > 0.0 { pair.abs() / prod } else { 0.0 };
    Ok(HolderReport {
        pairing: pair,
        norm_primal: np,
        norm_dual: nd,
        ratio,
        bound_ok: pair.abs() <= 2.0 * prod + tol,
    })
}

/// Diagnostic row for one candidate modular limit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModularConvergenceReport {
    pub lambda: f64,
    /// `rho((z_j - z)/lambda)` per sequence member.
    pub modulars: Vec<f64>,
    /// Exceedance measures `|{ |z_j - z| > tau }|` per member, per tau.
    pub tau_grid: Vec<f64>,
    pub in_measure: Vec<Vec<f64>>,
    /// `sup_j integral_{M >= R} M(x, (z_j-z)/lambda)` per cutoff.
    pub cutoffs: Vec<f64>,
    pub tail_sup: Vec<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// Default tau grid for the in-measure proxy.
pub const TAU_GRID: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// Default lambda schedule reports are run over.
pub const LAMBDA_SCHEDULE: [f64; 5] = [4.0, 2.0, 1.0, 0.5, 0.25];

pub fn modular_convergence(
    nf: &NFunction,
    sequence: &[VectorField],
    z: &VectorField,
    lambda: f64,
    tol: f64,
) -> Result<ModularConvergenceReport> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Input(format!("lambda = {lambda} must be positive")));
    }
    check_match(nf, &z.grid)?;
    if sequence.is_empty() {
        return Err(Error::Input("empty sequence".into()));
    }
    for f in sequence {
        if f.grid != z.grid {
            return Err(Error::Input("sequence fields must share the limit's grid".into()));
        }
    }
    let grid = &z.grid;
    let d = grid.dim();
    let w = grid.cell_measure();
    let cutoffs = vec![1.0, 10.0, 100.0, 1000.0];
    let mut modulars = Vec::with_capacity(sequence.len());
    let mut in_measure = Vec::with_capacity(sequence.len());
    let mut tail_sup = vec![0.0f64; cutoffs.len()];
    let sc = grid.space_cells();
    for zj in sequence {
        let mut rho = 0.0;
        let mut exceed = vec![0.0f64; TAU_GRID.len()];
        let mut tails = vec![0.0f64; cutoffs.len()];
        for m in 0..grid.n_t {
            for s in 0..sc {
                let x = grid.x_center(s);
                let vj = zj.at(m, s);
                let v = z.at(m, s);
                let diff = [vj[0] - v[0], vj[1] - v[1]];
                let mag = norm(&diff, d);
                for (k, tau) in TAU_GRID.iter().enumerate() {
                    if mag > *tau {
                        exceed[k] += w;
                    }
                }
                let a = [diff[0] / lambda, diff[1] / lambda];
                let val = nf.eval_raw(&x, &a);
                rho += val * w;
                for (k, r) in cutoffs.iter().enumerate() {
                    if val >= *r {
                        tails[k] += val * w;
                    }
                }
            }
        }
        modulars.push(rho);
        in_measure.push(exceed);
        for k in 0..cutoffs.len() {
            tail_sup[k] = tail_sup[k].max(tails[k]);
        }
    }
    let last = *modulars.last().unwrap();
    let decreasing_tail = modulars.len() < 2
        || modulars
            .windows(2)
            .skip(modulars.len().saturating_sub(4))
            .all(|w| w[1] <= w[0] + tol);
    Ok(ModularConvergenceReport {
        lambda,
        modulars,
        tau_grid: TAU_GRID.to_vec(),
        in_measure,
        cutoffs,
        tail_sup,
        tolerance: tol,
        verdict: Verdict::from_bool(last <= tol && decreasing_tail),
    })
}

/// Piecewise-constant approximations of `xi` on coarsened grid partitions.
/// For each level `n` the grid is grouped into at most `n` slabs per axis
/// (time included); levels are cell averages, and the reported error is
/// `rho((xi - xi_n)/lambda)`.
pub fn simple_approximation(
    xi: &VectorField,
    levels: &[usize],
    nf: &NFunction,
    lambda: f64,
) -> Result<Vec<(SimpleField, f64)>> {
    check_match(nf, &xi.grid)?;
    if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("levels must be nonempty and increasing".into()));
    }
    if levels[0] == 0 {
        return Err(Error::Input("cannot coarsen below one cell".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Input("lambda must be positive".into()));
    }
    let grid = &xi.grid;
    let d = grid.dim();
    let mut out = Vec::with_capacity(levels.len());
    for &n in levels {
        let gt = n.min(grid.n_t);
        let g1 = n.min(grid.n_x[0]);
        let g2 = if d == 2 { n.min(grid.n_x[1]) } else { 1 };
        let group = |i: usize, cells: usize, groups: usize| -> usize { i * groups / cells };
        let n_parts = gt * g1 * g2;
        let mut sums = vec![[0.0f64; 2]; n_parts];
        let mut counts = vec![0usize; n_parts];
        let mut part_of_cell = Vec::with_capacity(grid.total_cells());
        for m in 0..grid.n_t {
            let pt = group(m, grid.n_t, gt);
            for s in 0..grid.space_cells() {
                let i1 = s % grid.n_x[0];
                let i2 = s / grid.n_x[0];
                let p = pt + gt * (group(i1, grid.n_x[0], g1) + g1 * group(i2, grid.n_x[1], g2));
                part_of_cell.push(p as u32);
                let v = xi.at(m, s);
                sums[p][0] += v[0];
                sums[p][1] += v[1];
                counts[p] += 1;
            }
        }
        let levels_vec: Vec<[f64; 2]> = sums
            .iter()
            .zip(&counts)
            .map(|(s, c)| {
                let c = (*c).max(1) as f64;
                [s[0] / c, s[1] / c]
            })
            .collect();
        let simple = SimpleField {
            grid: grid.clone(),
            part_of_cell,
            levels: levels_vec,
        };
        simple.validate()?;
        // rho((xi - xi_n)/lambda)
        let approx = simple.to_vector_field();
        let mut diff = xi.clone();
        for (dv, av) in diff.values.iter_mut().zip(&approx.values) {
            dv[0] -= av[0];
            dv[1] -= av[1];
        }
        let err = modular_unchecked(nf, &diff, lambda);
        out.push((simple, err));
    }
    Ok(out)
}
