//! Energy, weak-form, inclusion, and refinement diagnostics over computed
//! trajectories.

use crate::conjugate::ConjugateApprox;
use crate::domain::{dot, norm, Vec2};
use crate::error::{Error, Result};
use crate::graph::{MonotoneGraph, Route};
use crate::grid::{SpaceTimeGrid, VectorField};
use crate::mollify::{time_mollify_scalar, Kernel};
use crate::report::Verdict;
use serde::{Deserialize, Serialize};

use super::{assemble_galerkin, integrate, GalerkinSystem, ProblemSpec, SchemeParams, Trajectory};

/// Discrete energy bookkeeping of one trajectory.
///
/// The per-step margin is the slack in the implicit-Euler energy balance
///
/// `1/2|c^{m+1}|^2 - 1/2|c^m|^2 + dt <A^{m+1}, grad u^{m+1}> <= dt <f, u^{m+1}>`,
///
/// non-negative (up to the Picard residual) because the scheme dissipates
/// `1/2|c^{m+1}-c^m|^2` per step and the stage equation is tested with its
/// own solution under the shared quadrature.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyReport {
    pub dt: f64,
    /// `1/2 |c^m|^2` per node.
    pub energy_half: Vec<f64>,
    pub per_step_margin: Vec<f64>,
    pub worst_step_margin: f64,
    /// `integral_Q M(x, grad u)` (cell rule).
    pub dissipation_m: f64,
    /// `integral_Q M*(x, A)` (cell rule).
    pub dissipation_mstar: f64,
    /// `integral_Q A . grad u` under the cell rule and the node rule.
    pub pairing_cell: f64,
    pub pairing_node: f64,
    pub source_work: f64,
    pub k_mass: f64,
    /// `||u0||^2 + sup|f| + integral k`.
    pub data_norm: f64,
    /// `(sup_s ||u(s)||^2 + c_* integral (M + M*)) / data_norm`.
    pub energy_ratio: f64,
    /// Worst deviation of the cumulative balance from the dissipated
    /// `1/2 sum |dc|^2` ledger; Picard-residual sized.
    pub balance_defect_max: f64,
    /// First-step energy identity gap (the `s0 -> 0` passage).
    pub s0_gap: f64,
    pub equicontinuity_gaps: Vec<f64>,
    /// Modulus `L(g) = max |c_i(s1) - c_i(s2)|` over `|s1-s2| <= g`.
    pub equicontinuity: Vec<f64>,
    /// `max_m integral_m^{m+g} ||A||_{L1(Omega)} dt` per gap.
    pub a_l1_modulus: Vec<f64>,
    /// Max deviation between plain and time-mollified node energies on the
    /// mollifier's valid window, when the cross-check is enabled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_mollified_gap: Option<f64>,
}

pub fn energy_report(
    traj: &Trajectory,
    p: &ProblemSpec,
    sys: &GalerkinSystem,
    cj: &ConjugateApprox,
    time_check_eps: Option<f64>,
) -> Result<EnergyReport> {
    let grid = &traj.basis.grid;
    let n_t = grid.n_t;
    let dt = traj.dt;
    let sc = grid.space_cells();
    let w_space = grid.space_cell_measure();
    let d = grid.dim();

    let energy_half: Vec<f64> = (0..=n_t).map(|m| traj.energy_half(m)).collect();

    // node-rule inner products per step (A and f tested with u^{m+1})
    let mut per_step_margin = Vec::with_capacity(n_t);
    let mut pairing_node = 0.0;
    let mut balance_defect_max = 0.0f64;
    let mut running_balance = 0.0; // sum dt(<A,grad u> - <f,u>) + 1/2|dc|^2 ledger
    let mut s0_gap = 0.0;
    for m in 0..n_t {
        let t_next = (m + 1) as f64 * dt;
        let c_next = &traj.coeffs[m + 1];
        let mut a_dot_grad = 0.0;
        let mut f_dot_u = 0.0;
        for s in 0..sc {
            let x = grid.x_center(s);
            let gu = grad_at(traj, c_next, s);
            let a = sys.flux_at(t_next, c_next, s)?;
            a_dot_grad += dot(&a, &gu, d) * w_space;
            let uval = value_at(traj, c_next, s);
            f_dot_u += p.source_at(t_next, &x) * uval * w_space;
        }
        pairing_node += dt * a_dot_grad;
        let de = energy_half[m + 1] - energy_half[m];
        let margin = dt * f_dot_u - (de + dt * a_dot_grad);
        if m == 0 {
            s0_gap = -margin;
        }
        per_step_margin.push(margin);
        let dc2: f64 = traj.coeffs[m + 1]
            .iter()
            .zip(&traj.coeffs[m])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        running_balance += margin - 0.5 * dc2;
        balance_defect_max = balance_defect_max.max(running_balance.abs());
    }
    let worst_step_margin = per_step_margin.iter().cloned().fold(f64::INFINITY, f64::min);

    // cell-rule integrals over the reconstruction
    let grad = traj.grad_field();
    let a_field = traj.a_field(sys)?;
    let w_cell = grid.cell_measure();
    let mut dissipation_m = 0.0;
    let mut dissipation_mstar = 0.0;
    let mut pairing_cell = 0.0;
    let mut source_work = 0.0;
    let u_field = traj.u_field();
    for m in 0..n_t {
        let t = grid.t_center(m);
        for s in 0..sc {
            let x = grid.x_center(s);
            let gu = grad.at(m, s);
            let av = a_field.at(m, s);
            dissipation_m += p.coercivity.nf.eval_raw(&x, gu) * w_cell;
            dissipation_mstar += cj.eval_raw(&x, av)? * w_cell;
            pairing_cell += dot(av, gu, d) * w_cell;
            source_work += p.source_at(t, &x) * u_field.at(m, s) * w_cell;
        }
    }

    let u0 = p.u0_values()?;
    let u0_l2_sq = u0.iter().map(|v| v * v).sum::<f64>() * w_space;
    let k_mass = p.k_mass();
    let data_norm = u0_l2_sq + p.sup_source() + k_mass;
    let sup_energy2 = energy_half.iter().cloned().fold(0.0, f64::max) * 2.0;
    let lhs = sup_energy2 + p.coercivity.c_star * (dissipation_m + dissipation_mstar);
    let energy_ratio = if data_norm > 1e-300 { lhs / data_norm } else { 0.0 };

    // equicontinuity modulus of the coefficients and the L1-in-time
    // modulus of ||A||_{L1(Omega)}
    let mut gaps = Vec::new();
    let mut g = 1usize;
    while g <= n_t {
        gaps.push(g);
        g *= 2;
    }
    if *gaps.last().unwrap() != n_t {
        gaps.push(n_t);
    }
    let mut equicontinuity = Vec::with_capacity(gaps.len());
    let mut running = 0.0f64;
    let mut gap_idx = 0;
    for j in 1..=n_t {
        let mut worst = 0.0f64;
        for m in 0..=n_t - j {
            for i in 0..traj.basis.n {
                worst = worst.max((traj.coeffs[m + j][i] - traj.coeffs[m][i]).abs());
            }
        }
        running = running.max(worst);
        while gap_idx < gaps.len() && gaps[gap_idx] == j {
            equicontinuity.push(running);
            gap_idx += 1;
        }
    }
    let a_l1_per_cell: Vec<f64> = (0..n_t)
        .map(|m| {
            (0..sc)
                .map(|s| norm(a_field.at(m, s), d))
                .sum::<f64>()
                * w_space
                * dt
        })
        .collect();
    let mut prefix = vec![0.0];
    for v in &a_l1_per_cell {
        prefix.push(prefix.last().unwrap() + v);
    }
    let a_l1_modulus: Vec<f64> = gaps
        .iter()
        .map(|g| {
            (0..=n_t - g)
                .map(|m| prefix[m + g] - prefix[m])
                .fold(0.0, f64::max)
        })
        .collect();

    let time_mollified_gap = match time_check_eps {
        None => None,
        Some(eps_t) => {
            let k1 = Kernel::standard(1)?;
            let tm = time_mollify_scalar(&u_field, eps_t, &k1)?;
            let mut worst = 0.0f64;
            for m in tm.window.0..tm.window.1 {
                let e_plain = 0.5 * u_field.l2_sq_at(m);
                let e_moll = 0.5 * tm.field.l2_sq_at(m);
                worst = worst.max((e_plain - e_moll).abs());
            }
            Some(worst)
        }
    };

    Ok(EnergyReport {
        dt,
        energy_half,
        per_step_margin,
        worst_step_margin,
        dissipation_m,
        dissipation_mstar,
        pairing_cell,
        pairing_node,
        source_work,
        k_mass,
        data_norm,
        energy_ratio,
        balance_defect_max,
        s0_gap,
        equicontinuity_gaps: gaps.iter().map(|g| *g as f64 * dt).collect(),
        equicontinuity,
        a_l1_modulus,
        time_mollified_gap,
    })
}

fn grad_at(traj: &Trajectory, c: &[f64], s: usize) -> Vec2 {
    let mut g = [0.0; 2];
    for i in 0..traj.basis.n {
        let gr = traj.basis.grad(i, s);
        g[0] += c[i] * gr[0];
        g[1] += c[i] * gr[1];
    }
    g
}

fn value_at(traj: &Trajectory, c: &[f64], s: usize) -> f64 {
    (0..traj.basis.n).map(|i| c[i] * traj.basis.value(i, s)).sum()
}

/// Smooth-in-time cutoff `psi(t) = up((t - rise_start)/rise_width) *
/// down((fall_end - t)/fall_width)` built from the quintic smoothstep;
/// `fall_end <= T` keeps the support in `(-inf, T)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TimeCutoff {
    pub rise_start: f64,
    pub rise_width: f64,
    pub fall_end: f64,
    pub fall_width: f64,
}

fn smoothstep(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

fn smoothstep_d(tau: f64) -> f64 {
    if !(0.0..=1.0).contains(&tau) {
        return 0.0;
    }
    30.0 * tau * tau * (1.0 - tau) * (1.0 - tau)
}

impl TimeCutoff {
    /// Flat from `t = 0`, quintic descent hitting zero at `fall_end`.
    pub fn standard(horizon: f64) -> Self {
        TimeCutoff {
            rise_start: -1.0,
            rise_width: 0.5,
            fall_end: 0.75 * horizon,
            fall_width: 0.25 * horizon,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        smoothstep((t - self.rise_start) / self.rise_width)
            * smoothstep((self.fall_end - t) / self.fall_width)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let up = (t - self.rise_start) / self.rise_width;
        let dn = (self.fall_end - t) / self.fall_width;
        smoothstep_d(up) / self.rise_width * smoothstep(dn)
            - smoothstep(up) * smoothstep_d(dn) / self.fall_width
    }
}

/// Test function `phi(t,x) = psi(t) w_q(x)` with `w_q` a normalized sine
/// product (not necessarily inside the trajectory's basis span).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TestFunction {
    pub mode: [usize; 2],
    pub cutoff: TimeCutoff,
}

pub fn builtin_test_suite(grid: &SpaceTimeGrid, count: usize) -> Vec<TestFunction> {
    (1..=count)
        .map(|q| TestFunction {
            mode: [q, if grid.dim() == 2 { q } else { 0 }],
            cutoff: TimeCutoff::standard(grid.horizon),
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakResidualRow {
    pub mode: [usize; 2],
    pub residual: f64,
    /// `||phi||_inf + ||phi_t||_inf + ||grad phi||_inf` on the grid.
    pub scale: f64,
}

/// `integral_Q (-u phi_t + A . grad phi - f phi) + integral_Omega u0 phi(0)`
/// per test function; small residuals certify the weak form up to the
/// scheme's `O(dt + h^2)` consistency error.
pub fn weak_residual(
    traj: &Trajectory,
    p: &ProblemSpec,
    sys: &GalerkinSystem,
    tests: &[TestFunction],
) -> Result<Vec<WeakResidualRow>> {
    let grid = &traj.basis.grid;
    let d = grid.dim();
    let sc = grid.space_cells();
    let w_cell = grid.cell_measure();
    let w_space = grid.space_cell_measure();
    if tests.is_empty() {
        return Err(Error::Input("no test functions supplied".into()));
    }
    let u = traj.u_field();
    let a = traj.a_field(sys)?;
    let u0 = p.u0_values()?;
    let mut out = Vec::with_capacity(tests.len());
    for tf in tests {
        if tf.cutoff.value(grid.horizon) > 1e-12 {
            return Err(Error::Input(
                "test cutoff must vanish at t = T (compact support in (-inf, T))".into(),
            ));
        }
        // spatial factor and gradient
        let mut amp = 1.0;
        for i in 0..d {
            amp *= (2.0 / grid.domain.lengths[i]).sqrt();
        }
        let mut omega = vec![0.0; sc];
        let mut omega_grad = vec![[0.0; 2]; sc];
        for s in 0..sc {
            let x = grid.x_center(s);
            let mut val = amp;
            let mut gr = [amp, amp];
            for i in 0..d {
                let karg = tf.mode[i] as f64 * std::f64::consts::PI / grid.domain.lengths[i];
                let (si, co) = (karg * x[i]).sin_cos();
                val *= si;
                for b in 0..d {
                    gr[b] *= if b == i { karg * co } else { si };
                }
            }
            omega[s] = val;
            omega_grad[s] = [gr[0], if d == 2 { gr[1] } else { 0.0 }];
        }
        let mut residual = 0.0;
        let mut sup_phi = 0.0f64;
        let mut sup_phi_t = 0.0f64;
        let mut sup_phi_g = 0.0f64;
        for m in 0..grid.n_t {
            let t = grid.t_center(m);
            let psi = tf.cutoff.value(t);
            let psi_d = tf.cutoff.deriv(t);
            for s in 0..sc {
                let x = grid.x_center(s);
                let phi_t = psi_d * omega[s];
                let gphi = [psi * omega_grad[s][0], psi * omega_grad[s][1]];
                residual += w_cell
                    * (-u.at(m, s) * phi_t + dot(a.at(m, s), &gphi, d)
                        - p.source_at(t, &x) * psi * omega[s]);
                sup_phi = sup_phi.max((psi * omega[s]).abs());
                sup_phi_t = sup_phi_t.max(phi_t.abs());
                sup_phi_g = sup_phi_g.max(norm(&gphi, d));
            }
        }
        // initial-datum pairing; it enters with the sign that makes the
        // identity vanish on smooth solutions (integration by parts in t
        // moves u0 phi(0) to the source side)
        let psi0 = tf.cutoff.value(0.0);
        for s in 0..sc {
            residual -= u0[s] * psi0 * omega[s] * w_space;
        }
        out.push(WeakResidualRow {
            mode: tf.mode,
            residual,
            scale: sup_phi + sup_phi_t + sup_phi_g,
        });
    }
    Ok(out)
}

/// Where inclusion margins are probed: graph elements along signed rays
/// plus the representation's own nodes.
#[derive(Clone, Debug)]
pub struct InclusionPlan {
    pub ray_mags: Vec<f64>,
    pub dirs: Vec<Vec2>,
    pub tol: f64,
    pub membership_tol: f64,
}

impl InclusionPlan {
    pub fn standard(dim: usize, tol: f64) -> Self {
        let mut dirs = vec![[1.0, 0.0], [-1.0, 0.0]];
        if dim == 2 {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            dirs.extend_from_slice(&[[0.0, 1.0], [0.0, -1.0], [s, s], [-s, s]]);
        }
        InclusionPlan {
            ray_mags: vec![0.5, 1.0, 2.0, 5.0],
            dirs,
            tol,
            membership_tol: tol,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InclusionReport {
    /// `min` over cells of `min_elements (A - A_1).(grad u - xi_1)`.
    pub worst_margin: f64,
    pub worst_cell_t: f64,
    pub worst_cell_x: Vec<f64>,
    pub cells_below_tol: usize,
    /// Worst distance of `(grad u, A)` to the value set at `grad u`.
    pub membership_max_dist: f64,
    pub membership_violations: usize,
    pub pairing: f64,
    pub tol: f64,
    pub verdict: Verdict,
}

fn graph_probe_elements(
    g: &MonotoneGraph,
    t: f64,
    x: &Vec2,
    plan: &InclusionPlan,
) -> Result<Vec<(Vec2, Vec2)>> {
    let d = g.dim;
    let mut mags = plan.ray_mags.clone();
    if let crate::graph::GraphKind::Radial(r) = &g.kind {
        mags.extend(r.nodes.iter().map(|n| n.s));
    }
    mags.push(0.0);
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    let mut out = Vec::new();
    for m in mags {
        if m == 0.0 {
            let set = g.elements(t, x, &[0.0, 0.0])?;
            for a in set.representatives(d) {
                out.push(([0.0, 0.0], a));
            }
            continue;
        }
        for dir in &plan.dirs {
            let xi = [m * dir[0], m * dir[1]];
            let set = g.elements(t, x, &xi)?;
            for a in set.representatives(d) {
                out.push((xi, a));
            }
        }
    }
    Ok(out)
}

/// Per-cell monotonicity margins of the trajectory pair `(grad u, A)`
/// against sampled graph elements, plus the set-membership distance (the
/// binding detector for pointwise corruption) and the energy pairing used
/// by the limsup comparison across refinements.
pub fn minty_inclusion_check(
    traj: &Trajectory,
    p: &ProblemSpec,
    sys: &GalerkinSystem,
    plan: &InclusionPlan,
) -> Result<InclusionReport> {
    let grad = traj.grad_field();
    let a_field = traj.a_field(sys)?;
    minty_inclusion_of_fields(&grad, &a_field, &p.graph, plan)
}

/// Same check over explicitly supplied fields (used to audit corrupted or
/// externally produced pairs).
pub fn minty_inclusion_of_fields(
    grad: &VectorField,
    a_field: &VectorField,
    graph: &MonotoneGraph,
    plan: &InclusionPlan,
) -> Result<InclusionReport> {
    let grid = &grad.grid;
    let d = grid.dim();
    let sc = grid.space_cells();
    let w_cell = grid.cell_measure();
    let frozen_elements = if graph.gamma.is_none() {
        Some(graph_probe_elements(graph, 0.0, &grid.x_center(0), plan)?)
    } else {
        None
    };
    let mut worst = (f64::INFINITY, 0.0, [0.0; 2]);
    let mut below = 0usize;
    let mut mem_max = 0.0f64;
    let mut mem_viol = 0usize;
    let mut pairing = 0.0;
    let mut local;
    for m in 0..grid.n_t {
        let t = grid.t_center(m);
        for s in 0..sc {
            let x = grid.x_center(s);
            let gu = grad.at(m, s);
            let av = a_field.at(m, s);
            pairing += dot(av, gu, d) * w_cell;
            let elements: &[(Vec2, Vec2)] = match &frozen_elements {
                Some(e) => e,
                None => {
                    local = graph_probe_elements(graph, t, &x, plan)?;
                    &local
                }
            };
            let mut margin = f64::INFINITY;
            for (xi1, a1) in elements {
                let v = (av[0] - a1[0]) * (gu[0] - xi1[0]) + (av[1] - a1[1]) * (gu[1] - xi1[1]);
                if v < margin {
                    margin = v;
                }
            }
            if margin < worst.0 {
                worst = (margin, t, x);
            }
            if margin < -plan.tol {
                below += 1;
            }
            let set = graph.elements(t, &x, gu)?;
            let dist = set.distance(av, d);
            mem_max = mem_max.max(dist);
            if dist > plan.membership_tol {
                mem_viol += 1;
            }
        }
    }
    Ok(InclusionReport {
        worst_margin: worst.0,
        worst_cell_t: worst.1,
        worst_cell_x: worst.2[..d].to_vec(),
        cells_below_tol: below,
        membership_max_dist: mem_max,
        membership_violations: mem_viol,
        pairing,
        tol: plan.tol,
        verdict: Verdict::from_bool(below == 0),
    })
}

/// One solve of a refinement study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyRow {
    pub n: usize,
    pub eps: f64,
    pub dt: f64,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub sup_energy2: f64,
    pub dissipation_m: f64,
    pub dissipation_mstar: f64,
    pub pairing: f64,
    pub energy_ratio: f64,
    pub worst_step_margin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxisStudy {
    pub axis: String,
    pub values: Vec<f64>,
    /// L2 distance between consecutive solutions: full `L2(Q)` when the
    /// time grids coincide, else `L2(Omega)` at the final time through the
    /// shared sine basis.
    pub u_diffs: Vec<f64>,
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub axes: Vec<AxisStudy>,
    pub ratio_bound: f64,
    /// Spread of the measured energy-inequality constants across runs.
    pub energy_ratio_spread: f64,
    pub verdict: Verdict,
}

/// Run the `(n, eps, dt)` product study with Cauchy diagnostics along each
/// refinement axis (holding the other axes at their finest values).
pub fn refinement_study(
    p: &ProblemSpec,
    n_list: &[usize],
    eps_list: &[f64],
    dt_list: &[f64],
    kernel: &Kernel,
    route: Route,
    scheme: &SchemeParams,
) -> Result<StudyReport> {
    if n_list.is_empty() || eps_list.is_empty() || dt_list.is_empty() {
        return Err(Error::Input("refinement lists must be nonempty".into()));
    }
    struct RunOut {
        row: StudyRow,
        traj: Option<Trajectory>,
    }
    let mut runs: Vec<RunOut> = Vec::new();
    for &n in n_list {
        for &eps in eps_list {
            for &dt in dt_list {
                let result = run_one(p, n, eps, dt, kernel, route, scheme);
                let (row, traj) = match result {
                    Ok((row, traj)) => (row, Some(traj)),
                    Err(e) => (
                        StudyRow {
                            n,
                            eps,
                            dt,
                            ok: false,
                            error: Some(e.to_string()),
                            sup_energy2: f64::NAN,
                            dissipation_m: f64::NAN,
                            dissipation_mstar: f64::NAN,
                            pairing: f64::NAN,
                            energy_ratio: f64::NAN,
                            worst_step_margin: f64::NAN,
                        },
                        None,
                    ),
                };
                runs.push(RunOut { row, traj });
            }
        }
    }
    let find = |n: usize, eps: f64, dt: f64| -> Option<&RunOut> {
        runs.iter()
            .find(|r| r.row.n == n && r.row.eps == eps && r.row.dt == dt)
    };
    let mut axes = Vec::new();
    let mut all_ratios_ok = true;
    let axis_specs: [(&str, Vec<(usize, f64, f64)>); 3] = [
        (
            "n",
            n_list
                .iter()
                .map(|&n| (n, *eps_list.last().unwrap(), *dt_list.last().unwrap()))
                .collect(),
        ),
        (
            "eps",
            eps_list
                .iter()
                .map(|&e| (*n_list.last().unwrap(), e, *dt_list.last().unwrap()))
                .collect(),
        ),
        (
            "dt",
            dt_list
                .iter()
                .map(|&dt| (*n_list.last().unwrap(), *eps_list.last().unwrap(), dt))
                .collect(),
        ),
    ];
    for (name, params) in axis_specs {
        if params.len() < 2 {
            continue;
        }
        let mut diffs = Vec::new();
        for pair in params.windows(2) {
            let a = find(pair[0].0, pair[0].1, pair[0].2);
            let b = find(pair[1].0, pair[1].1, pair[1].2);
            match (a.and_then(|r| r.traj.as_ref()), b.and_then(|r| r.traj.as_ref())) {
                (Some(ta), Some(tb)) => diffs.push(traj_distance(ta, tb)),
                _ => diffs.push(f64::NAN),
            }
        }
        let ratios: Vec<f64> = diffs.windows(2).map(|w| w[1] / w[0]).collect();
        for r in &ratios {
            if !(*r <= 0.7) {
                all_ratios_ok = false;
            }
        }
        axes.push(AxisStudy {
            axis: name.to_string(),
            values: match name {
                "n" => params.iter().map(|p| p.0 as f64).collect(),
                "eps" => params.iter().map(|p| p.1).collect(),
                _ => params.iter().map(|p| p.2).collect(),
            },
            u_diffs: diffs,
            ratios,
        });
    }
    let ok_rows: Vec<&StudyRow> = runs.iter().map(|r| &r.row).filter(|r| r.ok).collect();
    let all_ok = ok_rows.len() == runs.len();
    let spread = {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for r in &ok_rows {
            lo = lo.min(r.energy_ratio);
            hi = hi.max(r.energy_ratio);
        }
        if lo.is_finite() && lo > 0.0 {
            hi / lo
        } else {
            f64::NAN
        }
    };
    let uniform = spread.is_finite() && spread <= 2.0;
    Ok(StudyReport {
        rows: runs.into_iter().map(|r| r.row).collect(),
        axes,
        ratio_bound: 0.7,
        energy_ratio_spread: spread,
        verdict: Verdict::from_bool(all_ok && all_ratios_ok && uniform),
    })
}

fn run_one(
    p: &ProblemSpec,
    n: usize,
    eps: f64,
    dt: f64,
    kernel: &Kernel,
    route: Route,
    scheme: &SchemeParams,
) -> Result<(StudyRow, Trajectory)> {
    let horizon = p.grid.horizon;
    let steps = (horizon / dt).round();
    if (steps * dt - horizon).abs() > 1e-9 * horizon || steps < 2.0 {
        return Err(Error::Parameter(format!("dt = {dt} does not divide T = {horizon}")));
    }
    let grid = SpaceTimeGrid::new(
        p.grid.domain.clone(),
        horizon,
        steps as usize,
        &p.grid.n_x[..p.grid.dim()],
    )?;
    let mut spec = p.clone();
    spec.grid = grid;
    let sys = assemble_galerkin(&spec, n, eps, kernel, route)?;
    let traj = integrate(&sys, scheme)?;
    let cj = build_conjugator(&spec, &traj, &sys)?;
    let er = energy_report(&traj, &spec, &sys, &cj, None)?;
    let row = StudyRow {
        n,
        eps,
        dt,
        ok: true,
        error: None,
        sup_energy2: er.energy_half.iter().cloned().fold(0.0, f64::max) * 2.0,
        dissipation_m: er.dissipation_m,
        dissipation_mstar: er.dissipation_mstar,
        pairing: er.pairing_cell,
        energy_ratio: er.energy_ratio,
        worst_step_margin: er.worst_step_margin,
    };
    Ok((row, traj))
}

/// Conjugator for trajectory-scale integrals: radially cached when the
/// integrand allows it, direct otherwise.
pub fn build_conjugator(
    p: &ProblemSpec,
    traj: &Trajectory,
    sys: &GalerkinSystem,
) -> Result<ConjugateApprox> {
    let base = ConjugateApprox::new(p.coercivity.nf.clone());
    if p.coercivity.nf.x_independent() && p.coercivity.nf.isotropic() {
        let a_field = traj.a_field(sys)?;
        let d = p.grid.dim();
        let bmax = a_field
            .values
            .iter()
            .map(|v| norm(v, d))
            .fold(0.0, f64::max)
            .max(1.0)
            * 1.05;
        base.with_radial_cache(bmax, 4097)
    } else {
        Ok(base)
    }
}

fn traj_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    if a.basis.grid == b.basis.grid && a.basis.n == b.basis.n {
        // full L2(Q) via the shared orthonormal basis on cell coefficients
        let mut acc = 0.0;
        for m in 0..a.basis.grid.n_t {
            let ca = a.cell_coeffs(m);
            let cb = b.cell_coeffs(m);
            acc += ca
                .iter()
                .zip(&cb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                * a.dt;
        }
        return acc.sqrt();
    }
    // final-time L2(Omega) distance through zero-padded coefficients
    let ca = a.coeffs.last().unwrap();
    let cb = b.coeffs.last().unwrap();
    let n = ca.len().max(cb.len());
    let mut acc = 0.0;
    for i in 0..n {
        let x = ca.get(i).copied().unwrap_or(0.0);
        let y = cb.get(i).copied().unwrap_or(0.0);
        acc += (x - y) * (x - y);
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SpatialDomain;
    use crate::expr::Expr;
    use crate::graph::{CoercivityParams, GraphKind, RadialMonotone, SelectionRule};
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
            graph: crate::graph::MonotoneGraph::identity(1),
            rule: SelectionRule::MinimalNorm,
            coercivity: CoercivityParams {
                c_star: 0.5,
                k: Expr::parse("0").unwrap(),
                nf,
            },
        }
    }

    fn solve(p: &ProblemSpec, n: usize, eps: f64) -> (GalerkinSystem, Trajectory) {
        let k = Kernel::standard(1).unwrap();
        let sys = assemble_galerkin(p, n, eps, &k, Route::Direct).unwrap();
        let traj = integrate(&sys, &SchemeParams::default()).unwrap();
        (sys, traj)
    }

    #[test]
    fn energy_report_zero_data() {
        let mut p = heat_spec(16, 32);
        p.u0 = Expr::parse("0").unwrap();
        let (sys, traj) = solve(&p, 4, 0.1);
        let cj = build_conjugator(&p, &traj, &sys).unwrap();
        let er = energy_report(&traj, &p, &sys, &cj, None).unwrap();
        assert!(er.dissipation_m.abs() < 1e-20);
        assert!(er.pairing_cell.abs() < 1e-20);
        assert!(er.source_work.abs() < 1e-20);
        assert_eq!(er.energy_ratio, 0.0);
    }

    #[test]
    fn energy_report_linear_heat_closed_forms() {
        // u = e^{-t} sin x: the node-rule pairing telescopes against the
        // implicit-Euler recursion and the energy is monotone
        let p = heat_spec(512, 128);
        let (sys, traj) = solve(&p, 4, 0.1);
        let cj = build_conjugator(&p, &traj, &sys).unwrap();
        let er = energy_report(&traj, &p, &sys, &cj, Some(0.05)).unwrap();
        assert!(er.worst_step_margin >= -1e-10, "{}", er.worst_step_margin);
        // f = 0: energy non-increasing
        for w in er.energy_half.windows(2) {
            assert!(w[1] <= w[0] + 1e-14);
        }
        // cell-rule pairing approximates (pi/4)(1 - e^{-2}) at first order
        let exact = std::f64::consts::FRAC_PI_4 * (1.0 - (-2.0f64).exp());
        assert!(
            (er.pairing_cell - exact).abs() < 6e-3,
            "{} vs {exact}",
            er.pairing_cell
        );
        assert!(er.balance_defect_max < 1e-9, "{}", er.balance_defect_max);
        // equicontinuity modulus is nondecreasing with L(0+) small
        for w in er.equicontinuity.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(er.equicontinuity[0] < 5e-3);
        for w in er.a_l1_modulus.windows(2) {
            assert!(w[1] >= w[0]);
        }
        let gap = er.time_mollified_gap.unwrap();
        assert!(gap < 5e-3, "time-mollified gap {gap}");
    }

    #[test]
    fn equicontinuity_modulus_shrinks_with_dt() {
        let coarse = heat_spec(64, 64);
        let fine = heat_spec(256, 64);
        let (sys_c, traj_c) = solve(&coarse, 4, 0.1);
        let (sys_f, traj_f) = solve(&fine, 4, 0.1);
        let cj_c = build_conjugator(&coarse, &traj_c, &sys_c).unwrap();
        let cj_f = build_conjugator(&fine, &traj_f, &sys_f).unwrap();
        let er_c = energy_report(&traj_c, &coarse, &sys_c, &cj_c, None).unwrap();
        let er_f = energy_report(&traj_f, &fine, &sys_f, &cj_f, None).unwrap();
        assert!(er_f.equicontinuity[0] < er_c.equicontinuity[0]);
    }

    #[test]
    fn weak_residual_small_for_computed_heat() {
        let p = heat_spec(500, 128);
        let (sys, traj) = solve(&p, 8, 0.1);
        let tests = builtin_test_suite(&p.grid, 3);
        let rows = weak_residual(&traj, &p, &sys, &tests).unwrap();
        for r in &rows {
            assert!(
                r.residual.abs() <= 1e-3 * r.scale.max(1.0),
                "mode {:?}: {}",
                r.mode,
                r.residual
            );
        }
    }

    #[test]
    fn weak_residual_drops_u0_term_for_late_cutoffs() {
        let p = heat_spec(64, 32);
        let (sys, traj) = solve(&p, 4, 0.1);
        // identical mode, one cutoff flat from 0 and one supported late
        let late = TestFunction {
            mode: [1, 0],
            cutoff: TimeCutoff {
                rise_start: 0.5,
                rise_width: 0.2,
                fall_end: 0.9,
                fall_width: 0.1,
            },
        };
        assert!(late.cutoff.value(0.0) == 0.0);
        let rows = weak_residual(&traj, &p, &sys, &[late]).unwrap();
        assert!(rows[0].residual.is_finite());

        // zero test function: exactly zero residual
        let zero_phi = TestFunction {
            mode: [1, 0],
            cutoff: TimeCutoff {
                rise_start: 2.0,
                rise_width: 0.1,
                fall_end: 0.5,
                fall_width: 0.25,
            },
        };
        let rows = weak_residual(&traj, &p, &sys, &[zero_phi]).unwrap();
        assert_eq!(rows[0].residual, 0.0);

        // cutoff alive at T is rejected
        let bad = TestFunction {
            mode: [1, 0],
            cutoff: TimeCutoff {
                rise_start: -1.0,
                rise_width: 0.5,
                fall_end: 1.5,
                fall_width: 0.2,
            },
        };
        assert!(weak_residual(&traj, &p, &sys, &[bad]).is_err());
    }

    #[test]
    fn inclusion_check_identity_graph() {
        let p = heat_spec(32, 32);
        let (sys, traj) = solve(&p, 4, 0.1);
        let plan = InclusionPlan::standard(1, 1e-9);
        let rep = minty_inclusion_check(&traj, &p, &sys, &plan).unwrap();
        assert!(rep.verdict.passed(), "{rep:?}");
        assert!(rep.worst_margin >= 0.0);
        assert!(rep.membership_max_dist < 1e-10);
    }

    #[test]
    fn inclusion_membership_catches_single_cell_corruption() {
        // A perturbed by +1 at one cell with grad u = 0: every sampled ray
        // margin stays non-negative, yet membership pins the violation
        let p = heat_spec(8, 16);
        let (sys, traj) = solve(&p, 2, 0.1);
        let grad = VectorField::zeros(&p.grid);
        let mut a_field = traj.a_field(&sys).unwrap();
        for v in a_field.values.iter_mut() {
            *v = [0.0, 0.0];
        }
        a_field.values[5] = [1.0, 0.0];
        let mut plan = InclusionPlan::standard(1, 1e-9);
        plan.ray_mags = vec![1.0, 2.0, 5.0];
        let rep =
            minty_inclusion_of_fields(&grad, &a_field, &p.graph, &plan).unwrap();
        assert!(
            rep.worst_margin >= -1e-12,
            "ray margins unexpectedly negative: {}",
            rep.worst_margin
        );
        assert_eq!(rep.membership_violations, 1);
        assert!((rep.membership_max_dist - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_study_linear_heat_dt_axis() {
        let p = heat_spec(100, 64);
        let k = Kernel::standard(1).unwrap();
        let rep = refinement_study(
            &p,
            &[6],
            &[0.1],
            &[0.04, 0.02, 0.01, 0.005],
            &k,
            Route::Direct,
            &SchemeParams::default(),
        )
        .unwrap();
        let dt_axis = rep.axes.iter().find(|a| a.axis == "dt").unwrap();
        for r in &dt_axis.ratios {
            assert!(
                (0.35..=0.7).contains(r),
                "implicit Euler refinement ratio {r} outside [0.35, 0.7]"
            );
        }
        assert!(rep.verdict.passed(), "{rep:?}");
    }

    #[test]
    fn refinement_study_zero_data_all_zero() {
        let mut p = heat_spec(16, 32);
        p.u0 = Expr::parse("0").unwrap();
        let k = Kernel::standard(1).unwrap();
        let rep = refinement_study(
            &p,
            &[2, 4],
            &[0.1],
            &[0.1],
            &k,
            Route::Direct,
            &SchemeParams::default(),
        )
        .unwrap();
        let n_axis = rep.axes.iter().find(|a| a.axis == "n").unwrap();
        for d in &n_axis.u_diffs {
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn multivalued_solve_and_inclusion_margins() {
        // sign-jump graph: run one epsilon and check inclusion at O(eps)
        let len = std::f64::consts::PI;
        let dom = SpatialDomain::unit_box(1, &[len]).unwrap();
        let grid = SpaceTimeGrid::new(dom.clone(), 0.5, 50, &[64]).unwrap();
        let nf = NFunction::power(dom, 2.0).unwrap();
        let p = ProblemSpec {
            grid,
            u0: Expr::parse("sin(x1)").unwrap(),
            source: Expr::parse("0").unwrap(),
            graph: crate::graph::MonotoneGraph::new(
                1,
                GraphKind::Radial(RadialMonotone::sign_jump_identity()),
            )
            .unwrap(),
            rule: SelectionRule::MinimalNorm,
            coercivity: CoercivityParams {
                c_star: 0.5,
                k: Expr::parse("0.25").unwrap(),
                nf,
            },
        };
        let eps = 0.1;
        let (sys, traj) = solve(&p, 6, eps);
        let plan = InclusionPlan::standard(1, 5.0 * eps);
        let rep = minty_inclusion_check(&traj, &p, &sys, &plan).unwrap();
        assert!(rep.verdict.passed(), "{rep:?}");
        assert!(rep.worst_margin >= -5.0 * eps);
        let cj = build_conjugator(&p, &traj, &sys).unwrap();
        let er = energy_report(&traj, &p, &sys, &cj, None).unwrap();
        assert!(er.worst_step_margin >= -1e-10, "{}", er.worst_step_margin);
    }
}
