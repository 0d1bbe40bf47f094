//! Numerical Legendre-Fenchel conjugation `M*(x,b) = sup_a (b.a - M(x,a))`.
//!
//! The sup is a coarse grid scan over a box sized from the growth hint
//! (doubled while the maximizer sits on the boundary), followed by
//! coordinate-wise golden-section ascent. The objective is concave for
//! convex `M`, so the refinement converges; the returned value is always
//! the max over *probed* points, hence an exact lower bound of the sup.

use crate::domain::{dot, norm, Vec2};
use crate::error::{Error, Result};
use crate::nfunc::NFunction;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Debug)]
struct RadialCache {
    b_max: f64,
    step: f64,
    values: Vec<f64>,
}

/// Conjugation engine for one N-function.
#[derive(Clone, Debug)]
pub struct ConjugateApprox {
    pub nf: NFunction,
    /// Grid points per axis in the coarse scan.
    pub grid_points: usize,
    /// Relative refinement tolerance.
    pub tol_c: f64,
    /// Overrides the growth-hint radius when set.
    pub search_radius: Option<f64>,
    max_doublings: u32,
    cache: Option<RadialCache>,
}

impl ConjugateApprox {
    pub fn new(nf: NFunction) -> Self {
        ConjugateApprox {
            nf,
            grid_points: 64,
            tol_c: 1e-8,
            search_radius: None,
            max_doublings: 40,
            cache: None,
        }
    }

    pub fn with_tol(mut self, tol_c: f64) -> Self {
        self.tol_c = tol_c;
        self
    }

    pub fn with_search_radius(mut self, r: f64) -> Self {
        self.search_radius = Some(r);
        self
    }

    /// Pre-populate a radial table of `|b| -> M*(b)` for x-independent
    /// isotropic integrands; trajectory-scale integrals read it by linear
    /// interpolation. The table is immutable afterwards, so concurrent
    /// readers never observe partial entries.
    pub fn with_radial_cache(mut self, b_max: f64, nodes: usize) -> Result<Self> {
        if !self.nf.x_independent() || !self.nf.isotropic() {
            return Err(Error::Input(
                "radial conjugate cache requires an x-independent isotropic N-function".into(),
            ));
        }
        if nodes < 2 || !(b_max > 0.0) {
            return Err(Error::Input("radial cache needs b_max > 0 and >= 2 nodes".into()));
        }
        let x0 = self.nf.domain.star_center;
        let step = b_max / (nodes - 1) as f64;
        let mut values = Vec::with_capacity(nodes);
        for k in 0..nodes {
            values.push(self.eval_direct(&x0, &[step * k as f64, 0.0])?);
        }
        self.cache = Some(RadialCache { b_max, step, values });
        Ok(self)
    }

    /// `M*(x,b)` within `tol_c` of the true sup; never negative.
    pub fn eval(&self, x: &[f64], b: &[f64]) -> Result<f64> {
        let xs = self.nf.domain.locate(x)?;
        let d = self.nf.dim();
        let mut bv = [0.0; 2];
        bv[..d].copy_from_slice(&b[..d]);
        if !bv[..d].iter().all(|c| c.is_finite()) {
            return Err(Error::Input("non-finite dual argument".into()));
        }
        self.eval_raw(&xs, &bv)
    }

    /// Unvalidated fast path for quadrature loops.
    pub fn eval_raw(&self, x: &Vec2, b: &Vec2) -> Result<f64> {
        if let Some(c) = &self.cache {
            let bn = norm(b, self.nf.dim());
            if bn <= c.b_max {
                let u = bn / c.step;
                let k = (u as usize).min(c.values.len() - 2);
                let frac = u - k as f64;
                return Ok((1.0 - frac) * c.values[k] + frac * c.values[k + 1]);
            }
        }
        self.eval_direct(x, b)
    }

    fn eval_direct(&self, x: &Vec2, b: &Vec2) -> Result<f64> {
        let d = self.nf.dim();
        let objective = |a: &Vec2| dot(b, a, d) - self.nf.eval_raw(x, a);
        let r0 = self
            .search_radius
            .unwrap_or_else(|| self.nf.suggested_radius(norm(b, d)));
        let v = concave_sup(
            d,
            r0,
            self.grid_points,
            self.max_doublings,
            self.tol_c,
            objective,
        )
        .map_err(|e| match e {
            Error::Radius { radius, .. } => Error::Radius {
                radius,
                b_norm: norm(b, d),
            },
            other => other,
        })?;
        Ok(v.0.max(0.0))
    }

    /// `M**(x,a)`: the transform applied twice. The outer search box is
    /// sized from a finite-difference slope of `M` at `a`.
    pub fn biconjugate(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        let xs = self.nf.domain.locate(x)?;
        let d = self.nf.dim();
        let mut av = [0.0; 2];
        av[..d].copy_from_slice(&a[..d]);
        let r0 = 2.0 * self.slope_estimate(&xs, &av) + 1.0;
        let objective = |b: &Vec2| -> f64 {
            dot(&av, b, d) - self.eval_raw(&xs, b).unwrap_or(f64::NEG_INFINITY)
        };
        let v = concave_sup(d, r0, self.grid_points, self.max_doublings, self.tol_c, objective)?;
        Ok(v.0.max(0.0))
    }

    /// Biconjugate over a batch of points sharing one `x`. A dual-side
    /// table of true conjugate values feeds the coarse scan; golden
    /// refinement still calls the true conjugate, so results stay exact
    /// lower bounds of probed suprema.
    pub fn biconjugate_batch(&self, x: &[f64], points: &[Vec2]) -> Result<Vec<f64>> {
        let xs = self.nf.domain.locate(x)?;
        let d = self.nf.dim();
        let mut r_b: f64 = 1.0;
        for a in points {
            r_b = r_b.max(2.0 * self.slope_estimate(&xs, a) + 1.0);
        }
        let nb = if d == 2 { 96 } else { 1024 };
        let mut table = Vec::with_capacity(if d == 2 { nb * nb } else { nb });
        let node = |k: usize| -> f64 { -r_b + 2.0 * r_b * (k as f64 + 0.5) / nb as f64 };
        if d == 2 {
            for j in 0..nb {
                for i in 0..nb {
                    table.push(self.eval_raw(&xs, &[node(i), node(j)])?);
                }
            }
        } else {
            for i in 0..nb {
                table.push(self.eval_raw(&xs, &[node(i), 0.0])?);
            }
        }
        let mut out = Vec::with_capacity(points.len());
        for a in points {
            // coarse scan against the table
            let mut best = (0.0f64, [0.0; 2]); // origin: a.0 - M*(0) <= 0, clamp later
            if d == 2 {
                for j in 0..nb {
                    for i in 0..nb {
                        let b = [node(i), node(j)];
                        let v = dot(a, &b, d) - table[j * nb + i];
                        if v > best.0 {
                            best = (v, b);
                        }
                    }
                }
            } else {
                for (i, mv) in table.iter().enumerate() {
                    let b = [node(i), 0.0];
                    let v = dot(a, &b, d) - mv;
                    if v > best.0 {
                        best = (v, b);
                    }
                }
            }
            let objective = |b: &Vec2| -> f64 {
                dot(a, b, d) - self.eval_raw(&xs, b).unwrap_or(f64::NEG_INFINITY)
            };
            let step = 2.0 * r_b / nb as f64;
            let refined = coordinate_ascent(d, best.1, best.0, step, self.tol_c, &objective);
            out.push(refined.0.max(0.0));
        }
        Ok(out)
    }

    fn slope_estimate(&self, x: &Vec2, a: &Vec2) -> f64 {
        let d = self.nf.dim();
        let h = 1e-4 * (1.0 + norm(a, d));
        let mut g = [0.0; 2];
        for i in 0..d {
            let mut ap = *a;
            let mut am = *a;
            ap[i] += h;
            am[i] -= h;
            g[i] = (self.nf.eval_raw(x, &ap) - self.nf.eval_raw(x, &am)) / (2.0 * h);
        }
        norm(&g, d)
    }
}

/// `M(x,a) + M*(x,b) - a.b`; non-negative up to conjugation tolerance,
/// zero exactly on subgradient pairs.
pub fn fenchel_young_gap(
    nf: &NFunction,
    cj: &ConjugateApprox,
    x: &[f64],
    a: &[f64],
    b: &[f64],
) -> Result<f64> {
    let m = nf.eval(x, a)?;
    let mstar = cj.eval(x, b)?;
    let d = nf.dim();
    let mut av = [0.0; 2];
    let mut bv = [0.0; 2];
    av[..d].copy_from_slice(&a[..d]);
    bv[..d].copy_from_slice(&b[..d]);
    Ok(m + mstar - dot(&av, &bv, d))
}

/// Maximize a concave function over `[-r, r]^d`, doubling `r` while the
/// grid argmax touches the outermost layer.
fn concave_sup(
    d: usize,
    r0: f64,
    n_grid: usize,
    max_doublings: u32,
    tol_rel: f64,
    f: impl Fn(&Vec2) -> f64,
) -> Result<(f64, Vec2)> {
    let mut r = r0.max(1e-6);
    for _ in 0..=max_doublings {
        let step = 2.0 * r / n_grid as f64;
        let node = |k: usize| -> f64 { -r + (k as f64 + 0.5) * step };
        let mut best = (f(&[0.0, 0.0]), [0.0, 0.0], false);
        if d == 2 {
            for j in 0..n_grid {
                for i in 0..n_grid {
                    let a = [node(i), node(j)];
                    let v = f(&a);
                    if v > best.0 {
                        let edge = i == 0 || j == 0 || i == n_grid - 1 || j == n_grid - 1;
                        best = (v, a, edge);
                    }
                }
            }
        } else {
            for i in 0..n_grid {
                let a = [node(i), 0.0];
                let v = f(&a);
                if v > best.0 {
                    best = (v, a, i == 0 || i == n_grid - 1);
                }
            }
        }
        if best.2 {
            r *= 2.0;
            continue;
        }
        let (val, arg) = coordinate_ascent(d, best.1, best.0, step, tol_rel, &f);
        return Ok((val, arg));
    }
    Err(Error::Radius {
        radius: r,
        b_norm: f64::NAN,
    })
}

/// Golden-section ascent one axis at a time from a starting point known to
/// be within one grid cell of the maximizer.
fn coordinate_ascent(
    d: usize,
    start: Vec2,
    start_val: f64,
    step: f64,
    tol_rel: f64,
    f: &impl Fn(&Vec2) -> f64,
) -> (f64, Vec2) {
    let mut cur = start;
    let mut val = start_val;
    for _sweep in 0..8 {
        let before = val;
        for axis in 0..d {
            let (x, v) = golden_max(cur[axis] - step, cur[axis] + step, tol_rel, |t| {
                let mut p = cur;
                p[axis] = t;
                f(&p)
            });
            if v > val {
                val = v;
                cur[axis] = x;
            }
        }
        if d == 1 || val - before <= tol_rel * val.abs().max(1.0) * 1e-2 {
            break;
        }
    }
    (val, cur)
}

/// 1-d golden-section maximization returning the best *evaluated* point.
fn golden_max(mut lo: f64, mut hi: f64, tol_rel: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let tol = tol_rel * hi.abs().max(lo.abs()).max(1.0) * 1e-2;
    let mut c = hi - GOLDEN * (hi - lo);
    let mut d = lo + GOLDEN * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fc >= fd { (fc, c) } else { (fd, d) };
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - GOLDEN * (hi - lo);
            fc = f(c);
            if fc > best.0 {
                best = (fc, c);
            }
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + GOLDEN * (hi - lo);
            fd = f(d);
            if fd > best.0 {
                best = (fd, d);
            }
        }
    }
    (best.1, best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SpatialDomain;
    use crate::expr::Expr;

    fn dom1() -> SpatialDomain {
        SpatialDomain::unit_box(1, &[1.0]).unwrap()
    }

    /// Independent oracle: dense grid sup over [-10,10] at step 1e-4.
    fn brute_force_conjugate_1d(m: impl Fn(f64) -> f64, b: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let n = 200_000;
        for k in 0..=n {
            let a = -10.0 + 20.0 * k as f64 / n as f64;
            best = best.max(b * a - m(a));
        }
        best
    }

    #[test]
    fn conjugate_matches_brute_force_oracle() {
        // M(a) = a^2/2, b = 3 -> 4.5
        let nf = NFunction::custom(dom1(), "half_square", Some((2.0, 2.0)), |_, a, d| {
            let n = norm(a, d);
            0.5 * n * n
        });
        let cj = ConjugateApprox::new(nf);
        let v = cj.eval(&[0.5], &[3.0]).unwrap();
        let oracle = brute_force_conjugate_1d(|a| 0.5 * a * a, 3.0);
        assert!((v - 4.5).abs() < 1e-7, "got {v}");
        assert!((v - oracle).abs() < 1e-7);
    }

    #[test]
    fn conjugate_quartic_and_zero() {
        // M(a) = a^4/4, b = 8 -> stationary at a = 2, value 12
        let nf = NFunction::custom(dom1(), "quartic", Some((4.0, 4.0)), |_, a, d| {
            norm(a, d).powi(4) / 4.0
        });
        let cj = ConjugateApprox::new(nf);
        let v = cj.eval(&[0.5], &[8.0]).unwrap();
        assert!((v - 12.0).abs() < 1e-6, "got {v}");
        // b = 0 -> exactly 0 for any M
        assert_eq!(cj.eval(&[0.5], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn power_conjugate_closed_form() {
        // M = |a|^p/p has M* = |b|^{p'}/p'
        for p in [2.0, 3.0, 4.0] {
            let q = p / (p - 1.0);
            let nf = NFunction::custom(dom1(), "power_over_p", Some((p, p)), move |_, a, d| {
                norm(a, d).powf(p) / p
            });
            let cj = ConjugateApprox::new(nf);
            for b in [-5.0, -1.3, 0.7, 2.0, 6.5] {
                let v = cj.eval(&[0.5], &[b]).unwrap();
                let exact = b.abs().powf(q) / q;
                assert!(
                    (v - exact).abs() <= 1e-5 * exact.max(1e-9),
                    "p={p} b={b}: {v} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn fenchel_young_examples() {
        let nf = NFunction::custom(dom1(), "half_square", Some((2.0, 2.0)), |_, a, d| {
            let n = norm(a, d);
            0.5 * n * n
        });
        let cj = ConjugateApprox::new(nf.clone());
        // equality at subgradient pairs
        let g = fenchel_young_gap(&nf, &cj, &[0.5], &[1.0], &[1.0]).unwrap();
        assert!(g.abs() < 1e-7, "gap {g}");
        // M(2) + M*(1) - 2 = 2 + 0.5 - 2 = 0.5
        let g = fenchel_young_gap(&nf, &cj, &[0.5], &[2.0], &[1.0]).unwrap();
        assert!((g - 0.5).abs() < 1e-7);
        // both zero
        let g = fenchel_young_gap(&nf, &cj, &[0.5], &[0.0], &[0.0]).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn radius_error_when_superlinearity_missing() {
        // |a| has conjugate = indicator of [-1,1]: infinite for |b| > 1
        let nf = NFunction::custom(dom1(), "abs", Some((1.3, 1.3)), |_, a, d| norm(a, d));
        let mut cj = ConjugateApprox::new(nf);
        cj.max_doublings = 12;
        match cj.eval(&[0.5], &[2.0]) {
            Err(Error::Radius { .. }) => {}
            other => panic!("expected radius error, got {other:?}"),
        }
    }

    #[test]
    fn anisotropic_conjugate_is_symmetric_in_sign() {
        let dom = SpatialDomain::unit_box(2, &[1.0, 1.0]).unwrap();
        let nf = NFunction::anisotropic_paper(
            dom,
            Expr::parse("2").unwrap(),
            Expr::parse("2").unwrap(),
        )
        .unwrap();
        let cj = ConjugateApprox::new(nf);
        let v1 = cj.eval(&[0.5, 0.5], &[1.5, -0.5]).unwrap();
        let v2 = cj.eval(&[0.5, 0.5], &[-1.5, 0.5]).unwrap();
        assert!((v1 - v2).abs() < 1e-6);
        assert!(v1 > 0.0);
    }

    #[test]
    fn radial_cache_matches_direct() {
        let nf = NFunction::power(dom1(), 3.0).unwrap();
        let direct = ConjugateApprox::new(nf.clone());
        let cached = ConjugateApprox::new(nf).with_radial_cache(10.0, 4097).unwrap();
        for b in [0.0, 0.3, 1.7, 4.2, 9.9] {
            let v1 = direct.eval(&[0.5], &[b]).unwrap();
            let v2 = cached.eval(&[0.5], &[b]).unwrap();
            assert!((v1 - v2).abs() <= 1e-6 * v1.max(1.0), "b={b}: {v1} vs {v2}");
        }
        // beyond the table it falls back to the direct path
        let far = cached.eval(&[0.5], &[20.0]).unwrap();
        assert!((far - direct.eval(&[0.5], &[20.0]).unwrap()).abs() < 1e-9 * far);
    }

    #[test]
    fn biconjugate_recovers_convex_builtins() {
        let nf = NFunction::power(dom1(), 2.0).unwrap();
        let cj = ConjugateApprox::new(nf.clone());
        for a in [0.0, 0.5, 1.0, 2.5] {
            let mm = cj.biconjugate(&[0.5], &[a]).unwrap();
            let m = nf.eval(&[0.5], &[a]).unwrap();
            assert!((mm - m).abs() <= 10.0 * cj.tol_c * m.max(1.0), "a={a}: {mm} vs {m}");
        }
    }
}
