//! Axis-aligned box domains, star-shaped with respect to an inscribed ball.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Maximum supported spatial dimension. Vectors are stored as `[f64; 2]`;
/// in one dimension the second component is kept at zero.
pub const MAX_DIM: usize = 2;

pub type Vec2 = [f64; 2];

#[inline]
pub fn dot(a: &Vec2, b: &Vec2, d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm(a: &Vec2, d: usize) -> f64 {
    dot(a, a, d).sqrt()
}

#[inline]
pub fn is_finite_vec(a: &Vec2, d: usize) -> bool {
    a[..d].iter().all(|c| c.is_finite())
}

/// The box `[0,L_1] x ... x [0,L_d]`, star-shaped with respect to
/// `ball(star_center, star_radius)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpatialDomain {
    pub dim: usize,
    pub lengths: Vec2,
    pub star_center: Vec2,
    pub star_radius: f64,
}

impl SpatialDomain {
    /// Box with the largest admissible inscribed ball at its center.
    pub fn unit_box(dim: usize, lengths: &[f64]) -> Result<Self> {
        let min_l = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut center = [0.0; 2];
        for (c, l) in center.iter_mut().zip(lengths) {
            *c = l / 2.0;
        }
        Self::new(dim, lengths, &center, min_l / 2.0)
    }

    pub fn new(dim: usize, lengths: &[f64], star_center: &[f64], star_radius: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Parameter(format!("dimension {dim} not in {{1,2}}")));
        }
        if lengths.len() < dim || star_center.len() < dim {
            return Err(Error::Parameter("lengths/center shorter than dim".into()));
        }
        let mut ls = [0.0; 2];
        let mut c = [0.0; 2];
        ls[..dim].copy_from_slice(&lengths[..dim]);
        c[..dim].copy_from_slice(&star_center[..dim]);
        if ls[..dim].iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::Parameter("box lengths must be positive".into()));
        }
        let min_l = ls[..dim].iter().cloned().fold(f64::INFINITY, f64::min);
        if !(star_radius > 0.0) || star_radius > min_l / 2.0 {
            return Err(Error::Parameter(format!(
                "star radius {star_radius} must lie in (0, min L_i / 2 = {}]",
                min_l / 2.0
            )));
        }
        // ball(center, R) inside the box; a convex box is star-shaped with
        // respect to any inscribed ball.
        for i in 0..dim {
            if c[i] - star_radius < -1e-12 || c[i] + star_radius > ls[i] + 1e-12 {
                return Err(Error::Parameter(
                    "star ball must be contained in the box".into(),
                ));
            }
        }
        Ok(SpatialDomain {
            dim,
            lengths: ls,
            star_center: c,
            star_radius,
        })
    }

    /// Snap `x` into the closed box within tolerance `1e-12`; error otherwise.
    pub fn locate(&self, x: &[f64]) -> Result<Vec2> {
        const SNAP: f64 = 1e-12;
        if x.len() < self.dim {
            return Err(Error::Input("point has too few coordinates".into()));
        }
        let mut out = [0.0; 2];
        for i in 0..self.dim {
            let xi = x[i];
            if !xi.is_finite() {
                return Err(Error::Input(format!("non-finite coordinate x{}", i + 1)));
            }
            let scale = self.lengths[i].max(1.0);
            if xi < -SNAP * scale || xi > self.lengths[i] + SNAP * scale {
                return Err(Error::Domain(format!(
                    "x{} = {xi} outside [0, {}]",
                    i + 1,
                    self.lengths[i]
                )));
            }
            out[i] = xi.clamp(0.0, self.lengths[i]);
        }
        Ok(out)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.locate(x).is_ok()
    }

    pub fn volume(&self) -> f64 {
        self.lengths[..self.dim].iter().product()
    }
}
