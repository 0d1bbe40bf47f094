//! Uniform space-time grids over `Q = (0,T) x Omega` and sampled fields.
//!
//! Every integral in the crate is the midpoint rule on these cell centers,
//! so modular identities computed in different modules are exactly
//! consistent with each other.

use crate::domain::{SpatialDomain, Vec2};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpaceTimeGrid {
    pub domain: SpatialDomain,
    pub horizon: f64,
    pub n_t: usize,
    pub n_x: [usize; 2],
}

impl SpaceTimeGrid {
    pub fn new(domain: SpatialDomain, horizon: f64, n_t: usize, n_x: &[usize]) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Parameter("horizon T must be positive".into()));
        }
        if n_t < 2 {
            return Err(Error::Parameter("need at least 2 time cells".into()));
        }
        let mut nx = [1usize; 2];
        nx[..domain.dim].copy_from_slice(&n_x[..domain.dim]);
        if nx[..domain.dim].iter().any(|n| *n < 2) {
            return Err(Error::Parameter("need at least 2 cells per axis".into()));
        }
        let g = SpaceTimeGrid {
            domain,
            horizon,
            n_t,
            n_x: nx,
        };
        let measured = g.cell_measure() * g.total_cells() as f64;
        let exact = g.horizon * g.domain.volume();
        debug_assert!((measured - exact).abs() <= 1e-12 * exact);
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn space_cells(&self) -> usize {
        self.n_x[..self.dim()].iter().product()
    }

    pub fn total_cells(&self) -> usize {
        self.n_t * self.space_cells()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.domain.lengths[axis] / self.n_x[axis] as f64
    }

    /// Measure of one space-time cell: `(T/N_t) * prod_i (L_i/N_i)`.
    pub fn cell_measure(&self) -> f64 {
        let mut w = self.dt();
        for i in 0..self.dim() {
            w *= self.h(i);
        }
        w
    }

    /// Measure of one spatial cell.
    pub fn space_cell_measure(&self) -> f64 {
        (0..self.dim()).map(|i| self.h(i)).product()
    }

    pub fn t_center(&self, m: usize) -> f64 {
        (m as f64 + 0.5) * self.dt()
    }

    /// Spatial index `s` decomposed as `s = i1 + N_1 * i2`.
    pub fn x_center(&self, s: usize) -> Vec2 {
        let mut x = [0.0; 2];
        let i1 = s % self.n_x[0];
        x[0] = (i1 as f64 + 0.5) * self.h(0);
        if self.dim() == 2 {
            let i2 = s / self.n_x[0];
            x[1] = (i2 as f64 + 0.5) * self.h(1);
        }
        x
    }

    pub fn space_index(&self, i1: usize, i2: usize) -> usize {
        i1 + self.n_x[0] * i2
    }

    /// Nearest spatial cell indices and interpolation weights for an
    /// arbitrary point (used by the dilation reads in scale-and-mollify).
    pub fn space_compatible(&self, other: &SpaceTimeGrid) -> bool {
        self.domain == other.domain && self.n_x == other.n_x
    }
}

/// Sampled `xi : Q -> R^d` (gradients, fluxes, test sequences).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: SpaceTimeGrid,
    pub values: Vec<Vec2>,
}

/// Sampled `u : Q -> R` (solutions, sources, coercivity offsets).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: SpaceTimeGrid,
    pub values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        VectorField {
            grid: grid.clone(),
            values: vec![[0.0; 2]; grid.total_cells()],
        }
    }

    pub fn from_fn(grid: &SpaceTimeGrid, mut f: impl FnMut(f64, &Vec2) -> Vec2) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.total_cells());
        for m in 0..grid.n_t {
            let t = grid.t_center(m);
            for s in 0..grid.space_cells() {
                let v = f(t, &grid.x_center(s));
                if !v[..grid.dim()].iter().all(|c| c.is_finite()) {
                    return Err(Error::Input(format!("non-finite field value at t={t}")));
                }
                values.push(v);
            }
        }
        Ok(VectorField {
            grid: grid.clone(),
            values,
        })
    }

    #[inline]
    pub fn at(&self, m: usize, s: usize) -> &Vec2 {
        &self.values[m * self.grid.space_cells() + s]
    }

    #[inline]
    pub fn at_mut(&mut self, m: usize, s: usize) -> &mut Vec2 {
        let sc = self.grid.space_cells();
        &mut self.values[m * sc + s]
    }

    pub fn check_finite(&self) -> Result<()> {
        let d = self.grid.dim();
        if self.values.len() != self.grid.total_cells() {
            return Err(Error::Input("field/grid size mismatch".into()));
        }
        if self.values.iter().any(|v| !v[..d].iter().all(|c| c.is_finite())) {
            return Err(Error::Input("field contains non-finite entries".into()));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write_header(&mut w, &self.grid, self.grid.dim())?;
        for m in 0..self.grid.n_t {
            for s in 0..self.grid.space_cells() {
                write_coords(&mut w, &self.grid, m, s)?;
                let v = self.at(m, s);
                for c in &v[..self.grid.dim()] {
                    write!(w, ",{}", fmt_f64(*c))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read_csv(grid: &SpaceTimeGrid, path: &Path) -> Result<Self> {
        let rows = read_rows(grid, path, grid.dim())?;
        let values = rows
            .into_iter()
            .map(|r| {
                let mut v = [0.0; 2];
                v[..grid.dim()].copy_from_slice(&r);
                v
            })
            .collect();
        let f = VectorField {
            grid: grid.clone(),
            values,
        };
        f.check_finite()?;
        Ok(f)
    }
}

impl ScalarField {
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.total_cells()],
        }
    }

    pub fn from_fn(grid: &SpaceTimeGrid, mut f: impl FnMut(f64, &Vec2) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.total_cells());
        for m in 0..grid.n_t {
            let t = grid.t_center(m);
            for s in 0..grid.space_cells() {
                let v = f(t, &grid.x_center(s));
                if !v.is_finite() {
                    return Err(Error::Input(format!("non-finite field value at t={t}")));
                }
                values.push(v);
            }
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    #[inline]
    pub fn at(&self, m: usize, s: usize) -> f64 {
        self.values[m * self.grid.space_cells() + s]
    }

    #[inline]
    pub fn at_mut(&mut self, m: usize, s: usize) -> &mut f64 {
        let sc = self.grid.space_cells();
        &mut self.values[m * sc + s]
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `(integral of u^2 over Omega)` at time cell `m`.
    pub fn l2_sq_at(&self, m: usize) -> f64 {
        let sc = self.grid.space_cells();
        let w = self.grid.space_cell_measure();
        self.values[m * sc..(m + 1) * sc]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            * w
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write_header(&mut w, &self.grid, 1)?;
        for m in 0..self.grid.n_t {
            for s in 0..self.grid.space_cells() {
                write_coords(&mut w, &self.grid, m, s)?;
                writeln!(w, ",{}", fmt_f64(self.at(m, s)))?;
            }
        }
        Ok(())
    }

    pub fn read_csv(grid: &SpaceTimeGrid, path: &Path) -> Result<Self> {
        let rows = read_rows(grid, path, 1)?;
        let f = ScalarField {
            grid: grid.clone(),
            values: rows.into_iter().map(|r| r[0]).collect(),
        };
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("field contains non-finite entries".into()));
        }
        Ok(f)
    }
}

/// Piecewise-constant field `sum_j alpha_j 1_{G_j}` on a partition of `Q`
/// into unions of grid cells.
#[derive(Clone, Debug)]
pub struct SimpleField {
    pub grid: SpaceTimeGrid,
    /// Partition id of every grid cell (time-major, same layout as fields).
    pub part_of_cell: Vec<u32>,
    /// One level per partition cell `G_j`.
    pub levels: Vec<Vec2>,
}

impl SimpleField {
    pub fn validate(&self) -> Result<()> {
        if self.part_of_cell.len() != self.grid.total_cells() {
            return Err(Error::Input("partition does not cover Q".into()));
        }
        if self.levels.is_empty() {
            return Err(Error::Input("simple field needs at least one cell".into()));
        }
        if self.part_of_cell.iter().any(|p| *p as usize >= self.levels.len()) {
            return Err(Error::Input("partition id out of range".into()));
        }
        Ok(())
    }

    pub fn to_vector_field(&self) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            values: self
                .part_of_cell
                .iter()
                .map(|p| self.levels[*p as usize])
                .collect(),
        }
    }
}

/// 17 significant digits; parses back to the identical f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_header<W: Write>(w: &mut W, grid: &SpaceTimeGrid, comps: usize) -> Result<()> {
    let mut cols = vec!["t".to_string()];
    for i in 0..grid.dim() {
        cols.push(format!("x{}", i + 1));
    }
    if comps == 1 {
        cols.push("v".to_string());
    } else {
        for c in 0..comps {
            cols.push(format!("v{}", c + 1));
        }
    }
    writeln!(w, "{}", cols.join(","))?;
    Ok(())
}

fn write_coords<W: Write>(w: &mut W, grid: &SpaceTimeGrid, m: usize, s: usize) -> Result<()> {
    write!(w, "{}", fmt_f64(grid.t_center(m)))?;
    let x = grid.x_center(s);
    for c in &x[..grid.dim()] {
        write!(w, ",{}", fmt_f64(*c))?;
    }
    Ok(())
}

fn read_rows(grid: &SpaceTimeGrid, path: &Path, comps: usize) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    lines.next(); // header
    let coord_cols = 1 + grid.dim();
    let mut rows = Vec::with_capacity(grid.total_cells());
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != coord_cols + comps {
            return Err(Error::Input(format!(
                "row {}: expected {} columns, found {}",
                i + 2,
                coord_cols + comps,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("row {}: bad number '{s}'", i + 2)))
        };
        // Coordinates must match this grid's cell centers.
        let m = i / grid.space_cells();
        let s = i % grid.space_cells();
        if m >= grid.n_t {
            return Err(Error::Input("more rows than grid cells".into()));
        }
        let t = parse(fields[0])?;
        if (t - grid.t_center(m)).abs() > 1e-9 * grid.horizon {
            return Err(Error::Input(format!("row {}: time {t} off-grid", i + 2)));
        }
        let x = grid.x_center(s);
        for a in 0..grid.dim() {
            let xa = parse(fields[1 + a])?;
            if (xa - x[a]).abs() > 1e-9 * grid.domain.lengths[a] {
                return Err(Error::Input(format!("row {}: x{} off-grid", i + 2, a + 1)));
            }
        }
        rows.push(
            fields[coord_cols..]
                .iter()
                .map(|f| parse(f))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    if rows.len() != grid.total_cells() {
        return Err(Error::Input(format!(
            "expected {} rows, found {}",
            grid.total_cells(),
            rows.len()
        )));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d() -> SpaceTimeGrid {
        let dom = SpatialDomain::unit_box(1, &[1.0]).unwrap();
        SpaceTimeGrid::new(dom, 1.0, 4, &[8]).unwrap()
    }

    #[test]
    fn measures_are_consistent() {
        let g = grid_1d();
        assert!((g.cell_measure() * g.total_cells() as f64 - 1.0).abs() < 1e-14);
        let dom = SpatialDomain::unit_box(2, &[2.0, 3.0]).unwrap();
        let g2 = SpaceTimeGrid::new(dom, 0.5, 3, &[4, 6]).unwrap();
        assert!((g2.cell_measure() * g2.total_cells() as f64 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn resolution_floor_enforced() {
        let dom = SpatialDomain::unit_box(1, &[1.0]).unwrap();
        assert!(SpaceTimeGrid::new(dom.clone(), 1.0, 1, &[8]).is_err());
        assert!(SpaceTimeGrid::new(dom, 1.0, 4, &[1]).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let g = grid_1d();
        let f = VectorField::from_fn(&g, |t, x| [ (t * 1e17 + x[0]).sin() / 3.0, 0.0 ]).unwrap();
        let dir = std::env::temp_dir().join("morlab_grid_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.csv");
        f.write_csv(&path).unwrap();
        let back = VectorField::read_csv(&g, &path).unwrap();
        assert_eq!(f.values, back.values);
    }

    #[test]
    fn from_fn_rejects_non_finite() {
        let g = grid_1d();
        assert!(ScalarField::from_fn(&g, |_, x| 1.0 / (x[0] - x[0])).is_err());
    }
}
