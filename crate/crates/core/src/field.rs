//! Scalar fields on uniform dyadic lattices.
//!
//! Nodes are stored row-major with `x` fastest: node `(i, j)` has index
//! `j * nx + i` where `nx` is the node count along `x`. One-dimensional grids
//! have a single row.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Point;

/// Relative slack for ball membership and lattice alignment tests.
const SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    /// Spacing exponent: `h = 2^{-m}`.
    pub m: u32,
    pub lo: Point,
    /// Cell count per axis (`cells[1] = 0` in 1D).
    pub cells: [usize; 2],
}

impl GridSpec {
    /// Box `[lo, hi]` (per axis) with spacing `2^{-m}`; sides must be multiples of `h`.
    pub fn new(dim: usize, m: u32, lo: Point, hi: Point) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidParameter(format!("dimension must be 1 or 2, got {dim}")));
        }
        if m > 30 {
            return Err(Error::InvalidParameter(format!("m = {m} is beyond any desk-scale grid")));
        }
        let h = (-(m as f64)).exp2();
        let mut cells = [0usize; 2];
        for axis in 0..dim {
            let side = hi[axis] - lo[axis];
            if !(side.is_finite() && lo[axis].is_finite()) || side <= 0.0 {
                return Err(Error::InvalidParameter(format!("box side {axis} must be positive")));
            }
            let n = side / h;
            if (n - n.round()).abs() > SLACK * n.max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "box side {side} is not a multiple of h = 2^-{m}"
                )));
            }
            cells[axis] = n.round() as usize;
        }
        let lo = if dim == 1 { [lo[0], 0.0] } else { lo };
        Ok(GridSpec { dim, m, lo, cells })
    }

    pub fn interval(m: u32, lo: f64, hi: f64) -> Result<Self> {
        Self::new(1, m, [lo, 0.0], [hi, 0.0])
    }

    pub fn square(m: u32, lo: f64, hi: f64) -> Result<Self> {
        Self::new(2, m, [lo, lo], [hi, hi])
    }

    #[inline]
    pub fn h(&self) -> f64 {
        (-(self.m as f64)).exp2()
    }

    pub fn hi(&self) -> Point {
        let h = self.h();
        [
            self.lo[0] + self.cells[0] as f64 * h,
            self.lo[1] + self.cells[1] as f64 * h,
        ]
    }

    /// Nodes per axis.
    #[inline]
    pub fn nodes(&self) -> [usize; 2] {
        [self.cells[0] + 1, self.cells[1] + 1]
    }

    pub fn node_count(&self) -> usize {
        let [nx, ny] = self.nodes();
        nx * ny
    }

    pub fn cell_count(&self) -> usize {
        if self.dim == 1 {
            self.cells[0]
        } else {
            self.cells[0] * self.cells[1]
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * (self.cells[0] + 1) + i
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        let nx = self.cells[0] + 1;
        (idx % nx, idx / nx)
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> Point {
        let (i, j) = self.ij(idx);
        let h = self.h();
        [self.lo[0] + i as f64 * h, self.lo[1] + j as f64 * h]
    }

    /// Lattice coordinates of `p`, if `p` is (to rounding) a node.
    pub fn node_at(&self, p: Point) -> Option<usize> {
        let h = self.h();
        let mut ij = [0usize; 2];
        for axis in 0..self.dim {
            let s = (p[axis] - self.lo[axis]) / h;
            let r = s.round();
            if (s - r).abs() > SLACK * (1.0 + s.abs()) || r < 0.0 || r > self.cells[axis] as f64 {
                return None;
            }
            ij[axis] = r as usize;
        }
        if self.dim == 1 && p[1] != 0.0 {
            return None;
        }
        Some(self.index(ij[0], ij[1]))
    }

    pub fn on_box_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.ij(idx);
        let x_edge = i == 0 || i == self.cells[0];
        if self.dim == 1 {
            x_edge
        } else {
            x_edge || j == 0 || j == self.cells[1]
        }
    }

    /// Grid neighbours of `idx` (2 per axis when interior).
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.ij(idx);
        let [cx, cy] = self.cells;
        let nx = cx + 1;
        let two_d = self.dim == 2;
        let cand = [
            (i > 0).then(|| idx - 1),
            (i < cx).then(|| idx + 1),
            (two_d && j > 0).then(|| idx - nx),
            (two_d && j < cy).then(|| idx + nx),
        ];
        cand.into_iter().flatten()
    }

    /// Node indices of the corners of cell `c`.
    pub fn cell_corners(&self, c: usize) -> ([usize; 4], usize) {
        if self.dim == 1 {
            ([c, c + 1, 0, 0], 2)
        } else {
            let (ci, cj) = (c % self.cells[0], c / self.cells[0]);
            let a = self.index(ci, cj);
            let nx = self.cells[0] + 1;
            ([a, a + 1, a + nx, a + nx + 1], 4)
        }
    }

    pub fn cell_center(&self, c: usize) -> Point {
        let h = self.h();
        if self.dim == 1 {
            [self.lo[0] + (c as f64 + 0.5) * h, 0.0]
        } else {
            let (ci, cj) = (c % self.cells[0], c / self.cells[0]);
            [
                self.lo[0] + (ci as f64 + 0.5) * h,
                self.lo[1] + (cj as f64 + 0.5) * h,
            ]
        }
    }

    /// The node at the centre of the box, when the centre is a node.
    pub fn center_node(&self) -> Option<usize> {
        let hi = self.hi();
        self.node_at([0.5 * (self.lo[0] + hi[0]), 0.5 * (self.lo[1] + hi[1])])
    }
}

/// Euclidean ball `B_radius(center)` with a node as centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: usize,
    pub radius: f64,
}

impl BallSpec {
    pub fn at(grid: &GridSpec, center: Point, radius: f64) -> Result<Self> {
        let idx = grid
            .node_at(center)
            .ok_or_else(|| Error::Misaligned(format!("ball centre {center:?} is not a grid node")))?;
        let ball = BallSpec { center: idx, radius };
        ball.check(grid)?;
        Ok(ball)
    }

    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        let c = grid.coord(self.center);
        if !(self.radius > 0.0 && self.radius.is_finite()) || self.center >= grid.node_count() {
            return Err(Error::BallOutsideGrid {
                center: c,
                radius: self.radius,
            });
        }
        let hi = grid.hi();
        let tol = SLACK * grid.h();
        for axis in 0..grid.dim {
            if c[axis] - self.radius < grid.lo[axis] - tol || c[axis] + self.radius > hi[axis] + tol {
                return Err(Error::BallOutsideGrid {
                    center: c,
                    radius: self.radius,
                });
            }
        }
        Ok(())
    }

    #[inline]
    fn contains_offset(&self, di: f64, dj: f64, h: f64) -> bool {
        let r = self.radius / h;
        di * di + dj * dj <= r * r * (1.0 + 1e-12)
    }

    /// Membership mask over all nodes; errors when the ball leaves the box.
    pub fn mask(&self, grid: &GridSpec) -> Result<Vec<bool>> {
        self.check(grid)?;
        let mut mask = vec![false; grid.node_count()];
        for idx in self.nodes(grid)? {
            mask[idx] = true;
        }
        Ok(mask)
    }

    /// Node indices inside the ball, row-major.
    pub fn nodes(&self, grid: &GridSpec) -> Result<Vec<usize>> {
        self.check(grid)?;
        let h = grid.h();
        let (ci, cj) = grid.ij(self.center);
        let reach = (self.radius / h).floor() as usize + 1;
        let i_range = ci.saturating_sub(reach)..=(ci + reach).min(grid.cells[0]);
        let j_range = if grid.dim == 1 {
            0..=0
        } else {
            cj.saturating_sub(reach)..=(cj + reach).min(grid.cells[1])
        };
        let mut out = Vec::new();
        for j in j_range {
            for i in i_range.clone() {
                let di = i as f64 - ci as f64;
                let dj = j as f64 - cj as f64;
                if self.contains_offset(di, dj, h) {
                    out.push(grid.index(i, j));
                }
            }
        }
        Ok(out)
    }
}

/// Whole box or a ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Whole,
    Ball(BallSpec),
}

impl Region {
    pub fn mask(&self, grid: &GridSpec) -> Result<Vec<bool>> {
        match self {
            Region::Whole => Ok(vec![true; grid.node_count()]),
            Region::Ball(b) => b.mask(grid),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    /// Dirichlet nodes; solvers never modify them.
    pub boundary: Vec<bool>,
}

impl ScalarField {
    /// Field with the box boundary as mask.
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidParameter(format!(
                "expected {} values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values".into()));
        }
        let boundary = (0..grid.node_count()).map(|i| grid.on_box_boundary(i)).collect();
        Ok(ScalarField {
            grid,
            values,
            boundary,
        })
    }

    pub fn from_fn<F: FnMut(Point) -> f64>(grid: GridSpec, mut f: F) -> Result<Self> {
        let values = (0..grid.node_count()).map(|i| f(grid.coord(i))).collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::new(grid, vec![0.0; grid.node_count()]).expect("zeros are finite")
    }

    pub fn with_boundary(mut self, boundary: Vec<bool>) -> Result<Self> {
        if boundary.len() != self.values.len() {
            return Err(Error::InvalidParameter("mask length mismatch".into()));
        }
        self.boundary = boundary;
        Ok(self)
    }

    pub fn map<F: FnMut(f64) -> f64>(&self, f: F) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().copied().map(f).collect(),
            boundary: self.boundary.clone(),
        }
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Value at a node located by coordinates.
    pub fn value_at(&self, p: Point) -> Option<f64> {
        self.grid.node_at(p).map(|i| self.values[i])
    }

    /// CSV layout: a header row `dim,m,lo_x,hi_x,lo_y,hi_y` with its values,
    /// then `x,y,value,boundary` rows in node order.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let hi = g.hi();
        let mut s = String::with_capacity(40 * self.values.len());
        s.push_str("dim,m,lo_x,hi_x,lo_y,hi_y\n");
        let _ = writeln!(s, "{},{},{},{},{},{}", g.dim, g.m, g.lo[0], hi[0], g.lo[1], hi[1]);
        s.push_str("x,y,value,boundary\n");
        for (i, v) in self.values.iter().enumerate() {
            let p = g.coord(i);
            let _ = writeln!(s, "{},{},{},{}", p[0], p[1], v, u8::from(self.boundary[i]));
        }
        s
    }

    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Parse(format!("missing {what}")))
        };
        let header = next("grid header")?;
        if header.trim() != "dim,m,lo_x,hi_x,lo_y,hi_y" {
            return Err(Error::Parse(format!("unexpected grid header `{header}`")));
        }
        let meta = next("grid line")?;
        let f: Vec<&str> = meta.trim().split(',').collect();
        if f.len() != 6 {
            return Err(Error::Parse("grid line needs 6 fields".into()));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
        let dim: usize = f[0].trim().parse().map_err(|e| Error::Parse(format!("dim: {e}")))?;
        let m: u32 = f[1].trim().parse().map_err(|e| Error::Parse(format!("m: {e}")))?;
        let grid = GridSpec::new(dim, m, [num(f[2])?, num(f[4])?], [num(f[3])?, num(f[5])?])?;
        let cols = next("column header")?;
        if cols.trim() != "x,y,value,boundary" {
            return Err(Error::Parse(format!("unexpected column header `{cols}`")));
        }
        let n = grid.node_count();
        let mut values = Vec::with_capacity(n);
        let mut boundary = Vec::with_capacity(n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Vec<&str> = line.trim().split(',').collect();
            if r.len() != 4 {
                return Err(Error::Parse(format!("row `{line}` needs 4 fields")));
            }
            let idx = values.len();
            if idx >= n {
                return Err(Error::Parse("more rows than grid nodes".into()));
            }
            let p = grid.coord(idx);
            let (x, y) = (num(r[0])?, num(r[1])?);
            let tol = SLACK * grid.h();
            if (x - p[0]).abs() > tol || (y - p[1]).abs() > tol {
                return Err(Error::Parse(format!("row {idx} is at ({x}, {y}), expected {p:?}")));
            }
            values.push(num(r[2])?);
            boundary.push(match r[3].trim() {
                "0" => false,
                "1" => true,
                other => return Err(Error::Parse(format!("boundary flag `{other}`"))),
            });
        }
        if values.len() != n {
            return Err(Error::Parse(format!("expected {n} rows, got {}", values.len())));
        }
        ScalarField::new(grid, values)?.with_boundary(boundary)
    }
}

pub fn sup_norm_on_ball(u: &ScalarField, ball: &BallSpec) -> Result<f64> {
    Ok(ball
        .nodes(&u.grid)?
        .into_iter()
        .fold(0.0, |m, i| m.max(u.values[i].abs())))
}

/// Nodal quadrature `(Σ hⁿ u²)^{1/2}` over the nodes of the ball.
pub fn l2_norm_on_ball(u: &ScalarField, ball: &BallSpec) -> Result<f64> {
    let w = u.grid.h().powi(u.grid.dim as i32);
    let s: f64 = ball
        .nodes(&u.grid)?
        .into_iter()
        .map(|i| u.values[i] * u.values[i])
        .sum();
    Ok((w * s).sqrt())
}

/// `w(x) = u(x₀ + a x) / b` sampled on the nodes of `target`.
///
/// Every target node must map onto a source node; the result carries the box
/// boundary of `target` as mask.
pub fn restrict_rescale_field(
    u: &ScalarField,
    x0: Point,
    a: f64,
    b: f64,
    target: &GridSpec,
) -> Result<ScalarField> {
    if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("a and b must be positive, got {a}, {b}")));
    }
    if target.dim != u.grid.dim {
        return Err(Error::InvalidParameter("target dimension differs from source".into()));
    }
    let src = &u.grid;
    let hs = src.h();
    let mut values = Vec::with_capacity(target.node_count());
    for idx in 0..target.node_count() {
        let p = target.coord(idx);
        let mut ij = [0usize; 2];
        for axis in 0..src.dim {
            let s = (x0[axis] + a * p[axis] - src.lo[axis]) / hs;
            let r = s.round();
            if (s - r).abs() > SLACK * (1.0 + s.abs()) {
                return Err(Error::Misaligned(format!(
                    "target node {p:?} maps between source nodes (a = {a})"
                )));
            }
            if r < 0.0 || r > src.cells[axis] as f64 {
                return Err(Error::Misaligned(format!("target node {p:?} maps outside the source box")));
            }
            ij[axis] = r as usize;
        }
        values.push(u.values[src.index(ij[0], ij[1])] / b);
    }
    ScalarField::new(*target, values)
}

/// Per-cell gradient: forward difference in 1D; in 2D each component is the
/// mean of the two parallel edge differences of the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGradient {
    pub grid: GridSpec,
    pub values: Vec<[f64; 2]>,
}

pub fn discrete_gradient(u: &ScalarField) -> CellGradient {
    let g = &u.grid;
    let h = g.h();
    let v = &u.values;
    let values = (0..g.cell_count())
        .map(|c| {
            let (k, _) = g.cell_corners(c);
            if g.dim == 1 {
                [(v[k[1]] - v[k[0]]) / h, 0.0]
            } else {
                [
                    0.5 * ((v[k[1]] - v[k[0]]) + (v[k[3]] - v[k[2]])) / h,
                    0.5 * ((v[k[2]] - v[k[0]]) + (v[k[3]] - v[k[1]])) / h,
                ]
            }
        })
        .collect();
    CellGradient { grid: *g, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(m: u32) -> GridSpec {
        GridSpec::interval(m, -1.0, 1.0).unwrap()
    }

    #[test]
    fn rejects_unaligned_box() {
        assert!(GridSpec::interval(2, 0.0, 0.3).is_err());
        assert!(GridSpec::new(3, 2, [0.0; 2], [1.0; 2]).is_err());
    }

    #[test]
    fn sup_examples() {
        let g = line(6);
        let b = BallSpec::at(&g, [0.0, 0.0], 0.5).unwrap();
        let c = ScalarField::from_fn(g, |_| -2.5).unwrap();
        assert_eq!(sup_norm_on_ball(&c, &b).unwrap(), 2.5);
        let x = ScalarField::from_fn(g, |p| p[0]).unwrap();
        assert_eq!(sup_norm_on_ball(&x, &b).unwrap(), 0.5);
        let x2 = ScalarField::from_fn(g, |p| p[0] * p[0]).unwrap();
        let q = BallSpec::at(&g, [0.0, 0.0], 0.25).unwrap();
        assert_eq!(sup_norm_on_ball(&x2, &q).unwrap(), 1.0 / 16.0);
    }

    #[test]
    fn l2_examples() {
        let g = line(10);
        let h = g.h();
        let b = BallSpec::at(&g, [0.0, 0.0], 1.0).unwrap();
        assert_eq!(l2_norm_on_ball(&ScalarField::zeros(g), &b).unwrap(), 0.0);
        let one = ScalarField::from_fn(g, |_| 1.0).unwrap();
        let r = BallSpec::at(&g, [0.0, 0.0], 0.5).unwrap();
        assert!((l2_norm_on_ball(&one, &r).unwrap() - 1f64.sqrt()).abs() < 2.0 * h);
        let x = ScalarField::from_fn(g, |p| p[0]).unwrap();
        assert!((l2_norm_on_ball(&x, &b).unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 2.0 * h);
    }

    #[test]
    fn ball_outside_is_rejected() {
        let g = line(4);
        assert!(matches!(
            BallSpec::at(&g, [0.5, 0.0], 0.75),
            Err(Error::BallOutsideGrid { .. })
        ));
    }

    #[test]
    fn rescale_examples() {
        let g = line(6);
        let x = ScalarField::from_fn(g, |p| p[0]).unwrap();
        assert_eq!(restrict_rescale_field(&x, [0.0; 2], 1.0, 1.0, &g).unwrap().values, x.values);
        let w = restrict_rescale_field(&x, [0.0; 2], 0.5, 0.5, &line(5)).unwrap();
        for (i, v) in w.values.iter().enumerate() {
            assert_eq!(*v, w.grid.coord(i)[0]);
        }
        let x2 = ScalarField::from_fn(g, |p| p[0] * p[0]).unwrap();
        let w = restrict_rescale_field(&x2, [0.0; 2], 0.5, 0.25, &line(5)).unwrap();
        for (i, v) in w.values.iter().enumerate() {
            let p = w.grid.coord(i)[0];
            assert!((v - p * p).abs() < 1e-15);
        }
        assert!(matches!(
            restrict_rescale_field(&x, [0.0; 2], 0.5, 1.0, &line(8)),
            Err(Error::Misaligned(_))
        ));
    }

    #[test]
    fn gradient_examples() {
        let g = line(5);
        let c = ScalarField::from_fn(g, |_| 4.0).unwrap();
        assert!(discrete_gradient(&c).values.iter().all(|d| *d == [0.0, 0.0]));
        let l = ScalarField::from_fn(g, |p| 3.0 * p[0]).unwrap();
        assert!(discrete_gradient(&l).values.iter().all(|d| (d[0] - 3.0).abs() < 1e-12));
        let sq = GridSpec::square(4, -1.0, 1.0).unwrap();
        let a = ScalarField::from_fn(sq, |p| p[0] + 2.0 * p[1]).unwrap();
        let d = discrete_gradient(&a);
        assert_eq!(d.values.len(), 32 * 32);
        assert!(d
            .values
            .iter()
            .all(|v| (v[0] - 1.0).abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12));
    }

    #[test]
    fn ball_in_two_dimensions_is_euclidean() {
        let g = GridSpec::square(2, -1.0, 1.0).unwrap();
        let b = BallSpec::at(&g, [0.0, 0.0], 0.5).unwrap();
        // offsets (i,j) with i²+j² ≤ 4 on the quarter-spaced lattice
        assert_eq!(b.nodes(&g).unwrap().len(), 13);
    }

    #[test]
    fn csv_round_trip() {
        let g = GridSpec::square(3, 0.0, 1.0).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0].sin() + 0.1 * p[1]).unwrap();
        let back = ScalarField::from_csv(u.to_csv().as_bytes()).unwrap();
        assert_eq!(back, u);
    }
}
