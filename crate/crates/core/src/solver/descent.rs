//! Energy minimization by exact line searches along hat functions.
//!
//! One sweep visits the bilinear hat functions of every dyadic level, from the
//! coarsest down to the nodal level, in lexicographic order of their centres.
//! Each visit minimizes the energy along the hat by a grid scan followed by
//! Brent refinement and keeps the move only if the energy drops. At the
//! nodal level this is Gauss–Seidel coordinate minimization; coarser levels
//! move whole patches, which lets free boundaries travel many cells per sweep.
//!
//! Potentials with a jump or a steep kink at zero are first relaxed by a
//! continuation over left-averaged potentials of width 2⁻¹, 2⁻², … down to
//! four cells; the final stage always uses the exact potential. Fine grids
//! start from the interpolated minimizer of the next coarser grid (nested
//! iteration); one-phase potentials repeat the width 4h there.

use serde::{Deserialize, Serialize};

use super::energy::energy_with;
use super::linear::harmonic_extension;
use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::numeric::brent_minimize;
use crate::potential::{Family, PotentialSpec};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    /// Stop once a sweep lowers the energy by less than this.
    pub tol: f64,
    /// Defaults to 10⁵ in 1D and 10⁴ in 2D.
    pub max_sweeps: Option<usize>,
    /// Bracketing samples of nodal line searches in full sweeps.
    pub line_search_grid: usize,
    pub continuation: bool,
    /// Start from the interpolated minimizer of the grid one level coarser.
    pub nested: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            tol: 1e-10,
            max_sweeps: None,
            line_search_grid: 16,
            continuation: true,
            nested: true,
        }
    }
}

impl MinimizeOptions {
    pub fn sweep_budget(&self, dim: usize) -> usize {
        self.max_sweeps
            .unwrap_or(if dim == 1 { 100_000 } else { 10_000 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub field: ScalarField,
    pub energy: f64,
    /// Sweeps over all stages and all nested grids.
    pub sweeps: usize,
    /// Largest single-update energy decrease in the last sweep.
    pub residual: f64,
    pub converged: bool,
    /// Energy after each sweep of the exact stage, starting with its initial value.
    pub energy_history: Vec<f64>,
}

/// The JSON-facing part of a [`MinimizeResult`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub energy: f64,
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
}

impl MinimizeResult {
    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            energy: self.energy,
            sweeps: self.sweeps,
            residual: self.residual,
            converged: self.converged,
        }
    }
}

/// Samples of the bracketing grid for coarse levels and for nodal searches of
/// partial sweeps; nodal searches of full sweeps use `line_search_grid`.
const COARSE_SAMPLES: usize = 4;
/// A coarse level is idle when its decrease is below this fraction of the previous sweep's.
const IDLE_FRACTION: f64 = 1e-2;
/// Longest run of skipped visits of an idle level.
const MAX_BACKOFF: u32 = 15;
/// Intermediate continuation stages stop at this multiple of `tol`.
const STAGE_TOL_FACTOR: f64 = 1e3;
/// Nested iteration stops coarsening at this spacing exponent.
const NESTED_MIN_M: u32 = 6;

pub fn minimize(
    spec: &PotentialSpec,
    boundary: &ScalarField,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult> {
    if boundary.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("boundary data".into()));
    }
    if !(opts.tol > 0.0) || opts.line_search_grid < 2 {
        return Err(Error::InvalidParameter("tol must be positive and line_search_grid ≥ 2".into()));
    }
    let grid = boundary.grid;
    let (mut u, mut total_sweeps, relax) = match coarse_start(spec, boundary, opts)? {
        Some((u, sweeps)) => (u, sweeps, false),
        None => (harmonic_extension(boundary)?, 0, true),
    };
    let free: Vec<bool> = boundary.boundary.iter().map(|b| !b).collect();
    let budget = opts.sweep_budget(grid.dim);

    let mut stages = Vec::new();
    if opts.continuation && spec.benefits_from_continuation() {
        let floor = 4.0 * grid.h();
        // a nested start is already relaxed down to the coarse floor 8h;
        // one-phase fronts are re-relaxed once at this grid's floor
        let mut eps = match (relax, spec.flags().one_phase) {
            (true, _) => 0.5,
            (false, true) => floor,
            (false, false) => 0.0,
        };
        while eps >= floor && eps > 0.0 {
            stages.push(eps);
            eps *= 0.5;
        }
    }

    // u ↦ u₊ lowers the Dirichlet term and leaves a one-phase σ unchanged
    let truncate = spec.flags().one_phase && boundary.values.iter().zip(&boundary.boundary).all(|(v, b)| !*b || *v >= 0.0);
    let project = |v: &mut [f64]| {
        if truncate {
            v.iter_mut().for_each(|x| *x = x.max(0.0));
        }
    };
    project(&mut u.values);

    for &eps in &stages {
        let mut d = Descent::new(grid, spec, &free, eps, opts.line_search_grid);
        let mut full = true;
        for _ in 0..budget {
            let (dec, _) = d.sweep(&mut u.values, full);
            project(&mut u.values);
            total_sweeps += 1;
            let small = dec < STAGE_TOL_FACTOR * opts.tol;
            if small && full {
                break;
            }
            full = small;
        }
    }

    let all = vec![true; grid.node_count()];
    let mut d = Descent::new(grid, spec, &free, 0.0, opts.line_search_grid);
    let mut history = vec![energy_with(&u.values, &grid, &all, spec, 0.0)];
    let mut residual = 0.0;
    let mut converged = false;
    let mut full = true;
    for _ in 0..budget {
        let (dec, max_dec) = d.sweep(&mut u.values, full);
        project(&mut u.values);
        total_sweeps += 1;
        residual = max_dec;
        history.push(energy_with(&u.values, &grid, &all, spec, 0.0));
        let small = dec < opts.tol;
        // convergence is only declared on a sweep that visited every level
        if small && full {
            converged = true;
            break;
        }
        full = small;
    }
    if free.iter().all(|f| !f) {
        converged = true;
    }
    let energy = *history.last().expect("history starts non-empty");
    Ok(MinimizeResult {
        field: u,
        energy,
        sweeps: total_sweeps,
        residual,
        converged,
        energy_history: history,
    })
}

/// Minimizer on the grid of spacing `2h` with the Dirichlet data of the
/// even-indexed nodes, interpolated back and overwritten by the fine data.
/// `None` when the grid is already coarse or cannot be halved.
fn coarse_start(
    spec: &PotentialSpec,
    boundary: &ScalarField,
    opts: &MinimizeOptions,
) -> Result<Option<(ScalarField, usize)>> {
    let g = boundary.grid;
    if !opts.nested || g.m <= NESTED_MIN_M || g.cells.iter().any(|c| c % 2 == 1) {
        return Ok(None);
    }
    let Ok(cg) = GridSpec::new(g.dim, g.m - 1, g.lo, g.hi()) else {
        return Ok(None);
    };
    let fine = |p: usize| {
        let (i, j) = cg.ij(p);
        g.index(2 * i, 2 * j)
    };
    let values = (0..cg.node_count()).map(|p| boundary.values[fine(p)]).collect();
    let mask = (0..cg.node_count()).map(|p| boundary.boundary[fine(p)]).collect();
    let coarse = ScalarField::new(cg, values)?.with_boundary(mask)?;
    if coarse.boundary.iter().all(|b| !b) {
        return Ok(None);
    }
    let r = minimize(spec, &coarse, opts)?;
    let cu = &r.field.values;
    let mut u = boundary.clone();
    for p in 0..g.node_count() {
        if boundary.boundary[p] {
            continue;
        }
        let (i, j) = g.ij(p);
        let (i0, i1) = (i / 2, (i + 1) / 2);
        let (j0, j1) = (j / 2, (j + 1) / 2);
        u.values[p] = 0.25 * (cu[cg.index(i0, j0)] + cu[cg.index(i1, j0)] + cu[cg.index(i0, j1)] + cu[cg.index(i1, j1)]);
    }
    Ok(Some((u, r.sweeps)))
}

struct Descent<'a> {
    grid: GridSpec,
    spec: &'a PotentialSpec,
    free: &'a [bool],
    eps: f64,
    samples: usize,
    /// `h^{n-2}`
    he: f64,
    /// `hⁿ`
    hn: f64,
    quadratic_only: bool,
    phi: Vec<f64>,
    /// (position, value, φ, quadrature weight) of the nodes moved by the hat
    nodes: Vec<(Point, f64, f64, f64)>,
    /// Per coarse level: (backoff, sweeps left to skip).
    idle: Vec<(u32, u32)>,
    last_total: f64,
    /// Nodes whose stencil changed since their last nodal search.
    dirty: Vec<bool>,
}

impl<'a> Descent<'a> {
    fn new(grid: GridSpec, spec: &'a PotentialSpec, free: &'a [bool], eps: f64, samples: usize) -> Self {
        let h = grid.h();
        Descent {
            grid,
            spec,
            free,
            eps,
            samples,
            he: h.powi(grid.dim as i32 - 2),
            hn: h.powi(grid.dim as i32),
            quadratic_only: matches!(spec.family(), Family::Zero),
            phi: Vec::new(),
            nodes: Vec::new(),
            idle: Vec::new(),
            last_total: f64::INFINITY,
            dirty: vec![true; grid.node_count()],
        }
    }

    /// One multilevel sweep; returns (total decrease, largest single decrease).
    /// Unless `full`, coarse levels whose last visit was unproductive are
    /// skipped with exponential backoff, and nodal searches are skipped at
    /// nodes whose stencil is unchanged since their last search.
    fn sweep(&mut self, u: &mut [f64], full: bool) -> (f64, f64) {
        let [cx, cy] = self.grid.cells;
        let mut top = 0;
        while (2usize << top) <= cx.max(cy) {
            top += 1;
        }
        self.idle.resize(top + 1, (0, 0));
        let mut total = 0.0;
        let mut largest: f64 = 0.0;
        for s in (0..=top).rev() {
            if s > 0 && !full && self.idle[s].1 > 0 {
                self.idle[s].1 -= 1;
                continue;
            }
            let step = 1usize << s;
            let rows = if self.grid.dim == 2 { cy } else { 0 };
            let mut level = 0.0;
            for cj in (0..=rows).step_by(step) {
                for ci in (0..=cx).step_by(step) {
                    let idx = self.grid.index(ci, cj);
                    if !self.free[idx] || (s == 0 && !full && !self.dirty[idx]) {
                        continue;
                    }
                    if s == 0 {
                        self.dirty[idx] = false;
                    }
                    let samples = if s == 0 && full { self.samples } else { COARSE_SAMPLES };
                    let dec = self.line_search(u, ci, cj, step, samples);
                    level += dec;
                    largest = largest.max(dec);
                }
            }
            total += level;
            let (backoff, _) = self.idle[s];
            self.idle[s] = if level < IDLE_FRACTION * self.last_total {
                let b = (2 * backoff + 1).min(MAX_BACKOFF);
                (b, b)
            } else {
                (0, 0)
            };
        }
        self.last_total = total;
        (total, largest)
    }

    /// Minimizes along the hat of half-width `hw` centred at node `(ci, cj)`,
    /// bracketing with `n` equispaced samples.
    fn line_search(&mut self, u: &mut [f64], ci: usize, cj: usize, hw: usize, n: usize) -> f64 {
        let g = self.grid;
        let two_d = g.dim == 2;
        let [cx, cy] = g.cells;
        let nx = cx + 1;
        let (i0, i1) = (ci.saturating_sub(hw), (ci + hw).min(cx));
        let (j0, j1) = if two_d {
            (cj.saturating_sub(hw), (cj + hw).min(cy))
        } else {
            (0, 0)
        };
        let w = i1 - i0 + 1;
        let hgt = j1 - j0 + 1;
        let inv = 1.0 / hw as f64;

        self.phi.clear();
        self.phi.resize(w * hgt, 0.0);
        let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in j0..=j1 {
            let wy = if two_d { 1.0 - (j as f64 - cj as f64).abs() * inv } else { 1.0 };
            for i in i0..=i1 {
                let p = j * nx + i;
                umin = umin.min(u[p]);
                umax = umax.max(u[p]);
                if self.free[p] {
                    let wx = 1.0 - (i as f64 - ci as f64).abs() * inv;
                    self.phi[(j - j0) * w + (i - i0)] = wx * wy;
                }
            }
        }

        // quadratic part A t² + B t
        let (mut a, mut b) = (0.0, 0.0);
        for j in j0..=j1 {
            for i in i0..i1 {
                let k = (j - j0) * w + (i - i0);
                let dphi = self.phi[k + 1] - self.phi[k];
                if dphi != 0.0 {
                    let p = j * nx + i;
                    a += dphi * dphi;
                    b += (u[p + 1] - u[p]) * dphi;
                }
            }
        }
        if two_d {
            for j in j0..j1 {
                for i in i0..=i1 {
                    let k = (j - j0) * w + (i - i0);
                    let dphi = self.phi[k + w] - self.phi[k];
                    if dphi != 0.0 {
                        let p = j * nx + i;
                        a += dphi * dphi;
                        b += (u[p + nx] - u[p]) * dphi;
                    }
                }
            }
        }
        let a = 0.5 * self.he * a;
        let b = self.he * b;
        if a <= 0.0 {
            return 0.0;
        }

        let uc = u[cj * nx + ci];
        let lo = umin - 1.0 - uc;
        let hi = umax + 1.0 - uc;

        let t_best;
        let dec;
        if self.quadratic_only {
            let t = (-b / (2.0 * a)).clamp(lo, hi);
            t_best = t;
            dec = -(a * t * t + b * t);
        } else {
            self.nodes.clear();
            let half = if two_d { 0.25 } else { 0.5 };
            for j in j0..=j1 {
                let ay = if !two_d { 1.0 } else { f64::from(u8::from(j > 0) + u8::from(j < cy)) };
                for i in i0..=i1 {
                    let phi = self.phi[(j - j0) * w + (i - i0)];
                    if phi != 0.0 {
                        let ax = f64::from(u8::from(i > 0) + u8::from(i < cx));
                        let p = j * nx + i;
                        self.nodes.push((g.coord(p), u[p], phi, half * ax * ay));
                    }
                }
            }
            let (spec, eps, hn, nodes) = (self.spec, self.eps, self.hn, &self.nodes);
            let f = |t: f64| -> f64 {
                let mut s = 0.0;
                for &(x, v, phi, weight) in nodes {
                    s += weight * spec.eval_smoothed(x, v + t * phi, eps);
                }
                a * t * t + b * t + hn * s
            };
            let f0 = f(0.0);
            let dt = (hi - lo) / (n - 1) as f64;
            let (mut kbest, mut fbest) = (0usize, f64::INFINITY);
            for k in 0..n {
                let v = f(lo + k as f64 * dt);
                if v < fbest {
                    kbest = k;
                    fbest = v;
                }
            }
            let mut tb = lo + kbest as f64 * dt;
            if f0 <= fbest {
                tb = 0.0;
                fbest = f0;
            }
            // the centre value 0 is where one-phase potentials jump or kink
            if uc != 0.0 {
                let fz = f(-uc);
                if fz < fbest {
                    tb = -uc;
                    fbest = fz;
                }
            }
            let left = if tb == 0.0 { -dt } else { tb - dt };
            let right = if tb == 0.0 { dt } else { tb + dt };
            let xtol = if hw == 1 { 1e-13 * (1.0 + uc.abs()) } else { 1e-9 * (hi - lo) };
            let (tr, fr) = brent_minimize(f, left.max(lo), right.min(hi), xtol, 100);
            if fr < fbest {
                tb = tr;
                fbest = fr;
            }
            t_best = tb;
            dec = f0 - fbest;
        }
        if !(dec > 0.0) || t_best == 0.0 {
            return 0.0;
        }
        for j in j0..=j1 {
            for i in i0..=i1 {
                let phi = self.phi[(j - j0) * w + (i - i0)];
                if phi != 0.0 {
                    u[j * nx + i] += t_best * phi;
                }
            }
        }
        let (dj0, dj1) = if two_d { (j0.saturating_sub(1), (j1 + 1).min(cy)) } else { (0, 0) };
        for j in dj0..=dj1 {
            for i in i0.saturating_sub(1)..=(i1 + 1).min(cx) {
                self.dirty[j * nx + i] = true;
            }
        }
        dec
    }
}
