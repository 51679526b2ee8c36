//! Regularity measurements: growth at free-boundary points, seminorms,
//! gradient-oscillation decay and the empirical flatness calibration.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{l2_norm_on_ball, sup_norm_on_ball, BallSpec, GridSpec, ScalarField};
use crate::numeric::linear_fit;
use crate::potential::PotentialSpec;
use crate::renorm::{eval_omega, ModulusTable};
use crate::solver::{minimize, MinimizeOptions};
use crate::Point;

/// Smallest radius (in cells) admitted to any fit or seminorm.
pub const FLOOR_CELLS: f64 = 8.0;
/// Default pair count for seminorms in two dimensions.
pub const PAIR_SAMPLES_2D: usize = 100_000;
/// Default seed for sampled estimators.
pub const DEFAULT_SEED: u64 = 0x5eed;

/// Attached to every calibration result.
pub const CALIBRATION_NOTE: &str =
    "empirical threshold over the sampled data only; no uniform flatness constant is implied";

/// Attached to every report built on detected free-boundary points.
pub const FREE_BOUNDARY_NOTE: &str =
    "free boundary detected as the topological boundary of {u > tau}; points of the singular set not on it are not seen";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub center: Point,
    /// Strictly decreasing.
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub fitted_exponent: Option<f64>,
    pub fitted_constant: Option<f64>,
    /// Largest deviation of the log-log fit.
    pub residual: Option<f64>,
    /// Number of (radius, value) pairs used by the fit.
    pub fit_points: usize,
    pub seed: Option<u64>,
    pub diagnostics: BTreeMap<String, f64>,
    pub note: Option<String>,
}

/// Least-squares fit of `log value` against `log r` over radii at or above
/// the `8h` floor with positive values.
pub fn fit_report(center: Point, radii: Vec<f64>, values: Vec<f64>, h: f64) -> Result<RegularityReport> {
    if radii.len() != values.len() {
        return Err(Error::InvalidParameter("radii and values differ in length".into()));
    }
    if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("radii must be positive and strictly decreasing".into()));
    }
    if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("values must be finite and nonnegative".into()));
    }
    let floor = FLOOR_CELLS * h * (1.0 - 1e-12);
    let (xs, ys): (Vec<f64>, Vec<f64>) = radii
        .iter()
        .zip(&values)
        .filter(|(r, v)| **r >= floor && **v > 0.0)
        .map(|(r, v)| (r.ln(), v.ln()))
        .unzip();
    let (fitted_exponent, fitted_constant, residual) = if xs.len() >= 2 {
        let (s, c, res) = linear_fit(&xs, &ys);
        (Some(s), Some(c.exp()), Some(res))
    } else {
        (None, None, None)
    };
    Ok(RegularityReport {
        center,
        fit_points: xs.len(),
        radii,
        values,
        fitted_exponent,
        fitted_constant,
        residual,
        seed: None,
        diagnostics: BTreeMap::new(),
        note: None,
    })
}

/// Dyadic radii `2^{-k}` for `k` from `k_top` while the radius stays at or above `floor`.
pub fn dyadic_radii(k_top: u32, floor: f64) -> Vec<f64> {
    (k_top..)
        .map(|k| (-(k as f64)).exp2())
        .take_while(|r| *r >= floor * (1.0 - 1e-12))
        .collect()
}

/// Non-Dirichlet nodes with `u ≤ τ` next to a node with `u > τ`.
/// `tau` defaults to `10⁻⁶ sup|u|`.
pub fn free_boundary_points(u: &ScalarField, tau: Option<f64>) -> Result<Vec<Point>> {
    let tau = tau.unwrap_or(1e-6 * u.sup());
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be nonnegative, got {tau}")));
    }
    let min = u.values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -tau {
        return Err(Error::Precondition(format!("field takes the value {min} below -tau = {}", -tau)));
    }
    let g = &u.grid;
    Ok((0..g.node_count())
        .filter(|&p| {
            !u.boundary[p] && u.values[p] <= tau && g.neighbors(p).any(|q| u.values[q] > tau)
        })
        .map(|p| g.coord(p))
        .collect())
}

fn ball(u: &ScalarField, x0: Point, r: f64) -> Result<BallSpec> {
    BallSpec::at(&u.grid, x0, r)
}

/// `sup_{B_r(x₀)} |u|` for each radius, with a log-log fit.
pub fn growth_profile(u: &ScalarField, x0: Point, radii: &[f64]) -> Result<RegularityReport> {
    let values = radii
        .iter()
        .map(|&r| sup_norm_on_ball(u, &ball(u, x0, r)?))
        .collect::<Result<Vec<f64>>>()?;
    let mut rep = fit_report(x0, radii.to_vec(), values, u.grid.h())?;
    rep.note = Some(FREE_BOUNDARY_NOTE.into());
    Ok(rep)
}

/// `‖u‖_{L∞}` on the ball of radius `3/4·R` around the box centre, `R` half the
/// shortest box side.
pub fn three_quarter_sup(u: &ScalarField) -> Result<f64> {
    let g = &u.grid;
    let c = g
        .center_node()
        .ok_or_else(|| Error::Precondition("box centre is not a grid node".into()))?;
    let hi = g.hi();
    let half = (0..g.dim).map(|a| 0.5 * (hi[a] - g.lo[a])).fold(f64::INFINITY, f64::min);
    sup_norm_on_ball(u, &BallSpec { center: c, radius: 0.75 * half })
}

fn max_ratio<F: Fn(f64) -> Result<f64>>(u: &ScalarField, x0: Point, radii: &[f64], denom: F) -> Result<f64> {
    let mut best: f64 = 0.0;
    for &r in radii {
        let num = sup_norm_on_ball(u, &ball(u, x0, r)?)?;
        if num == 0.0 {
            continue;
        }
        let d = denom(r)?;
        best = best.max(if d > 0.0 { num / d } else { f64::INFINITY });
    }
    Ok(best)
}

/// `Ĉ = max_r sup_{B_r(x₀)}|u| / (r (‖u‖_{L∞(B_{3/4})} + √‖σ‖∞))`.
pub fn check_lipschitz_bound(u: &ScalarField, spec: &PotentialSpec, x0: Point, radii: &[f64]) -> Result<f64> {
    let scale = three_quarter_sup(u)? + spec.sup_norm().sqrt();
    max_ratio(u, x0, radii, |r| Ok(r * scale))
}

/// `Ĉ = max_r sup_{B_r(x₀)}|u| / (r ω(r) (‖u‖_{L∞(B_{3/4})} + √‖σ‖∞))` with the
/// dyadic step `ω` of `table`.
pub fn check_c1_bound(
    u: &ScalarField,
    spec: &PotentialSpec,
    x0: Point,
    table: &ModulusTable,
    radii: &[f64],
) -> Result<f64> {
    let scale = three_quarter_sup(u)? + spec.sup_norm().sqrt();
    for &r in radii {
        eval_omega(table, r)?;
    }
    max_ratio(u, x0, radii, |r| Ok(r * eval_omega(table, r)? * scale))
}

/// Separation window of the sampled seminorms, as multiples of `h` and absolute.
fn separation_ok(d: f64, h: f64) -> bool {
    d >= FLOOR_CELLS * h * (1.0 - 1e-12) && d <= 0.5
}

fn pair_seminorm<W: Fn(f64) -> f64>(u: &ScalarField, region: &BallSpec, seed: u64, weight: W) -> Result<f64> {
    let g = &u.grid;
    let norm = l2_norm_on_ball(
        u,
        &BallSpec {
            center: region.center,
            radius: 2.0 * region.radius,
        },
    )?;
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let nodes = region.nodes(g)?;
    let pts: Vec<Point> = nodes.iter().map(|&p| g.coord(p)).collect();
    let h = g.h();
    let ratio = |a: usize, b: usize| -> Option<f64> {
        let d = ((pts[a][0] - pts[b][0]).powi(2) + (pts[a][1] - pts[b][1]).powi(2)).sqrt();
        separation_ok(d, h).then(|| (u.values[nodes[a]] - u.values[nodes[b]]).abs() / weight(d))
    };
    let mut best: f64 = 0.0;
    if g.dim == 1 {
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                if let Some(v) = ratio(a, b) {
                    best = best.max(v);
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut accepted = 0;
        let mut attempts = 0;
        while accepted < PAIR_SAMPLES_2D && attempts < 100 * PAIR_SAMPLES_2D {
            attempts += 1;
            let a = rng.gen_range(0..pts.len());
            let b = rng.gen_range(0..pts.len());
            if let Some(v) = ratio(a, b) {
                best = best.max(v);
                accepted += 1;
            }
        }
    }
    Ok(best / norm)
}

/// Log-Lipschitz seminorm on `region`, normalized by `‖u‖_{L²}` on the
/// concentric ball of twice the radius. Pairs closer than `8h` or farther
/// than `1/2` are skipped; 2D pairs are drawn from a seeded stream.
pub fn log_lip_seminorm(u: &ScalarField, region: &BallSpec, seed: u64) -> Result<f64> {
    pair_seminorm(u, region, seed, |d| d * (1.0 / d).ln())
}

/// Hölder seminorm of order `alpha` with the conventions of [`log_lip_seminorm`].
pub fn holder_seminorm(u: &ScalarField, alpha: f64, region: &BallSpec, seed: u64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    pair_seminorm(u, region, seed, |d| d.powf(alpha))
}

/// `∫_{B_r(x₀)} |Du − (Du)_r|²` per radius with a log-log fit.
pub fn gradient_oscillation_decay(u: &ScalarField, x0: Point, radii: &[f64]) -> Result<RegularityReport> {
    let values = radii
        .iter()
        .map(|&r| crate::solver::gradient_oscillation(u, &ball(u, x0, r)?))
        .collect::<Result<Vec<f64>>>()?;
    fit_report(x0, radii.to_vec(), values, u.grid.h())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    pub seed: u64,
    pub delta_max: f64,
    /// Bisection steps in `log₂ δ`.
    pub bits: u32,
    /// Width of the searched window in `log₂ δ` below `delta_max`.
    pub span_log2: f64,
    pub minimize: MinimizeOptions,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            seed: DEFAULT_SEED,
            delta_max: 1.0,
            bits: 4,
            span_log2: 20.0,
            minimize: MinimizeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProbe {
    pub delta: f64,
    pub passed: bool,
    /// Samples satisfying the normalization, hence tested.
    pub samples_tested: usize,
    pub worst_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub delta: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
    pub probes: Vec<CalibrationProbe>,
    pub note: String,
}

/// Boundary data `θ·U` with `θ = 2^{-6V}`, `U, V` uniform; one-dimensional
/// grids get independent end values, two-dimensional grids a product of
/// random sines on the box boundary. Values lie in `[0, 1]`; the node `center`
/// is pinned to 0.
fn sample_boundaries(grid: &GridSpec, center: usize, samples: usize, seed: u64) -> Result<Vec<ScalarField>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let theta = (-6.0 * rng.gen::<f64>()).exp2();
            let mut f = ScalarField::zeros(*grid);
            if grid.dim == 1 {
                let n = f.values.len();
                f.values[0] = theta * rng.gen::<f64>();
                f.values[n - 1] = theta * rng.gen::<f64>();
            } else {
                let (k1, k2): (f64, f64) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
                let (p1, p2): (f64, f64) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
                for i in 0..f.values.len() {
                    if f.boundary[i] {
                        let x = grid.coord(i);
                        let s = 0.5 + 0.5 * (k1 * x[0] + p1).sin() * (k2 * x[1] + p2).sin();
                        f.values[i] = theta * s;
                    }
                }
            }
            let mut mask = f.boundary.clone();
            mask[center] = true;
            f.with_boundary(mask)
        })
        .collect()
}

/// Empirical flatness threshold: the largest `δ` (to `bits` bisection steps
/// in `log₂ δ`) such that every sampled minimizer with `‖σ‖∞ = δ` satisfies
/// `sup_{B_{1/2}} u ≤ ε`. Samples carry boundary data in `[0, 1]` and are
/// pinned to `u = 0` at the box centre, which must be a node whose unit ball
/// lies in the box. Samples violating `0 ≤ u ≤ 1` on the unit ball are not
/// tested.
pub fn flatness_calibration<G>(
    family: G,
    epsilon: f64,
    samples: usize,
    grid: &GridSpec,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult>
where
    G: Fn(f64) -> Result<PotentialSpec> + Sync,
{
    if !(epsilon > 0.0) || samples == 0 || !(opts.delta_max > 0.0) {
        return Err(Error::InvalidParameter("epsilon, samples and delta_max must be positive".into()));
    }
    let center = grid
        .center_node()
        .ok_or_else(|| Error::Precondition("box centre is not a grid node".into()))?;
    let unit = BallSpec { center, radius: 1.0 };
    unit.check(grid)?;
    let half = BallSpec { center, radius: 0.5 };
    let unit_nodes = unit.nodes(grid)?;
    let data = sample_boundaries(grid, center, samples, opts.seed)?;
    let probe = |delta: f64| -> Result<CalibrationProbe> {
        let spec = family(delta)?;
        let outcomes = data
            .par_iter()
            .map(|b| -> Result<Option<f64>> {
                let u = minimize(&spec, b, &opts.minimize)?.field;
                let normalized = unit_nodes.iter().all(|&p| (-1e-9..=1.0 + 1e-12).contains(&u.values[p]));
                if !normalized {
                    return Ok(None);
                }
                Ok(Some(sup_norm_on_ball(&u, &half)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let sups: Vec<f64> = outcomes.into_iter().flatten().collect();
        Ok(CalibrationProbe {
            delta,
            passed: sups.iter().all(|&s| s <= epsilon),
            samples_tested: sups.len(),
            worst_sup: sups.iter().copied().fold(0.0, f64::max),
        })
    };

    let mut probes = Vec::new();
    let hi_exp = opts.delta_max.log2();
    let top = probe(opts.delta_max)?;
    let top_pass = top.passed;
    probes.push(top);
    let delta = if top_pass {
        opts.delta_max
    } else {
        let mut lo = hi_exp - opts.span_log2;
        let mut hi = hi_exp;
        let bottom = probe(lo.exp2())?;
        let bottom_pass = bottom.passed;
        probes.push(bottom);
        if !bottom_pass {
            return Err(Error::CalibrationFailure(format!(
                "no delta in [2^{lo}, {}] passes for epsilon = {epsilon}",
                opts.delta_max
            )));
        }
        for _ in 0..opts.bits {
            let mid = 0.5 * (lo + hi);
            let p = probe(mid.exp2())?;
            if p.passed {
                lo = mid;
            } else {
                hi = mid;
            }
            probes.push(p);
        }
        lo.exp2()
    };
    Ok(CalibrationResult {
        delta,
        epsilon,
        samples,
        seed: opts.seed,
        probes,
        note: CALIBRATION_NOTE.into(),
    })
}
