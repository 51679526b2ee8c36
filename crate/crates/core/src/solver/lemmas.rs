//! Harmonic replacement and the energy-comparison lemmas built on it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::energy::dirichlet_sum;
use super::linear::solve_laplace;
use crate::error::{Error, Result};
use crate::estimate::{fit_report, RegularityReport};
use crate::field::{discrete_gradient, l2_norm_on_ball, sup_norm_on_ball, BallSpec, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplacementReport {
    /// `∫_B |Dψ − Dh|²`
    pub lhs: f64,
    /// `∫_B |Dψ|² − |Dh|²`
    pub rhs: f64,
    pub max_principle_ok: bool,
}

/// Nodes of `ball` whose every lattice neighbour also lies in the ball and
/// that are not Dirichlet nodes of `u`.
fn interior_nodes(u: &ScalarField, ball: &BallSpec) -> Result<(Vec<bool>, Vec<bool>)> {
    let g = &u.grid;
    let inside = ball.mask(g)?;
    let full = 2 * g.dim;
    let free = (0..g.node_count())
        .map(|p| {
            inside[p]
                && !u.boundary[p]
                && g.neighbors(p).count() == full
                && g.neighbors(p).all(|q| inside[q])
        })
        .collect();
    Ok((inside, free))
}

/// Discrete harmonic function on the interior of `ball` with the values of
/// `u` elsewhere.
pub fn harmonic_replacement(u: &ScalarField, ball: &BallSpec) -> Result<ScalarField> {
    let (_, free) = interior_nodes(u, ball)?;
    let mut h = u.clone();
    solve_laplace(&mut h.values, &u.grid, &free)?;
    Ok(h)
}

pub fn check_replacement_identity(u: &ScalarField, ball: &BallSpec) -> Result<ReplacementReport> {
    let (inside, _) = interior_nodes(u, ball)?;
    let h = harmonic_replacement(u, ball)?;
    let g = &u.grid;
    let diff: Vec<f64> = u.values.iter().zip(&h.values).map(|(a, b)| a - b).collect();
    let lhs = dirichlet_sum(&diff, g, &inside);
    let rhs = dirichlet_sum(&u.values, g, &inside) - dirichlet_sum(&h.values, g, &inside);
    let max_principle_ok = sup_norm_on_ball(&h, ball)? <= sup_norm_on_ball(u, ball)? + 1e-12;
    Ok(ReplacementReport {
        lhs,
        rhs,
        max_principle_ok,
    })
}

/// `∫_{B_r} |Du − (Du)_r|²` over the cells whose corners all lie in `B_r`.
pub(crate) fn gradient_oscillation(u: &ScalarField, ball: &BallSpec) -> Result<f64> {
    let g = &u.grid;
    let inside = ball.mask(g)?;
    let grad = discrete_gradient(u);
    let cells: Vec<usize> = (0..g.cell_count())
        .filter(|&c| {
            let (k, n) = g.cell_corners(c);
            k[..n].iter().all(|&p| inside[p])
        })
        .collect();
    if cells.is_empty() {
        return Ok(0.0);
    }
    let n = cells.len() as f64;
    let mut mean = [0.0; 2];
    for &c in &cells {
        mean[0] += grad.values[c][0] / n;
        mean[1] += grad.values[c][1] / n;
    }
    let s: f64 = cells
        .iter()
        .map(|&c| {
            let d = [grad.values[c][0] - mean[0], grad.values[c][1] - mean[1]];
            d[0] * d[0] + d[1] * d[1]
        })
        .sum();
    Ok(s * g.h().powi(g.dim as i32))
}

/// Gradient-oscillation table over `radii` around the centre of `big`.
///
/// Diagnostics: `replacement_defect` is `∫_{B_R}|Du − Dh|²` and
/// `lemma_constant` the smallest `C` with
/// `osc(r) ≤ C ((r/R)^{n+2β} osc(R) + defect)` over the table.
pub fn campanato_decay(
    u: &ScalarField,
    big: &BallSpec,
    radii: &[f64],
    beta: f64,
) -> Result<RegularityReport> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!("beta must lie in (0,1), got {beta}")));
    }
    let g = &u.grid;
    if let Some(r) = radii.iter().find(|&&r| r > big.radius * (1.0 + 1e-12) || r <= 0.0) {
        return Err(Error::InvalidParameter(format!("radius {r} outside (0, {}]", big.radius)));
    }
    let values = radii
        .iter()
        .map(|&r| {
            gradient_oscillation(
                u,
                &BallSpec {
                    center: big.center,
                    radius: r,
                },
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    let report = check_replacement_identity(u, big)?;
    let defect = report.lhs;
    let osc_big = gradient_oscillation(u, big)?;
    let n = g.dim as f64;
    let constant = radii
        .iter()
        .zip(&values)
        .map(|(&r, &v)| {
            let bound = (r / big.radius).powf(n + 2.0 * beta) * osc_big + defect;
            if v == 0.0 {
                0.0
            } else if bound > 0.0 {
                v / bound
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    let mut rep = fit_report(g.coord(big.center), radii.to_vec(), values, g.h())?;
    let mut diag = BTreeMap::new();
    diag.insert("replacement_defect".to_string(), defect);
    diag.insert("lemma_constant".to_string(), constant);
    diag.insert("beta".to_string(), beta);
    rep.diagnostics.extend(diag);
    Ok(rep)
}

/// `sup_{B_{1/2}} |u| / ‖u‖_{L²(B₁)}` with both balls centred at the box centre;
/// 0 when the L² norm vanishes.
pub fn sup_l2_constant(u: &ScalarField) -> Result<f64> {
    let g = &u.grid;
    let c = g
        .center_node()
        .ok_or_else(|| Error::Precondition("box centre is not a grid node".into()))?;
    let l2 = l2_norm_on_ball(u, &BallSpec { center: c, radius: 1.0 })?;
    if l2 == 0.0 {
        return Ok(0.0);
    }
    Ok(sup_norm_on_ball(u, &BallSpec { center: c, radius: 0.5 })? / l2)
}
