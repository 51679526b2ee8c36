//! Matrix-free conjugate gradients for the discrete Dirichlet problem.

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};

/// Relative residual target of the Laplace solves.
pub(crate) const LAPLACE_RTOL: f64 = 1e-12;

/// Solves `Σ_{q~p} (u_p − u_q) = 0` at every node with `free[p]`, all other
/// nodes held fixed. `values` is the initial guess and receives the solution.
///
/// Returns the final residual norm.
pub(crate) fn solve_laplace(values: &mut [f64], grid: &GridSpec, free: &[bool]) -> Result<f64> {
    let unknowns: Vec<usize> = (0..values.len()).filter(|&i| free[i]).collect();
    let n = unknowns.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut slot = vec![usize::MAX; values.len()];
    for (k, &p) in unknowns.iter().enumerate() {
        slot[p] = k;
    }
    let nbrs: Vec<Vec<usize>> = unknowns.iter().map(|&p| grid.neighbors(p).collect()).collect();

    // b collects the fixed neighbours; A acts on the free unknowns.
    let b: Vec<f64> = nbrs
        .iter()
        .map(|ns| ns.iter().filter(|&&q| slot[q] == usize::MAX).map(|&q| values[q]).sum())
        .collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        for k in 0..n {
            let mut s = nbrs[k].len() as f64 * x[k];
            for &q in &nbrs[k] {
                let j = slot[q];
                if j != usize::MAX {
                    s -= x[j];
                }
            }
            out[k] = s;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut x: Vec<f64> = unknowns.iter().map(|&p| values[p]).collect();
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let target = LAPLACE_RTOL * (1.0 + dot(&b, &b).sqrt());
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    let max_iter = 20 * n + 100;
    let mut iter = 0;
    while rr.sqrt() > target {
        if iter == max_iter {
            return Err(Error::SolverNotConverged {
                iterations: iter,
                residual: rr.sqrt(),
            });
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        // periodic true-residual refresh keeps rounding drift below target
        if iter % 64 == 63 {
            apply(&x, &mut ax);
            for k in 0..n {
                r[k] = b[k] - ax[k];
            }
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        iter += 1;
    }
    for (k, &pi) in unknowns.iter().enumerate() {
        values[pi] = x[k];
    }
    Ok(rr.sqrt())
}

/// Discrete harmonic function agreeing with `boundary` on its mask.
pub fn harmonic_extension(boundary: &ScalarField) -> Result<ScalarField> {
    let mut out = boundary.clone();
    let free: Vec<bool> = boundary.boundary.iter().map(|b| !b).collect();
    solve_laplace(&mut out.values, &boundary.grid, &free)?;
    Ok(out)
}
