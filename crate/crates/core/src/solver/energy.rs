use crate::error::Result;
use crate::field::{GridSpec, Region, ScalarField};
use crate::potential::PotentialSpec;

/// Calls `f(p, q)` for every lattice edge with both ends in `mask`.
pub(crate) fn for_each_edge<F: FnMut(usize, usize)>(grid: &GridSpec, mask: &[bool], mut f: F) {
    let [nx, ny] = grid.nodes();
    for j in 0..ny {
        for i in 0..nx - 1 {
            let p = j * nx + i;
            if mask[p] && mask[p + 1] {
                f(p, p + 1);
            }
        }
    }
    if grid.dim == 2 {
        for j in 0..ny - 1 {
            for i in 0..nx {
                let p = j * nx + i;
                if mask[p] && mask[p + nx] {
                    f(p, p + nx);
                }
            }
        }
    }
}

/// `Σ h^{n-2} (u_p − u_q)²` over edges inside `mask`: the discrete `∫|Du|²`.
pub(crate) fn dirichlet_sum(values: &[f64], grid: &GridSpec, mask: &[bool]) -> f64 {
    let mut s = 0.0;
    for_each_edge(grid, mask, |p, q| {
        let d = values[p] - values[q];
        s += d * d;
    });
    s * grid.h().powi(grid.dim as i32 - 2)
}

/// `Σ_cells hⁿ 2⁻ⁿ Σ_corners σ(x_k, u_k)` over cells with every corner in
/// `mask`; `eps > 0` evaluates the smoothed potential.
pub(crate) fn potential_sum(
    values: &[f64],
    grid: &GridSpec,
    mask: &[bool],
    spec: &PotentialSpec,
    eps: f64,
) -> f64 {
    let mut s = 0.0;
    for c in 0..grid.cell_count() {
        let (k, n) = grid.cell_corners(c);
        let corners = &k[..n];
        if corners.iter().all(|&i| mask[i]) {
            s += corners
                .iter()
                .map(|&i| spec.eval_smoothed(grid.coord(i), values[i], eps))
                .sum::<f64>()
                / n as f64;
        }
    }
    s * grid.h().powi(grid.dim as i32)
}

pub(crate) fn energy_with(values: &[f64], grid: &GridSpec, mask: &[bool], spec: &PotentialSpec, eps: f64) -> f64 {
    0.5 * dirichlet_sum(values, grid, mask) + potential_sum(values, grid, mask, spec, eps)
}

/// Discrete `J(u, region)`.
pub fn discrete_energy(u: &ScalarField, spec: &PotentialSpec, region: &Region) -> Result<f64> {
    let mask = region.mask(&u.grid)?;
    Ok(energy_with(&u.values, &u.grid, &mask, spec, 0.0))
}

/// Discrete `∫_region |Du|²` (no factor ½).
pub fn dirichlet_integral(u: &ScalarField, region: &Region) -> Result<f64> {
    let mask = region.mask(&u.grid)?;
    Ok(dirichlet_sum(&u.values, &u.grid, &mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{BallSpec, GridSpec};

    #[test]
    fn zero_field_zero_potential() {
        let g = GridSpec::interval(5, 0.0, 1.0).unwrap();
        let u = ScalarField::zeros(g);
        assert_eq!(discrete_energy(&u, &PotentialSpec::zero(), &Region::Whole).unwrap(), 0.0);
    }

    #[test]
    fn linear_profile_energy() {
        let g = GridSpec::interval(8, 0.0, 1.0).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0]).unwrap();
        let e = discrete_energy(&u, &PotentialSpec::zero(), &Region::Whole).unwrap();
        assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn alt_caffarelli_kink_converges() {
        let ac = PotentialSpec::alt_caffarelli(1.0).unwrap();
        let mut prev_err = f64::INFINITY;
        for m in [6, 8, 10] {
            let g = GridSpec::interval(m, -1.0, 1.0).unwrap();
            let u = ScalarField::from_fn(g, |p| p[0].max(0.0)).unwrap();
            let e = discrete_energy(&u, &ac, &Region::Whole).unwrap();
            let err = (e - 1.5).abs();
            assert!(err <= 2.0 * g.h());
            assert!(err <= prev_err);
            prev_err = err;
        }
    }

    #[test]
    fn ball_region_counts_inner_edges_only() {
        let g = GridSpec::interval(4, -1.0, 1.0).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0]).unwrap();
        let b = BallSpec::at(&g, [0.0, 0.0], 0.5).unwrap();
        let e = discrete_energy(&u, &PotentialSpec::zero(), &Region::Ball(b)).unwrap();
        assert!((e - 0.5).abs() < 1e-12);
    }
}
