//! The five pipelines. Each writes its artifacts through an [`ArtifactSink`]
//! and returns the assertions it checked plus headline metrics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, Params};
use super::record::{ArtifactSink, Assertion, REPORT_SCHEMA, TOOL_VERSION};
use crate::error::{Error, Result};
use crate::estimate::{
    check_c1_bound, check_lipschitz_bound, dyadic_radii, flatness_calibration, free_boundary_points, growth_profile,
    log_lip_seminorm, CalibrationOptions, FLOOR_CELLS,
};
use crate::field::{restrict_rescale_field, BallSpec, GridSpec, Region, ScalarField};
use crate::potential::{affine_conjugate_potential, potential_modulus, rescale_potential, Affine, PotentialSpec};
use crate::renorm::{construct_modulus, construct_modulus_order2, eval_omega, eval_omega_interpolated, Branch, ModulusTable};
use crate::solver::{
    campanato_decay, check_replacement_identity, discrete_energy, minimize, sup_l2_constant, MinimizeOptions,
    MinimizeResult,
};
use crate::Point;

/// Inputs shared by every pipeline.
pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub config_hash: &'a str,
    pub seed: u64,
    /// Directory of the config file; relative table paths resolve against it.
    pub base_dir: &'a Path,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub assertions: Vec<Assertion>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Header<'a> {
    schema: &'static str,
    tool_version: &'static str,
    name: &'a str,
    pipeline: &'a str,
    config_hash: &'a str,
    seed: u64,
    grid: GridSpec,
    potential: &'a PotentialSpec,
}

fn header<'a>(ctx: &'a Context<'_>, pipeline: &'a str, grid: GridSpec) -> Header<'a> {
    Header {
        schema: REPORT_SCHEMA,
        tool_version: TOOL_VERSION,
        name: &ctx.config.name,
        pipeline,
        config_hash: ctx.config_hash,
        seed: ctx.seed,
        grid,
        potential: &ctx.config.potential,
    }
}

fn report(ctx: &Context<'_>, pipeline: &str, grid: GridSpec, body: Value) -> Result<Value> {
    let mut v = serde_json::to_value(header(ctx, pipeline, grid))?;
    if let (Some(obj), Value::Object(extra)) = (v.as_object_mut(), body) {
        obj.extend(extra);
    }
    Ok(v)
}

fn minimize_options(p: &Params) -> MinimizeOptions {
    let mut o = MinimizeOptions::default();
    if let Some(t) = p.tol {
        o.tol = t;
    }
    if p.max_sweeps.is_some() {
        o.max_sweeps = p.max_sweeps;
    }
    if let Some(n) = p.line_search_grid {
        o.line_search_grid = n;
    }
    o
}

fn solve_field(ctx: &Context<'_>) -> Result<(GridSpec, MinimizeResult)> {
    let grid = ctx.config.grid.to_grid()?;
    let boundary = ctx
        .config
        .boundary
        .as_ref()
        .ok_or_else(|| Error::Config("this pipeline needs `boundary`".into()))?
        .build(&grid, ctx.base_dir)?;
    let r = minimize(&ctx.config.potential, &boundary, &minimize_options(&ctx.config.params)).map_err(|e| e.in_module("solver"))?;
    Ok((grid, r))
}

fn energy_csv(history: &[f64]) -> String {
    let mut s = String::from("sweep,energy\n");
    for (i, e) in history.iter().enumerate() {
        s.push_str(&format!("{},{e}\n", i));
    }
    s
}

fn monotone_history(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()))
}

pub fn solve(ctx: &Context<'_>, sink: &mut ArtifactSink) -> Result<Outcome> {
    let (grid, r) = solve_field(ctx)?;
    sink.write("field.csv", r.field.to_csv().as_bytes())?;
    sink.write("energy.csv", energy_csv(&r.energy_history).as_bytes())?;
    let rep = report(ctx, "solve", grid, json!({ "diagnostics": r.diagnostics() }))?;
    sink.write_json("report.json", &rep)?;
    let mut out = Outcome::default();
    out.assertions.push(Assertion::new(
        "solver_converged",
        r.converged,
        format!("residual {:e} after {} sweeps", r.residual, r.sweeps),
    ));
    out.assertions.push(Assertion::new(
        "energy_nonincreasing",
        monotone_history(&r.energy_history),
        format!("{} recorded sweeps", r.energy_history.len()),
    ));
    out.metrics.insert("energy".into(), r.energy);
    out.metrics.insert("residual".into(), r.residual);
    Ok(out)
}

fn point(v: &[f64]) -> Point {
    [v.first().copied().unwrap_or(0.0), v.get(1).copied().unwrap_or(0.0)]
}

/// Radii `2^{-k}` down to the `8h` floor whose balls fit in the grid box.
fn admissible_radii(grid: &GridSpec, x0: Point, requested: Option<&Vec<f64>>) -> Vec<f64> {
    let candidates = match requested {
        Some(r) => r.clone(),
        None => dyadic_radii(0, FLOOR_CELLS * grid.h()),
    };
    candidates
        .into_iter()
        .filter(|&r| BallSpec::at(grid, x0, r).is_ok())
        .collect()
}

pub fn estimate(ctx: &Context<'_>, sink: &mut ArtifactSink) -> Result<Outcome> {
    let p = &ctx.config.params;
    let spec = &ctx.config.potential;
    let (grid, r) = solve_field(ctx)?;
    let u = &r.field;
    sink.write("field.csv", u.to_csv().as_bytes())?;
    let mut out = Outcome::default();
    out.assertions.push(Assertion::new(
        "solver_converged",
        r.converged,
        format!("residual {:e}", r.residual),
    ));

    let fb = free_boundary_points(u, p.tau).map_err(|e| e.in_module("estimate"))?;
    let center = match (&p.center, fb.first()) {
        (Some(c), _) => Some(point(c)),
        (None, Some(x)) => Some(*x),
        (None, None) => None,
    };
    out.assertions.push(Assertion::new(
        "free_boundary_found",
        center.is_some(),
        format!("{} free-boundary nodes", fb.len()),
    ));
    let mut body = json!({
        "diagnostics": r.diagnostics(),
        "free_boundary_points": fb,
    });

    let mut delta = p.delta;
    if let Some(epsilon) = p.epsilon {
        let opts = CalibrationOptions {
            seed: ctx.seed,
            minimize: minimize_options(p),
            ..Default::default()
        };
        let samples = p.samples.unwrap_or(20);
        let calibrated = flatness_calibration(|d| spec.with_sup_norm(d), epsilon, samples, &grid, &opts);
        let detail = match &calibrated {
            Ok(c) => format!("delta = {} from {samples} samples at epsilon = {epsilon}", c.delta),
            Err(e) => e.to_string(),
        };
        out.assertions.push(Assertion::new("flatness_calibrated", calibrated.is_ok(), detail));
        if let Ok(c) = calibrated {
            out.metrics.insert("calibrated_delta".into(), c.delta);
            delta = delta.or(Some(c.delta));
            body["calibration"] = serde_json::to_value(&c)?;
        }
    }

    if let Some(x0) = center {
        let radii = admissible_radii(&grid, x0, p.radii.as_ref());
        let growth = growth_profile(u, x0, &radii).map_err(|e| e.in_module("estimate"))?;
        let mut csv = String::from("r,sup\n");
        for (rr, v) in growth.radii.iter().zip(&growth.values) {
            csv.push_str(&format!("{rr},{v}\n"));
        }
        sink.write("growth.csv", csv.as_bytes())?;

        if let Some(e) = growth.fitted_exponent {
            out.metrics.insert("fitted_exponent".into(), e);
        }
        if let Some(c) = growth.fitted_constant {
            out.metrics.insert("fitted_constant".into(), c);
        }
        if let Some(target) = p.expected_exponent {
            let tol = p.exponent_tolerance.unwrap_or(0.05);
            let got = growth.fitted_exponent;
            out.assertions.push(Assertion::new(
                "growth_exponent",
                got.is_some_and(|e| (e - target).abs() <= tol),
                format!("fitted {got:?}, expected {target} ± {tol}"),
            ));
        }
        if let Some(target) = p.expected_constant {
            let tol = p.constant_rel_tolerance.unwrap_or(0.15);
            let got = growth.fitted_constant;
            out.assertions.push(Assertion::new(
                "growth_constant",
                got.is_some_and(|c| ((c - target) / target).abs() <= tol),
                format!("fitted {got:?}, expected {target} within {tol} relative"),
            ));
        }

        let small: Vec<f64> = radii.iter().copied().filter(|&r| r <= 0.25).collect();
        if grid.center_node().is_some() {
            if let Ok(c) = check_lipschitz_bound(u, spec, x0, &radii) {
                out.metrics.insert("lipschitz_constant".into(), c);
                body["lipschitz_constant"] = json!(c);
            }
            if let Some(delta) = delta {
                let table = potential_modulus(spec).and_then(|m| construct_modulus(&m, delta, p.depth.unwrap_or(40)));
                match table.and_then(|t| check_c1_bound(u, spec, x0, &t, &small)) {
                    Ok(c) => {
                        out.metrics.insert("c1_constant".into(), c);
                        body["c1_constant"] = json!(c);
                    }
                    Err(e) => body["c1_constant_error"] = json!(e.to_string()),
                }
            }
        }
        body["growth"] = serde_json::to_value(&growth)?;
    }

    if let Some(c) = grid.center_node() {
        let hi = grid.hi();
        let half = (0..grid.dim).map(|a| 0.5 * (hi[a] - grid.lo[a])).fold(f64::INFINITY, f64::min);
        let region = BallSpec {
            center: c,
            radius: 0.5 * half,
        };
        match log_lip_seminorm(u, &region, ctx.seed) {
            Ok(s) => {
                out.metrics.insert("log_lip_seminorm".into(), s);
                body["log_lip_seminorm"] = json!(s);
            }
            Err(e) => body["log_lip_seminorm_error"] = json!(e.to_string()),
        }
    }
    sink.write_json("report.json", &report(ctx, "estimate", grid, body)?)?;
    Ok(out)
}

fn omega_csv(table: &ModulusTable) -> Result<String> {
    let mut s = String::from("rho,omega,omega_interpolated\n");
    for k in 2..=table.depth() {
        for frac in [1.0, 0.75] {
            let rho = frac * (-(k as f64)).exp2();
            s.push_str(&format!(
                "{rho},{},{}\n",
                eval_omega(table, rho)?,
                eval_omega_interpolated(table, rho)?
            ));
        }
    }
    Ok(s)
}

fn table_assertions(table: &ModulusTable, floor: f64) -> Vec<Assertion> {
    let mu_ok = table.mu.windows(2).all(|w| w[1] >= w[0]) && table.mu.iter().all(|&m| m >= floor && m < 1.0);
    let a_ok = table.a.windows(2).all(|w| w[1] < w[0]) && table.a.iter().all(|&a| a > 0.0);
    vec![
        Assertion::new("mu_nondecreasing_in_range", mu_ok, format!("mu in [{floor}, 1)")),
        Assertion::new("a_strictly_decreasing", a_ok, format!("depth {}", table.depth())),
    ]
}

pub fn modulus(ctx: &Context<'_>, sink: &mut ArtifactSink) -> Result<Outcome> {
    let p = &ctx.config.params;
    let descriptor = match &p.modulus {
        Some(m) => m.clone(),
        None => potential_modulus(&ctx.config.potential).map_err(|e| e.in_module("potential"))?,
    };
    let delta = p.delta.unwrap_or(1.0);
    let depth = p.depth.unwrap_or(40);
    let order = p.order.unwrap_or(1);
    let (table, floor) = match order {
        1 => (construct_modulus(&descriptor, delta, depth), 0.5),
        2 => (construct_modulus_order2(&descriptor, delta, depth), 0.25),
        o => return Err(Error::Config(format!("order must be 1 or 2, got {o}"))),
    };
    let table = table.map_err(|e| e.in_module("renorm"))?;
    sink.write("table.csv", table.to_csv().as_bytes())?;
    sink.write("omega.csv", omega_csv(&table)?.as_bytes())?;
    let roots = table.branch.iter().filter(|b| **b == Branch::Root).count();
    let body = json!({
        "modulus": descriptor,
        "delta": delta,
        "depth": depth,
        "order": order,
        "root_steps": roots,
        "a_final": table.a.last(),
    });
    let grid = ctx.config.grid.to_grid()?;
    sink.write_json("report.json", &report(ctx, "modulus", grid, body)?)?;
    let mut out = Outcome::default();
    out.assertions = table_assertions(&table, floor);
    if let Some(a) = table.a.last() {
        out.metrics.insert("a_final".into(), *a);
    }
    Ok(out)
}

fn random_field(grid: GridSpec, rng: &mut ChaCha8Rng) -> Result<ScalarField> {
    let values = (0..grid.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ScalarField::new(grid, values)
}

/// Lattice identities and lemma checks on seeded inputs.
pub fn verify_lemmas(ctx: &Context<'_>, sink: &mut ArtifactSink) -> Result<Outcome> {
    let cfg_grid = ctx.config.grid.to_grid()?;
    let m1 = cfg_grid.m.min(9);
    let m2 = cfg_grid.m.min(6);
    let spec = &ctx.config.potential;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut out = Outcome::default();
    let mut rows: Vec<Value> = Vec::new();

    // harmonic replacement identity and maximum principle
    for (dim, m) in [(1usize, m1), (2, m2)] {
        let grid = GridSpec::new(dim, m, [-1.0, -1.0], [1.0, 1.0])?;
        let ball = BallSpec::at(&grid, [0.0, 0.0], 0.5)?;
        let mut worst: f64 = 0.0;
        let mut max_ok = true;
        for _ in 0..10 {
            let u = random_field(grid, &mut rng)?;
            let r = check_replacement_identity(&u, &ball)?;
            worst = worst.max((r.lhs - r.rhs).abs() / (1.0 + r.rhs.abs()));
            max_ok &= r.max_principle_ok;
        }
        rows.push(json!({"check": format!("replacement_identity_{dim}d"), "worst_relative_gap": worst}));
        out.assertions.push(Assertion::new(
            format!("replacement_identity_{dim}d"),
            worst <= 1e-8,
            format!("worst relative gap {worst:e}"),
        ));
        out.assertions.push(Assertion::new(
            format!("maximum_principle_{dim}d"),
            max_ok,
            "replacement within boundary range".to_string(),
        ));
    }

    // Campanato decay of a discrete harmonic polynomial
    {
        let grid = GridSpec::square(m2, -1.0, 1.0)?;
        let u = ScalarField::from_fn(grid, |x| x[0] * x[0] - x[1] * x[1] + 0.5 * x[0] * x[1])?;
        let big = BallSpec::at(&grid, [0.0, 0.0], 1.0)?;
        let radii = dyadic_radii(0, FLOOR_CELLS * grid.h());
        let rep = campanato_decay(&u, &big, &radii, 0.5)?;
        let e = rep.fitted_exponent.unwrap_or(f64::NAN);
        rows.push(json!({"check": "campanato_harmonic", "fitted_exponent": e}));
        out.assertions.push(Assertion::new(
            "campanato_harmonic_exponent",
            e >= 2.0 + 2.0 * 0.5 - 0.05,
            format!("fitted exponent {e}"),
        ));
    }

    // scaling identity on random fields
    for dim in [1usize, 2] {
        let m = if dim == 1 { m1 } else { m2 };
        let grid = GridSpec::new(dim, m, [-1.0, -1.0], [1.0, 1.0])?;
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let u = random_field(grid, &mut rng)?.map(f64::abs);
            let j = rng.gen_range(1..=2u32);
            let a = (-(j as f64)).exp2();
            let b = (-(rng.gen_range(0..=2) as f64)).exp2();
            // B_a(x₀) stays inside [-1, 1]ⁿ
            let kmax = (1i64 << m) - (1i64 << (m - j));
            let mut x0 = [0.0, 0.0];
            for c in x0.iter_mut().take(dim) {
                *c = rng.gen_range(-kmax..=kmax) as f64 * grid.h();
            }
            let target = GridSpec::new(dim, m - j, [-1.0, -1.0], [1.0, 1.0])?;
            let w = restrict_rescale_field(&u, x0, a, b, &target)?;
            let tilde = rescale_potential(spec, x0, a, b)?;
            let lhs = discrete_energy(&u, spec, &Region::Ball(BallSpec::at(&grid, x0, a)?))?;
            let inner = discrete_energy(&w, &tilde, &Region::Ball(BallSpec::at(&target, [0.0, 0.0], 1.0)?))?;
            let rhs = a.powi(dim as i32 - 2) * b * b * inner;
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
        rows.push(json!({"check": format!("scaling_identity_{dim}d"), "worst_relative_gap": worst}));
        out.assertions.push(Assertion::new(
            format!("scaling_identity_{dim}d"),
            worst <= 1e-10,
            format!("worst relative gap {worst:e}"),
        ));
    }

    // affine conjugation: energies of competitors sharing boundary values differ by one constant
    {
        let grid = GridSpec::interval(m1, -1.0, 1.0)?;
        let (a, b) = (0.5, 0.5);
        let x0 = [0.0, 0.0];
        let ell = Affine {
            value: 0.25,
            gradient: [0.5, 0.0],
        };
        let star = affine_conjugate_potential(spec, x0, a, b, &ell)?;
        let target = GridSpec::interval(m1 - 1, -1.0, 1.0)?;
        let big = Region::Ball(BallSpec::at(&grid, x0, a)?);
        let unit = Region::Ball(BallSpec::at(&target, [0.0, 0.0], 1.0)?);
        let mut gaps = Vec::new();
        for _ in 0..5 {
            let v = random_field(target, &mut rng)?;
            // u(x₀ + a y) = ℓ(a y) + b v(y) on the ball, and arbitrary outside
            let u = ScalarField::from_fn(grid, |x| {
                let y = (x[0] - x0[0]) / a;
                match v.value_at([y, 0.0]) {
                    Some(vy) if y.abs() <= 1.0 => ell.value + ell.gradient[0] * (a * y) + b * vy,
                    _ => 0.0,
                }
            })?;
            let mut v2 = v.clone();
            let n = v2.values.len();
            for i in 1..n - 1 {
                v2.values[i] += rng.gen_range(-0.5..0.5);
            }
            let u2 = ScalarField::from_fn(grid, |x| {
                let y = (x[0] - x0[0]) / a;
                match v2.value_at([y, 0.0]) {
                    Some(vy) if y.abs() <= 1.0 => ell.value + ell.gradient[0] * (a * y) + b * vy,
                    _ => 0.0,
                }
            })?;
            let scale = a.powi(-1) * b * b;
            let d1 = discrete_energy(&u, spec, &big)? - scale * discrete_energy(&v, &star, &unit)?;
            let d2 = discrete_energy(&u2, spec, &big)? - scale * discrete_energy(&v2, &star, &unit)?;
            gaps.push((d1 - d2).abs() / (1.0 + d1.abs()));
        }
        let worst = gaps.iter().copied().fold(0.0, f64::max);
        rows.push(json!({"check": "affine_conjugation_constant", "worst_relative_gap": worst}));
        out.assertions.push(Assertion::new(
            "affine_conjugation_constant",
            worst <= 1e-10,
            format!("worst relative gap {worst:e}"),
        ));
    }

    // sup/L² bound over a family of minimizers, under refinement
    {
        let mut ratios = Vec::new();
        for &gamma in &[0.25, 0.5, 0.75] {
            let fam = PotentialSpec::alt_phillips(gamma, 1.0)?;
            let mut per_m = Vec::new();
            for m in [m1 - 1, m1] {
                let grid = GridSpec::interval(m, -1.0, 1.0)?;
                let bnd = ScalarField::from_fn(grid, |x| 1.0 + 0.25 * x[0])?;
                let r = minimize(&fam, &bnd, &MinimizeOptions::default())?;
                per_m.push(sup_l2_constant(&r.field)?);
            }
            ratios.push((gamma, per_m[0], per_m[1]));
        }
        let cmax = ratios.iter().map(|r| r.2).fold(0.0, f64::max);
        let drift = ratios
            .iter()
            .map(|r| (r.2 - r.1).abs() / r.2)
            .fold(0.0, f64::max);
        rows.push(json!({"check": "sup_l2_constant", "max_constant": cmax, "max_refinement_drift": drift}));
        out.assertions.push(Assertion::new(
            "sup_l2_bounded",
            cmax.is_finite() && cmax > 0.0 && drift <= 0.05,
            format!("max constant {cmax}, refinement drift {drift}"),
        ));
    }

    // minimality of the solver output against random competitors
    if let Some(bc) = &ctx.config.boundary {
        let grid = GridSpec::new(cfg_grid.dim, cfg_grid.m.min(if cfg_grid.dim == 1 { 8 } else { 5 }), cfg_grid.lo, cfg_grid.hi())?;
        let bnd = bc.build(&grid, ctx.base_dir)?;
        let r = minimize(spec, &bnd, &MinimizeOptions::default())?;
        let mut beaten = 0;
        for _ in 0..20 {
            let mut c = r.field.clone();
            for (v, b) in c.values.iter_mut().zip(&c.boundary) {
                if !b {
                    *v += rng.gen_range(-0.05..0.05);
                }
            }
            if discrete_energy(&c, spec, &Region::Whole)? < r.energy - 1e-12 * (1.0 + r.energy.abs()) {
                beaten += 1;
            }
        }
        rows.push(json!({"check": "minimality", "competitors_below": beaten}));
        out.assertions.push(Assertion::new(
            "solver_minimality",
            beaten == 0,
            format!("{beaten} of 20 competitors below the solver energy"),
        ));
    }

    // renormalization fixed points
    {
        let zero = construct_modulus(&crate::potential::ModulusDescriptor::Zero, 1.0, 40)?;
        let zero_ok = zero.mu.iter().all(|&m| m == 0.5);
        out.assertions.push(Assertion::new("zero_modulus_fixed_point", zero_ok, "mu_k = 1/2"));
        let gamma = 0.5;
        let power = construct_modulus(
            &crate::potential::ModulusDescriptor::Power { gamma, amplitude: 1.0 },
            1.0,
            60,
        )?;
        let target = (-gamma / (2.0 - gamma)).exp2();
        let tail = &power.mu[power.depth() - 10..];
        let gap = tail.iter().map(|m| (m - target).abs()).fold(0.0, f64::max);
        out.assertions.push(Assertion::new(
            "power_modulus_fixed_point",
            gap <= 1e-9,
            format!("tail gap {gap:e} to {target}"),
        ));
    }

    let body = json!({ "checks": rows, "assertions": out.assertions });
    sink.write_json("report.json", &report(ctx, "verify-lemmas", cfg_grid, body)?)?;
    Ok(out)
}
