//! The dyadic renormalization that turns a modulus `m` of the potential into
//! the C¹ modulus `ω` of minimizers at free-boundary points.
//!
//! Order 1. With `a_k = μ₁⋯μ_k` the k-th renormalized potential is
//! `σ_k(t) = a_k⁻² m(a_k 2^{-k} t)`; the step-(k+1) condition
//! `μ⁻² σ_k(μ/2) = δ` reads `(a_k μ)⁻² m(a_k μ 2^{-(k+1)}) = δ`.
//! `ω(ρ) = 2 a_k` for `k = ⌊log₂(1/ρ)⌋`.
//!
//! Order 2. Each step rescales by `a = 1/2` in space and `b = μ/4` in value,
//! so `σ_k(t) = 4^k a_k⁻² m(a_k 4^{-k} t)`, the step-1 condition is
//! `4 μ⁻² m(μ/4) = δ` and the step-(k+1) condition
//! `4^{k+1} (a_k μ)⁻² m(a_k μ 4^{-(k+1)}) = δ`. `ω(ρ) = 4 a_k` and the bound
//! becomes `|u| ≲ |x|² ω(|x|)`. For `m = δ t^γ` the fixed point is
//! `μ = 2^{-2(γ-1)/(2-γ)}`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::bisect_decreasing;
use crate::potential::ModulusDescriptor;

/// Absolute tolerance of the bisection in `μ`.
pub const ROOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The smallness condition held; `μ` kept (or set to the floor at step 1).
    Stay,
    /// `μ` is the bisection root of the step condition.
    Root,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusTable {
    pub delta: f64,
    /// `mu[k-1] = μ_k`
    pub mu: Vec<f64>,
    /// `a[k-1] = a_k = μ₁⋯μ_k`
    pub a: Vec<f64>,
    pub branch: Vec<Branch>,
    pub order: u8,
}

impl ModulusTable {
    pub fn depth(&self) -> usize {
        self.mu.len()
    }

    /// `a_k`, with `a_0 = 1`.
    pub fn a_k(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.a[k - 1]
        }
    }

    /// Per-step value factor and argument divisor: `(1, 2)` for order 1, `(4, 4)` for order 2.
    fn step_constants(&self) -> (f64, f64) {
        if self.order == 2 {
            (4.0, 4.0)
        } else {
            (1.0, 2.0)
        }
    }

    fn check_level(&self, k: usize) -> Result<()> {
        if k > self.depth() {
            return Err(Error::TableTooShallow {
                needed: k,
                depth: self.depth(),
            });
        }
        Ok(())
    }

    /// `σ_k(t)` in closed form: `a_k⁻² m(a_k 2^{-k} t)` (order 1) or
    /// `4^k a_k⁻² m(a_k 4^{-k} t)` (order 2); `0` for `t ≤ 0`.
    pub fn renormalized(&self, m: &ModulusDescriptor, k: usize, t: f64) -> Result<f64> {
        self.check_level(k)?;
        if t <= 0.0 {
            return Ok(0.0);
        }
        let a = self.a_k(k);
        let ln_a = if a >= f64::MIN_POSITIVE { a.ln() } else { self.mu[..k].iter().map(|mu| mu.ln()).sum() };
        let j = f64::from(self.order) * k as f64;
        let jp = if self.order == 2 { j } else { 0.0 };
        Ok(scaled(m, ln_a + t.ln(), j, jp) * t * t)
    }

    /// `σ_k(t)` through the one-step recursion `σ_{j+1}(t) = f μ_{j+1}⁻² σ_j(μ_{j+1} t / d)`.
    pub fn renormalized_unrolled(&self, m: &ModulusDescriptor, k: usize, t: f64) -> Result<f64> {
        self.check_level(k)?;
        let (f, d) = self.step_constants();
        let mut factor = 1.0;
        let mut arg = t;
        for j in (0..k).rev() {
            let mu = self.mu[j];
            factor *= f / (mu * mu);
            arg *= mu / d;
        }
        Ok(factor * m.eval(arg))
    }

    /// `(k, μ_k, a_k, branch)` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,mu,a,branch\n");
        for k in 0..self.depth() {
            let b = match self.branch[k] {
                Branch::Stay => "stay",
                Branch::Root => "root",
            };
            s.push_str(&format!("{},{},{},{}\n", k + 1, self.mu[k], self.a[k], b));
        }
        s
    }
}

fn check_inputs(m: &ModulusDescriptor, delta: f64, depth: usize) -> Result<()> {
    m.validate()?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if depth == 0 {
        return Err(Error::InvalidParameter("depth must be at least 1".into()));
    }
    if m.eval(1.0) > delta {
        return Err(Error::Precondition(format!(
            "m(1) = {} exceeds delta = {delta}",
            m.eval(1.0)
        )));
    }
    Ok(())
}

/// Shared recursion. `cond(k, ln x)` is the step-(k+1) condition function at
/// `x = a_k μ` (for `k = 0`, `x = μ`), and must be `≤ δ` at `x = a_k`. The
/// product `a_k` is carried as a logarithm so that it may leave the f64 range.
fn recurse<C: Fn(usize, f64) -> f64>(
    delta: f64,
    depth: usize,
    floor: f64,
    order: u8,
    cond: C,
) -> Result<ModulusTable> {
    let mut mu = Vec::with_capacity(depth);
    let mut a = Vec::with_capacity(depth);
    let mut branch = Vec::with_capacity(depth);
    let mut a_prev = 1.0;
    let mut ln_a = 0.0;
    let mut mu_prev = floor;
    for k in 0..depth {
        let g = |x: f64| cond(k, ln_a + x.ln()) - delta;
        let (next, b) = if g(mu_prev) <= 0.0 {
            (mu_prev, Branch::Stay)
        } else {
            let g_hi = g(1.0);
            if g_hi > 0.0 {
                return Err(Error::BracketFailure {
                    step: k + 1,
                    g_lo: g(mu_prev),
                    g_hi,
                });
            }
            (bisect_decreasing(&g, mu_prev, 1.0, ROOT_TOL), Branch::Root)
        };
        if next >= 1.0 {
            return Err(Error::BracketFailure {
                step: k + 1,
                g_lo: g(mu_prev),
                g_hi: g(1.0),
            });
        }
        a_prev *= next;
        // the stored product is exact while it stays normal
        ln_a = if a_prev >= f64::MIN_POSITIVE { a_prev.ln() } else { ln_a + next.ln() };
        mu_prev = next;
        mu.push(next);
        a.push(a_prev);
        branch.push(b);
    }
    Ok(ModulusTable {
        delta,
        mu,
        a,
        branch,
        order,
    })
}

/// Smallest argument and value evaluated directly; below it `m` is evaluated
/// in log space.
const DIRECT_MIN: f64 = 1e-280;

/// `m(x·2^{-jq}) / (x²·2^{-jp})` from `ln x`, also where the argument is
/// subnormal or `x` and the powers of two leave the f64 range.
fn scaled(m: &ModulusDescriptor, ln_x: f64, jq: f64, jp: f64) -> f64 {
    let ln_t = ln_x - jq * LN_2;
    if ln_t >= DIRECT_MIN.ln() && jp < 900.0 {
        let x = ln_x.exp();
        let v = m.eval(x * (-jq).exp2());
        if v >= DIRECT_MIN {
            return v / x / x * jp.exp2();
        }
    }
    let ln_v = m.ln_eval(ln_t);
    if ln_v == f64::NEG_INFINITY {
        return 0.0;
    }
    (ln_v - 2.0 * ln_x + jp * LN_2).exp()
}

/// Order-1 renormalization with `μ₁ ≥ 1/2`.
pub fn construct_modulus(m: &ModulusDescriptor, delta: f64, depth: usize) -> Result<ModulusTable> {
    construct_modulus_with_floor(m, delta, depth, 0.5)
}

/// Order-1 renormalization with the step-1 search on `[floor, 1]` instead of
/// `[1/2, 1]`. `floor = 1/2` is [`construct_modulus`].
pub fn construct_modulus_with_floor(
    m: &ModulusDescriptor,
    delta: f64,
    depth: usize,
    floor: f64,
) -> Result<ModulusTable> {
    check_inputs(m, delta, depth)?;
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::InvalidParameter(format!("floor must lie in (0,1), got {floor}")));
    }
    recurse(delta, depth, floor, 1, |k, x| scaled(m, x, (k + 1) as f64, 0.0))
}

/// Depth of the dyadic sample used to certify `m(t) = o(t)`.
const LITTLE_O_DEPTH: i32 = 40;

fn check_little_o(m: &ModulusDescriptor) -> Result<()> {
    let ratios: Vec<f64> = (0..=LITTLE_O_DEPTH)
        .map(|j| {
            let t = (-(j as f64)).exp2();
            m.eval(t) / t
        })
        .collect();
    let monotone = ratios.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let first = ratios[0];
    let last = *ratios.last().expect("nonempty");
    let decays = last == 0.0 || last < first * (1.0 - 1e-6);
    if monotone && decays {
        Ok(())
    } else {
        Err(Error::Precondition(
            "m(t)/t does not decrease to 0 on the dyadic sample; m is not o(t)".into(),
        ))
    }
}

/// Order-2 renormalization (`|u| ≲ |x|² ω(|x|)`); requires `m(t) = o(t)`.
pub fn construct_modulus_order2(m: &ModulusDescriptor, delta: f64, depth: usize) -> Result<ModulusTable> {
    check_inputs(m, delta, depth)?;
    check_little_o(m)?;
    recurse(delta, depth, 0.5, 2, |k, x| {
        let j = 2.0 * (k + 1) as f64;
        scaled(m, x, j, j)
    })
}

/// `⌊log₂(1/ρ)⌋`, exact on dyadic arguments.
fn dyadic_level(rho: f64) -> i64 {
    let mut k = (-rho.log2()).floor() as i64;
    while (-(k as f64)).exp2() < rho {
        k -= 1;
    }
    while (-((k + 1) as f64)).exp2() >= rho {
        k += 1;
    }
    k
}

/// `ω(ρ) = 2^{order} a_{⌊log₂(1/ρ)⌋}` for `ρ ∈ (0, 1/4]`.
pub fn eval_omega(table: &ModulusTable, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 0.25) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0, 1/4], got {rho}")));
    }
    let k = dyadic_level(rho) as usize;
    if k > table.depth() {
        return Err(Error::TableTooShallow {
            needed: k,
            depth: table.depth(),
        });
    }
    Ok(f64::from(1u32 << table.order) * table.a_k(k))
}

/// Log-linear interpolation of the dyadic nodes `(2^{-k}, ω(2^{-k}))`, for plotting.
pub fn eval_omega_interpolated(table: &ModulusTable, rho: f64) -> Result<f64> {
    let lo = eval_omega(table, rho)?;
    let k = dyadic_level(rho);
    let left = (-(k as f64)).exp2();
    if rho == left {
        return Ok(lo);
    }
    // between 2^{-(k+1)} (value ω_{k+1}) and 2^{-k} (value ω_k)
    let k1 = (k + 1) as usize;
    if k1 > table.depth() {
        return Ok(lo);
    }
    let hi_val = lo;
    let lo_val = f64::from(1u32 << table.order) * table.a_k(k1);
    let s = (rho.log2() + (k + 1) as f64).clamp(0.0, 1.0);
    Ok((lo_val.ln() * (1.0 - s) + hi_val.ln() * s).exp())
}

/// `t ↦ t^{γ/(2-γ)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderModulus {
    pub exponent: f64,
}

impl HolderModulus {
    pub fn eval(&self, t: f64) -> f64 {
        t.max(0.0).powf(self.exponent)
    }
}

pub fn holder_modulus_closed_form(gamma: f64) -> Result<HolderModulus> {
    if !(gamma > 0.0 && gamma < 2.0) {
        return Err(Error::InvalidParameter(format!("gamma must lie in (0,2), got {gamma}")));
    }
    Ok(HolderModulus {
        exponent: gamma / (2.0 - gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power(gamma: f64, amplitude: f64) -> ModulusDescriptor {
        ModulusDescriptor::Power { gamma, amplitude }
    }

    #[test]
    fn deep_levels_keep_the_power_fixed_point() {
        // a_k 2^{-k} is subnormal from k ≈ 790 on
        let t = construct_modulus(&power(0.5, 0.1), 0.1, 2000).unwrap();
        let target = (-1.0f64 / 3.0).exp2();
        assert!(t.mu.iter().all(|mu| (mu - target).abs() < 1e-10));
        let t2 = construct_modulus_order2(&power(1.5, 0.1), 0.1, 600).unwrap();
        assert!(t2.mu.windows(2).all(|w| (w[1] - w[0]).abs() < 1e-10));
    }

    #[test]
    fn log_modulus_matches_extended_precision() {
        // reference values from a 40-digit evaluation of the same recursion
        let t = construct_modulus(&ModulusDescriptor::Log { amplitude: 0.1 }, 0.1, 10_000).unwrap();
        for (k, want) in [(1, 0.697965148223), (100, 0.117479528695), (1000, 0.0378662701327), (10_000, 0.012006528813)] {
            assert!((t.a_k(k) - want).abs() < 1e-9 * want.max(1e-3), "a_{k} = {}", t.a_k(k));
        }
    }

    #[test]
    fn ln_eval_agrees_with_direct_evaluation() {
        let ms = [
            power(0.7, 0.3),
            ModulusDescriptor::Log { amplitude: 0.2 },
            ModulusDescriptor::Sampled {
                ts: vec![0.0, 0.25, 1.0],
                values: vec![0.0, 0.1, 0.3],
            },
        ];
        for m in &ms {
            for t in [0.7, 0.3 / 32.0, 1e-12, 2.0] {
                assert!((m.ln_eval(f64::ln(t)) - m.eval(t).ln()).abs() < 1e-12, "{m:?} {t}");
            }
        }
        assert_eq!(ModulusDescriptor::Zero.ln_eval(-3.0), f64::NEG_INFINITY);
    }

    #[test]
    fn zero_modulus_halves() {
        let t = construct_modulus(&ModulusDescriptor::Zero, 0.1, 10).unwrap();
        for k in 1..=10 {
            assert_eq!(t.mu[k - 1], 0.5);
            assert_eq!(t.a_k(k), (-(k as f64)).exp2());
        }
        assert_eq!(eval_omega(&t, 0.125).unwrap(), 0.25);
    }

    #[test]
    fn square_root_fixed_point() {
        let t = construct_modulus(&power(0.5, 0.1), 0.1, 200).unwrap();
        let expect = (-1.0f64 / 3.0).exp2();
        for mu in &t.mu {
            assert!((mu - expect).abs() < 1e-10);
        }
        assert!((expect - 0.793_700_525_98).abs() < 1e-11);
    }

    #[test]
    fn small_floor_recovers_superlinear_fixed_point() {
        // a_k leaves the f64 range long before k = 1000 for the larger γ
        for gamma in [1.1, 1.5, 1.9] {
            let t = construct_modulus_with_floor(&power(gamma, 0.1), 0.1, 1000, 1e-7).unwrap();
            let expect = (-gamma / (2.0 - gamma)).exp2();
            for mu in &t.mu {
                assert!((mu - expect).abs() < 1e-9, "gamma {gamma}: {mu} vs {expect}");
            }
        }
    }

    #[test]
    fn renormalized_forms_agree() {
        for (m, t1) in [
            (power(0.7, 0.05), construct_modulus(&power(0.7, 0.05), 0.1, 30).unwrap()),
            (power(1.5, 0.05), construct_modulus_order2(&power(1.5, 0.05), 0.1, 30).unwrap()),
        ] {
            for k in [0, 1, 7, 30] {
                let c = t1.renormalized(&m, k, 0.6).unwrap();
                let u = t1.renormalized_unrolled(&m, k, 0.6).unwrap();
                assert!((c - u).abs() <= 1e-12 * c.abs().max(1.0));
            }
            assert!(t1.renormalized(&m, 31, 0.5).is_err());
        }
    }

    #[test]
    fn rejects_large_modulus() {
        assert!(matches!(
            construct_modulus(&power(0.5, 1.0), 0.1, 5),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn omega_is_constant_on_dyadic_shells() {
        let t = construct_modulus(&power(0.5, 0.1), 0.1, 20).unwrap();
        let at = eval_omega(&t, 1.0 / 16.0).unwrap();
        assert_eq!(eval_omega(&t, 0.04).unwrap(), at);
        assert_eq!(eval_omega(&t, 1.0 / 32.0 + 1e-9).unwrap(), at);
        assert!(eval_omega(&t, 1.0 / 32.0).unwrap() < at);
        assert!(matches!(eval_omega(&t, 1e-9), Err(Error::TableTooShallow { .. })));
        assert!(eval_omega(&t, 0.3).is_err());
    }

    #[test]
    fn interpolation_hits_nodes_and_stays_between() {
        let t = construct_modulus(&power(0.5, 0.1), 0.1, 20).unwrap();
        for k in 2..15 {
            let r = (-(k as f64)).exp2();
            assert_eq!(eval_omega_interpolated(&t, r).unwrap(), eval_omega(&t, r).unwrap());
            let mid = 0.75 * r;
            let v = eval_omega_interpolated(&t, mid).unwrap();
            assert!(v <= eval_omega(&t, r).unwrap() && v >= eval_omega(&t, 0.5 * r).unwrap());
        }
    }

    #[test]
    fn closed_form_exponents() {
        assert_eq!(holder_modulus_closed_form(1.0).unwrap().exponent, 1.0);
        assert!((holder_modulus_closed_form(0.5).unwrap().exponent - 1.0 / 3.0).abs() < 1e-15);
        assert!((holder_modulus_closed_form(4.0 / 3.0).unwrap().exponent - 2.0).abs() < 1e-12);
        assert!(holder_modulus_closed_form(2.0).is_err());
    }

    #[test]
    fn order_two_power_fixed_point() {
        let gamma = 1.25;
        let t = construct_modulus_order2(&power(gamma, 0.1), 0.1, 200).unwrap();
        let expect = (-2.0 * (gamma - 1.0) / (2.0 - gamma)).exp2();
        for mu in &t.mu {
            assert!((mu - expect).abs() < 1e-9, "{mu} vs {expect}");
        }
        assert_eq!(eval_omega(&t, 0.25).unwrap(), 4.0 * t.a_k(2));
    }

    #[test]
    fn order_two_zero_and_linear() {
        let t = construct_modulus_order2(&ModulusDescriptor::Zero, 0.1, 30).unwrap();
        assert!(t.mu.iter().all(|&m| m == 0.5));
        assert!(matches!(
            construct_modulus_order2(&power(1.0, 0.1), 0.1, 10),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn dyadic_level_is_exact() {
        for k in 2..60 {
            let r = (-(k as f64)).exp2();
            assert_eq!(dyadic_level(r), k);
            assert_eq!(dyadic_level(r * 1.5), k - 1);
        }
    }
}
