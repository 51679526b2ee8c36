//! Potentials `σ(x, t)` and their moduli of continuity.
//!
//! A [`PotentialSpec`] is a base family in `t` (x-independent) plus an
//! optional [`Transform`] accumulated by rescaling and affine conjugation:
//!
//! ```text
//! σ(x, t) = factor · σ_base(amplitude · t + slope · x + shift)
//! ```
//!
//! The form is closed under both transforms, so composition never builds a
//! tower of closures. The working range for `t` is `[-2, 2]`; `sup_norm` of a
//! base family is its supremum over that range, and transforms multiply it by
//! their factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Point;

/// Half-width of the working range of `t`.
pub const WORKING_RANGE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    Zero,
    /// `t₊`
    Obstacle,
    /// `Λ t₊^γ`
    AltPhillips { gamma: f64, lambda: f64 },
    /// `Λ χ{t>0}`
    AltCaffarelli { lambda: f64 },
    /// `Λ₋ t₋^γ + Λ₊ t₊^γ`
    TwoPhaseAltPhillips {
        gamma: f64,
        lambda_minus: f64,
        lambda_plus: f64,
    },
    /// Right-continuous steps: `values[0]` below `breakpoints[0]`,
    /// `values[i + 1]` on `[breakpoints[i], breakpoints[i + 1])`.
    StepBounded {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// `δ̄ / (1 + ln(1/t))` on `(0, 1]`, zero for `t <= 0`, capped at `δ̄` above 1.
    LogModulus { amplitude: f64 },
    /// Piecewise-linear through `(ts[i], values[i])`, constant outside.
    Custom { ts: Vec<f64>, values: Vec<f64> },
}

/// Affine map `y ↦ value + gradient · y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub value: f64,
    pub gradient: Point,
}

impl Affine {
    pub const ZERO: Affine = Affine {
        value: 0.0,
        gradient: [0.0, 0.0],
    };

    pub fn eval(&self, y: Point) -> f64 {
        self.value + self.gradient[0] * y[0] + self.gradient[1] * y[1]
    }
}

/// Accumulated x-dependence. `center` and `scale` record where the spec's unit
/// ball sits in the original coordinates (`x_orig = center + scale · x`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub center: Point,
    pub scale: f64,
    pub amplitude: f64,
    pub slope: Point,
    pub shift: f64,
    pub factor: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        center: [0.0, 0.0],
        scale: 1.0,
        amplitude: 1.0,
        slope: [0.0, 0.0],
        shift: 0.0,
        factor: 1.0,
    };

    fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    fn depends_on_x(&self) -> bool {
        self.slope != [0.0, 0.0]
    }

    /// `σ₂(x,t) = c·σ(x₀ + a x, b t + ℓ(a x))` expressed on the base family.
    fn compose(&self, x0: Point, a: f64, b: f64, ell: &Affine, c: f64) -> Transform {
        let g = self.slope;
        let bb = self.amplitude;
        Transform {
            center: [self.center[0] + self.scale * x0[0], self.center[1] + self.scale * x0[1]],
            scale: self.scale * a,
            amplitude: bb * b,
            slope: [
                a * (bb * ell.gradient[0] + g[0]),
                a * (bb * ell.gradient[1] + g[1]),
            ],
            shift: self.shift + bb * ell.value + g[0] * x0[0] + g[1] * x0[1],
            factor: self.factor * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub one_phase: bool,
    pub continuous: bool,
    pub vanishes_at_zero: bool,
}

/// An immutable σ descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PotentialWire", into = "PotentialWire")]
pub struct PotentialSpec {
    family: Family,
    transform: Option<Transform>,
    sup_norm: f64,
    flags: Flags,
}

#[derive(Serialize, Deserialize)]
struct PotentialWire {
    #[serde(flatten)]
    family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transform: Option<Transform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sup_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flags: Option<Flags>,
}

impl TryFrom<PotentialWire> for PotentialSpec {
    type Error = Error;

    fn try_from(w: PotentialWire) -> Result<Self> {
        let spec = PotentialSpec::with_transform(w.family, w.transform)?;
        if let Some(flags) = w.flags {
            if flags != spec.flags {
                return Err(Error::InvalidParameter(format!(
                    "declared flags {flags:?} disagree with the family ({:?})",
                    spec.flags
                )));
            }
        }
        if let Some(s) = w.sup_norm {
            if (s - spec.sup_norm).abs() > 1e-12 * (1.0 + spec.sup_norm) {
                return Err(Error::InvalidParameter(format!(
                    "declared sup_norm {s} disagrees with computed {}",
                    spec.sup_norm
                )));
            }
        }
        Ok(spec)
    }
}

impl From<PotentialSpec> for PotentialWire {
    fn from(s: PotentialSpec) -> Self {
        PotentialWire {
            family: s.family,
            transform: s.transform,
            sup_norm: Some(s.sup_norm),
            flags: Some(s.flags),
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_table(name: &str, xs: &[f64], ys: &[f64], extra: usize) -> Result<()> {
    if ys.len() != xs.len() + extra || ys.is_empty() {
        return Err(Error::InvalidParameter(format!("{name}: table lengths do not match")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} table")));
    }
    if xs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(format!("{name}: abscissae must increase strictly")));
    }
    Ok(())
}

impl Family {
    fn validate(&self) -> Result<()> {
        match self {
            Family::Zero | Family::Obstacle => Ok(()),
            Family::AltPhillips { gamma, lambda } => {
                check_positive("lambda", *lambda)?;
                if !(*gamma > 0.0 && *gamma < 2.0) {
                    return Err(Error::InvalidParameter(format!("gamma must lie in (0,2), got {gamma}")));
                }
                Ok(())
            }
            Family::AltCaffarelli { lambda } => check_positive("lambda", *lambda),
            Family::TwoPhaseAltPhillips {
                gamma,
                lambda_minus,
                lambda_plus,
            } => {
                check_positive("lambda_minus", *lambda_minus)?;
                check_positive("lambda_plus", *lambda_plus)?;
                if !(*gamma > 0.0 && *gamma < 2.0) {
                    return Err(Error::InvalidParameter(format!("gamma must lie in (0,2), got {gamma}")));
                }
                Ok(())
            }
            Family::StepBounded { breakpoints, values } => check_table("step", breakpoints, values, 1),
            Family::LogModulus { amplitude } => {
                if amplitude.is_finite() && *amplitude >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("log amplitude must be nonnegative".into()))
                }
            }
            Family::Custom { ts, values } => check_table("custom", ts, values, 0),
        }
    }

    /// σ_base(t).
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Family::Zero => 0.0,
            Family::Obstacle => t.max(0.0),
            Family::AltPhillips { gamma, lambda } => {
                if t > 0.0 {
                    lambda * t.powf(*gamma)
                } else {
                    0.0
                }
            }
            Family::AltCaffarelli { lambda } => {
                if t > 0.0 {
                    *lambda
                } else {
                    0.0
                }
            }
            Family::TwoPhaseAltPhillips {
                gamma,
                lambda_minus,
                lambda_plus,
            } => {
                if t > 0.0 {
                    lambda_plus * t.powf(*gamma)
                } else if t < 0.0 {
                    lambda_minus * (-t).powf(*gamma)
                } else {
                    0.0
                }
            }
            Family::StepBounded { breakpoints, values } => {
                values[breakpoints.partition_point(|&b| b <= t)]
            }
            Family::LogModulus { amplitude } => log_modulus(*amplitude, t),
            Family::Custom { ts, values } => piecewise_linear(ts, values, t),
        }
    }

    /// Primitive `∫₀ᵗ σ_base`, when available in closed form.
    fn primitive(&self, t: f64) -> Option<f64> {
        Some(match self {
            Family::Zero => 0.0,
            Family::Obstacle => 0.5 * t.max(0.0).powi(2),
            Family::AltPhillips { gamma, lambda } => {
                lambda * t.max(0.0).powf(gamma + 1.0) / (gamma + 1.0)
            }
            Family::AltCaffarelli { lambda } => lambda * t.max(0.0),
            Family::TwoPhaseAltPhillips {
                gamma,
                lambda_minus,
                lambda_plus,
            } => {
                if t >= 0.0 {
                    lambda_plus * t.powf(gamma + 1.0) / (gamma + 1.0)
                } else {
                    -lambda_minus * (-t).powf(gamma + 1.0) / (gamma + 1.0)
                }
            }
            Family::StepBounded { breakpoints, values } => step_primitive(breakpoints, values, t),
            Family::LogModulus { .. } | Family::Custom { .. } => return None,
        })
    }

    fn sup_norm(&self) -> f64 {
        let r = WORKING_RANGE;
        match self {
            Family::Zero => 0.0,
            Family::Obstacle => r,
            Family::AltPhillips { gamma, lambda } => lambda * r.powf(*gamma),
            Family::AltCaffarelli { lambda } => *lambda,
            Family::TwoPhaseAltPhillips {
                gamma,
                lambda_minus,
                lambda_plus,
            } => lambda_minus.max(*lambda_plus) * r.powf(*gamma),
            Family::StepBounded { values, .. } | Family::Custom { values, .. } => {
                values.iter().fold(0.0, |m, v| m.max(v.abs()))
            }
            Family::LogModulus { amplitude } => *amplitude,
        }
    }

    fn flags(&self) -> Flags {
        let at_zero = self.eval(0.0);
        let one_phase = match self {
            Family::Zero
            | Family::Obstacle
            | Family::AltPhillips { .. }
            | Family::AltCaffarelli { .. }
            | Family::LogModulus { .. } => true,
            Family::TwoPhaseAltPhillips { .. } => false,
            Family::StepBounded { breakpoints, values } => values
                .iter()
                .enumerate()
                .filter(|(i, _)| *i == 0 || breakpoints[i - 1] < 0.0)
                .all(|(_, v)| *v == at_zero),
            Family::Custom { ts, values } => ts
                .iter()
                .zip(values)
                .filter(|(t, _)| **t < 0.0)
                .all(|(_, v)| *v == at_zero),
        };
        let continuous = match self {
            Family::AltCaffarelli { .. } => false,
            Family::StepBounded { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
            _ => true,
        };
        Flags {
            one_phase,
            continuous,
            vanishes_at_zero: at_zero == 0.0,
        }
    }
}

fn log_modulus(amplitude: f64, t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        amplitude
    } else {
        amplitude / (1.0 + (1.0 / t).ln())
    }
}

fn piecewise_linear(ts: &[f64], values: &[f64], t: f64) -> f64 {
    let n = ts.len();
    if t <= ts[0] {
        return values[0];
    }
    if t >= ts[n - 1] {
        return values[n - 1];
    }
    let i = ts.partition_point(|&x| x <= t);
    let (x0, x1) = (ts[i - 1], ts[i]);
    let w = (t - x0) / (x1 - x0);
    values[i - 1] * (1.0 - w) + values[i] * w
}

/// `∫₀ᵗ` of the right-continuous step function.
fn step_primitive(breakpoints: &[f64], values: &[f64], t: f64) -> f64 {
    let (lo, hi, sign) = if t >= 0.0 { (0.0, t, 1.0) } else { (t, 0.0, -1.0) };
    let mut acc = 0.0;
    let mut left = f64::NEG_INFINITY;
    for (i, v) in values.iter().enumerate() {
        let right = breakpoints.get(i).copied().unwrap_or(f64::INFINITY);
        let a = left.max(lo);
        let b = right.min(hi);
        if b > a {
            acc += v * (b - a);
        }
        left = right;
    }
    sign * acc
}

impl PotentialSpec {
    pub fn new(family: Family) -> Result<Self> {
        Self::with_transform(family, None)
    }

    fn with_transform(family: Family, transform: Option<Transform>) -> Result<Self> {
        family.validate()?;
        let transform = transform.filter(|t| !t.is_identity());
        let base = family.flags();
        let (sup_norm, flags) = match &transform {
            None => (family.sup_norm(), base),
            Some(tr) => {
                let pure_scaling = !tr.depends_on_x() && tr.shift == 0.0;
                let vanishes = if tr.depends_on_x() {
                    family == Family::Zero
                } else {
                    tr.factor * family.eval(tr.shift) == 0.0
                };
                (
                    tr.factor * family.sup_norm(),
                    Flags {
                        one_phase: (base.one_phase && pure_scaling) || family == Family::Zero,
                        continuous: base.continuous,
                        vanishes_at_zero: vanishes,
                    },
                )
            }
        };
        Ok(PotentialSpec {
            family,
            transform,
            sup_norm,
            flags,
        })
    }

    pub fn zero() -> Self {
        Self::new(Family::Zero).expect("zero family is valid")
    }

    pub fn obstacle() -> Self {
        Self::new(Family::Obstacle).expect("obstacle family is valid")
    }

    pub fn alt_phillips(gamma: f64, lambda: f64) -> Result<Self> {
        Self::new(Family::AltPhillips { gamma, lambda })
    }

    pub fn alt_caffarelli(lambda: f64) -> Result<Self> {
        Self::new(Family::AltCaffarelli { lambda })
    }

    pub fn two_phase_alt_phillips(gamma: f64, lambda_minus: f64, lambda_plus: f64) -> Result<Self> {
        Self::new(Family::TwoPhaseAltPhillips {
            gamma,
            lambda_minus,
            lambda_plus,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn transform(&self) -> Option<&Transform> {
        self.transform.as_ref()
    }

    /// Cached `‖σ‖_∞` over the working range (an upper bound once transformed).
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn flags(&self) -> Flags {
        self.flags
    }

    pub fn is_x_dependent(&self) -> bool {
        self.transform.is_some_and(|t| t.depends_on_x())
    }

    #[inline]
    fn base_argument(&self, x: Point, t: f64) -> (f64, f64) {
        match &self.transform {
            None => (1.0, t),
            Some(tr) => (
                tr.factor,
                tr.amplitude * t + tr.slope[0] * x[0] + tr.slope[1] * x[1] + tr.shift,
            ),
        }
    }

    /// σ(x, t).
    #[inline]
    pub fn eval(&self, x: Point, t: f64) -> f64 {
        if let Family::Zero = self.family {
            return 0.0;
        }
        let (c, s) = self.base_argument(x, t);
        c * self.family.eval(s)
    }

    /// σ averaged over a window of width `eps` (in the base variable) to the
    /// left of the evaluation point. Families without a closed-form primitive
    /// are returned unsmoothed.
    pub fn eval_smoothed(&self, x: Point, t: f64, eps: f64) -> f64 {
        let (c, s) = self.base_argument(x, t);
        if eps <= 0.0 {
            return c * self.family.eval(s);
        }
        match (self.family.primitive(s), self.family.primitive(s - eps)) {
            (Some(hi), Some(lo)) => c * (hi - lo) / eps,
            _ => c * self.family.eval(s),
        }
    }

    /// The same potential multiplied by a constant so that `sup_norm = target`.
    pub fn with_sup_norm(&self, target: f64) -> Result<PotentialSpec> {
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::InvalidParameter(format!("target sup norm must be positive, got {target}")));
        }
        if self.sup_norm == 0.0 {
            return Err(Error::Precondition("a vanishing potential cannot be scaled to a positive norm".into()));
        }
        let mut tr = self.transform.unwrap_or(Transform::IDENTITY);
        tr.factor *= target / self.sup_norm;
        PotentialSpec::with_transform(self.family.clone(), Some(tr))
    }

    /// Whether the family has a kink or jump at the origin steep enough to
    /// pin a discrete free boundary; such families are relaxed by smoothing
    /// continuation before the exact descent.
    pub fn benefits_from_continuation(&self) -> bool {
        match &self.family {
            Family::AltCaffarelli { .. } | Family::StepBounded { .. } => true,
            Family::AltPhillips { gamma, .. } | Family::TwoPhaseAltPhillips { gamma, .. } => {
                *gamma < 1.0
            }
            _ => false,
        }
    }
}

fn check_scaling(a: f64, b: f64) -> Result<()> {
    check_positive("a", a)?;
    check_positive("b", b)
}

/// `σ̃(x,t) = (a/b)² σ(x₀ + a x, b t)`.
pub fn rescale_potential(spec: &PotentialSpec, x0: Point, a: f64, b: f64) -> Result<PotentialSpec> {
    affine_conjugate_potential(spec, x0, a, b, &Affine::ZERO)
}

/// `σ⋆(x,t) = b⁻² a² σ(x₀ + a x, b t + ℓ(a x))`, with `ℓ` expressed in
/// coordinates centred at `x₀`.
pub fn affine_conjugate_potential(
    spec: &PotentialSpec,
    x0: Point,
    a: f64,
    b: f64,
    ell: &Affine,
) -> Result<PotentialSpec> {
    check_scaling(a, b)?;
    if x0.iter().chain(&ell.gradient).chain([&ell.value]).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("conjugation data".into()));
    }
    let c = (a / b) * (a / b);
    let base = spec.transform.unwrap_or(Transform::IDENTITY);
    let composed = base.compose(x0, a, b, ell, c);
    // the conjugation is recorded even for x-independent input
    let spec = PotentialSpec::with_transform(spec.family.clone(), Some(composed))?;
    Ok(spec)
}

/// Normalization used before iterating the flatness lemma: returns
/// `scale = u_sup + sqrt(sup_norm / delta)` and σ rescaled with `a = 1/2`,
/// `b = scale`.
pub fn normalize_for_flatness(
    spec: &PotentialSpec,
    u_sup: f64,
    delta: f64,
) -> Result<(f64, PotentialSpec)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if !(u_sup >= 0.0 && u_sup.is_finite()) {
        return Err(Error::InvalidParameter(format!("u_sup must be nonnegative, got {u_sup}")));
    }
    let scale = u_sup + (spec.sup_norm() / delta).sqrt();
    if scale <= 0.0 {
        return Err(Error::Precondition("both u and σ vanish; nothing to normalize".into()));
    }
    let rescaled = rescale_potential(spec, [0.0, 0.0], 0.5, scale)?;
    Ok((scale, rescaled))
}

/// A modulus of continuity on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModulusDescriptor {
    Zero,
    /// `amplitude · t^γ`
    Power { gamma: f64, amplitude: f64 },
    /// `amplitude / (1 + ln(1/t))`, `m(0) = 0`
    Log { amplitude: f64 },
    /// Piecewise-linear nondecreasing table starting at `(0, 0)`.
    Sampled { ts: Vec<f64>, values: Vec<f64> },
}

impl ModulusDescriptor {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModulusDescriptor::Zero => Ok(()),
            ModulusDescriptor::Power { gamma, amplitude } => {
                check_positive("gamma", *gamma)?;
                if *amplitude >= 0.0 && amplitude.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("amplitude must be nonnegative".into()))
                }
            }
            ModulusDescriptor::Log { amplitude } => {
                if *amplitude >= 0.0 && amplitude.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("amplitude must be nonnegative".into()))
                }
            }
            ModulusDescriptor::Sampled { ts, values } => {
                check_table("sampled modulus", ts, values, 0)?;
                if ts[0] != 0.0 || values[0] != 0.0 {
                    return Err(Error::InvalidParameter("sampled modulus must start at (0, 0)".into()));
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidParameter("sampled modulus must be nondecreasing".into()));
                }
                Ok(())
            }
        }
    }

    /// m(t) for `t >= 0`; negative arguments evaluate at 0.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            ModulusDescriptor::Zero => 0.0,
            ModulusDescriptor::Power { gamma, amplitude } => {
                if t == 0.0 {
                    0.0
                } else {
                    amplitude * t.powf(*gamma)
                }
            }
            ModulusDescriptor::Log { amplitude } => log_modulus(*amplitude, t),
            ModulusDescriptor::Sampled { ts, values } => piecewise_linear(ts, values, t),
        }
    }

    /// `ln m(t)` from `ln t`, valid where `t` itself would underflow; `-∞`
    /// where `m` vanishes.
    pub fn ln_eval(&self, ln_t: f64) -> f64 {
        let ln = |v: f64| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
        match self {
            ModulusDescriptor::Zero => f64::NEG_INFINITY,
            ModulusDescriptor::Power { gamma, amplitude } => ln(*amplitude) + gamma * ln_t,
            ModulusDescriptor::Log { amplitude } if ln_t < 0.0 => ln(*amplitude) - (1.0 - ln_t).ln(),
            ModulusDescriptor::Log { amplitude } => ln(*amplitude),
            // the first segment is linear through the origin
            ModulusDescriptor::Sampled { ts, values } if ln_t < ts[1].ln() => ln(values[1] / ts[1]) + ln_t,
            ModulusDescriptor::Sampled { ts, values } => ln(piecewise_linear(ts, values, ln_t.exp())),
        }
    }
}

/// Samples on `[0, 1]` used for the measured-oscillation majorant.
const MODULUS_SAMPLES: usize = 1 << 10;

/// Modulus of continuity of an x-independent continuous potential on `[0, 1]`.
///
/// Parametric families map to their exact parametric modulus; anything else
/// gets the least nondecreasing majorant of oscillations measured on a dyadic
/// grid, shifted by one grid step.
pub fn potential_modulus(spec: &PotentialSpec) -> Result<ModulusDescriptor> {
    if !spec.flags.continuous {
        return Err(Error::Discontinuous);
    }
    if spec.is_x_dependent() {
        return Err(Error::XDependent);
    }
    let tr = spec.transform.unwrap_or(Transform::IDENTITY);
    let (c, b) = (tr.factor, tr.amplitude);
    if tr.shift == 0.0 {
        let exact = match &spec.family {
            Family::Zero => Some(ModulusDescriptor::Zero),
            Family::Obstacle => Some(ModulusDescriptor::Power {
                gamma: 1.0,
                amplitude: c * b,
            }),
            Family::AltPhillips { gamma, lambda } if *gamma <= 1.0 => Some(ModulusDescriptor::Power {
                gamma: *gamma,
                amplitude: c * lambda * b.powf(*gamma),
            }),
            Family::TwoPhaseAltPhillips {
                gamma, lambda_plus, ..
            } if *gamma <= 1.0 => Some(ModulusDescriptor::Power {
                gamma: *gamma,
                amplitude: c * lambda_plus * b.powf(*gamma),
            }),
            Family::LogModulus { amplitude } if b == 1.0 => Some(ModulusDescriptor::Log {
                amplitude: c * amplitude,
            }),
            _ => None,
        };
        if let Some(m) = exact {
            return Ok(m);
        }
    }
    Ok(sampled_majorant(|t| spec.eval([0.0, 0.0], t)))
}

fn sampled_majorant<F: Fn(f64) -> f64>(f: F) -> ModulusDescriptor {
    let n = MODULUS_SAMPLES;
    let step = 1.0 / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| f(i as f64 * step)).collect();
    let mut osc = vec![0.0; n + 1];
    for (j, o) in osc.iter_mut().enumerate().skip(1) {
        *o = (0..=n - j)
            .map(|i| (vals[i + j] - vals[i]).abs())
            .fold(0.0, f64::max);
    }
    let mut running = 0.0_f64;
    let mut prefix = vec![0.0; n + 1];
    for j in 0..=n {
        running = running.max(osc[j]);
        prefix[j] = running;
    }
    let ts: Vec<f64> = (0..=n).map(|j| j as f64 * step).collect();
    let values: Vec<f64> = (0..=n)
        .map(|j| if j == 0 { 0.0 } else { prefix[(j + 1).min(n)] })
        .collect();
    ModulusDescriptor::Sampled { ts, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    const O: Point = [0.0, 0.0];

    #[test]
    fn eval_examples() {
        let ac = PotentialSpec::alt_caffarelli(1.0).unwrap();
        assert_eq!(ac.eval(O, 0.5), 1.0);
        assert_eq!(ac.eval(O, 0.0), 0.0);
        let ap = PotentialSpec::alt_phillips(0.5, 1.0).unwrap();
        assert!((ap.eval(O, 0.25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_rescale_is_identical() {
        let ap = PotentialSpec::alt_phillips(0.7, 2.0).unwrap();
        assert_eq!(rescale_potential(&ap, O, 1.0, 1.0).unwrap(), ap);
    }

    #[test]
    fn alt_phillips_diagonal_rescale() {
        let (g, l, r) = (0.5, 1.5, 0.25);
        let ap = PotentialSpec::alt_phillips(g, l).unwrap();
        let s = rescale_potential(&ap, [0.1, 0.0], r, r).unwrap();
        for i in 0..1000 {
            let t = -2.0 + 4.0 * i as f64 / 999.0;
            let expect = if t > 0.0 { l * r.powf(g) * t.powf(g) } else { 0.0 };
            assert!((s.eval([0.3, 0.0], t) - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn alt_caffarelli_rescale_keeps_sup() {
        let ac = PotentialSpec::alt_caffarelli(0.7).unwrap();
        let s = rescale_potential(&ac, O, 0.125, 0.125).unwrap();
        assert!((s.sup_norm() - 0.7).abs() < 1e-15);
        assert!(s.flags().one_phase);
    }

    #[test]
    fn rejects_nonpositive_scaling() {
        let z = PotentialSpec::zero();
        assert!(rescale_potential(&z, O, 0.0, 1.0).is_err());
        assert!(rescale_potential(&z, O, 1.0, -1.0).is_err());
        assert!(affine_conjugate_potential(&z, O, -1.0, 1.0, &Affine::ZERO).is_err());
    }

    #[test]
    fn conjugation_without_shift_matches_rescale() {
        let ap = PotentialSpec::alt_phillips(0.3, 1.0).unwrap();
        let a = affine_conjugate_potential(&ap, [0.25, 0.0], 0.5, 0.25, &Affine::ZERO).unwrap();
        let b = rescale_potential(&ap, [0.25, 0.0], 0.5, 0.25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conjugated_zero_stays_zero() {
        let ell = Affine {
            value: 0.3,
            gradient: [1.0, -2.0],
        };
        let z = affine_conjugate_potential(&PotentialSpec::zero(), [0.5, 0.5], 0.3, 0.7, &ell).unwrap();
        assert_eq!(z.family(), &Family::Zero);
        assert!(z.transform().is_some());
        assert_eq!(z.eval([0.2, 0.1], 1.3), 0.0);
        assert_eq!(z.sup_norm(), 0.0);
    }

    #[test]
    fn obstacle_shifted_by_one() {
        let ell = Affine {
            value: 1.0,
            gradient: [0.0, 0.0],
        };
        let s = affine_conjugate_potential(&PotentialSpec::obstacle(), O, 1.0, 1.0, &ell).unwrap();
        for i in 0..=400 {
            let t = -2.0 + i as f64 * 0.01;
            assert_eq!(s.eval([0.4, 0.0], t), (t + 1.0).max(0.0));
        }
        assert!(!s.flags().one_phase);
        assert!(!s.flags().vanishes_at_zero);
    }

    #[test]
    fn conjugation_with_slope_is_x_dependent() {
        let ell = Affine {
            value: 0.0,
            gradient: [2.0, 0.0],
        };
        let s = affine_conjugate_potential(&PotentialSpec::obstacle(), O, 0.5, 0.5, &ell).unwrap();
        assert!(s.is_x_dependent());
        // b⁻²a² σ(bt + ℓ(ax)) = (0.5 t + x)₊
        assert!((s.eval([0.3, 0.0], 0.2) - 0.4).abs() < 1e-15);
        assert!(matches!(potential_modulus(&s), Err(Error::XDependent)));
    }

    #[test]
    fn modulus_examples() {
        let ap = PotentialSpec::alt_phillips(0.4, 0.1).unwrap();
        assert_eq!(
            potential_modulus(&ap).unwrap(),
            ModulusDescriptor::Power {
                gamma: 0.4,
                amplitude: 0.1
            }
        );
        assert_eq!(potential_modulus(&PotentialSpec::zero()).unwrap(), ModulusDescriptor::Zero);
        let lg = PotentialSpec::new(Family::LogModulus { amplitude: 0.2 }).unwrap();
        let m = potential_modulus(&lg).unwrap();
        assert_eq!(m, ModulusDescriptor::Log { amplitude: 0.2 });
        assert_eq!(m.eval(0.0), 0.0);
        let mut prev = 0.0;
        for i in 1..=10_000 {
            let t = i as f64 / 10_000.0;
            let v = m.eval(t);
            assert!(v >= prev);
            prev = v;
        }
        assert!(matches!(
            potential_modulus(&PotentialSpec::alt_caffarelli(1.0).unwrap()),
            Err(Error::Discontinuous)
        ));
    }

    #[test]
    fn normalize_examples() {
        let d = 0.1;
        let (s, _) = normalize_for_flatness(&PotentialSpec::zero(), 1.0, d).unwrap();
        assert_eq!(s, 1.0);

        let ac = PotentialSpec::alt_caffarelli(d).unwrap();
        let (s, sp) = normalize_for_flatness(&ac, 0.0, d).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        assert!((sp.sup_norm() - 0.25 * d).abs() < 1e-15);

        let ac4 = PotentialSpec::alt_caffarelli(4.0 * d).unwrap();
        let (s, sp) = normalize_for_flatness(&ac4, 1.0, d).unwrap();
        assert!((s - 3.0).abs() < 1e-14);
        assert!((sp.sup_norm() - d / 9.0).abs() < 1e-15);

        assert!(normalize_for_flatness(&ac, 1.0, 0.0).is_err());
    }

    #[test]
    fn step_is_right_continuous() {
        let s = PotentialSpec::new(Family::StepBounded {
            breakpoints: vec![0.0, 0.5],
            values: vec![0.0, 1.0, -0.5],
        })
        .unwrap();
        assert_eq!(s.eval(O, -1e-9), 0.0);
        assert_eq!(s.eval(O, 0.0), 1.0);
        assert_eq!(s.eval(O, 0.5), -0.5);
        // σ(t) = 0 ≠ σ(0) for t < 0
        assert!(!s.flags().one_phase);
        assert!(!s.flags().continuous);
        assert!(!s.flags().vanishes_at_zero);
        assert_eq!(s.sup_norm(), 1.0);
    }

    #[test]
    fn smoothing_averages_left_window() {
        let ac = PotentialSpec::alt_caffarelli(2.0).unwrap();
        assert!((ac.eval_smoothed(O, 0.05, 0.1) - 1.0).abs() < 1e-15);
        assert!((ac.eval_smoothed(O, 0.5, 0.1) - 2.0).abs() < 1e-14);
        let step = PotentialSpec::new(Family::StepBounded {
            breakpoints: vec![-0.5, 0.5],
            values: vec![3.0, 1.0, 2.0],
        })
        .unwrap();
        assert!((step.eval_smoothed(O, -0.45, 0.1) - 2.0).abs() < 1e-13);
        assert!((step.eval_smoothed(O, 0.55, 0.1) - 1.5).abs() < 1e-13);
    }

    #[test]
    fn json_shape() {
        let ap = PotentialSpec::alt_phillips(0.5, 1.0).unwrap();
        let v = serde_json::to_value(&ap).unwrap();
        assert_eq!(v["family"], "alt_phillips");
        assert_eq!(v["params"]["gamma"], 0.5);
        assert_eq!(v["flags"]["one_phase"], true);
        let back: PotentialSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, ap);

        let bare: PotentialSpec = serde_json::from_str(r#"{"family":"zero"}"#).unwrap();
        assert_eq!(bare, PotentialSpec::zero());
        let bad = r#"{"family":"alt_caffarelli","params":{"lambda":1.0},"flags":{"one_phase":true,"continuous":true,"vanishes_at_zero":true}}"#;
        assert!(serde_json::from_str::<PotentialSpec>(bad).is_err());
    }
}
