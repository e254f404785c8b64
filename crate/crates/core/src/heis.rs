//! Heisenberg group arithmetic and the horizontal calculus built on it.
//!
//! Points are stored in exponential coordinates `(x1, x2, x3)` with the
//! product
//!
//! ```text
//! x · y = (x1 + y1, x2 + y2, x3 + y3 + (x1 y2 - x2 y1) / 2).
//! ```
//!
//! Every derivative in this module is a finite difference taken along a
//! one-parameter subgroup through the base point, i.e. `s ↦ a · (s, 0, 0)`
//! for `X1`, `s ↦ a · (0, s, 0)` for `X2` and `s ↦ a · (0, 0, s)` for the
//! central field `X3 = [X1, X2]`. Those curves are exactly the integral
//! curves of the left-invariant fields, so left invariance of the discrete
//! operators holds by construction.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Points closer than this (in gauge distance) to the x3-axis are refused by
/// operators applied to fields that are only smooth off the axis.
pub const AXIS_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupElement {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement {
        x1: 0.0,
        x2: 0.0,
        x3: 0.0,
    };

    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    /// Checked constructor: rejects NaN and infinite coordinates.
    pub fn try_new(x1: f64, x2: f64, x3: f64) -> Result<Self> {
        let g = Self::new(x1, x2, x3);
        if g.is_finite() {
            Ok(g)
        } else {
            Err(LabError::NonFinite(format!("group element {g}")))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }

    pub fn mul(&self, other: &GroupElement) -> GroupElement {
        group_mul(self, other)
    }

    pub fn inv(&self) -> GroupElement {
        group_inv(self)
    }

    /// Euclidean norm of the horizontal projection, `|(x1, x2)|`.
    pub fn horizontal_norm(&self) -> f64 {
        self.x1.hypot(self.x2)
    }

    /// Korányi gauge `((x1² + x2²)² + 16 x3²)^{1/4}`, homogeneous of degree one
    /// under [`dilate`].
    pub fn gauge(&self) -> f64 {
        let r2 = self.x1 * self.x1 + self.x2 * self.x2;
        (r2 * r2 + 16.0 * self.x3 * self.x3).sqrt().sqrt()
    }

    pub fn max_abs_diff(&self, other: &GroupElement) -> f64 {
        (self.x1 - other.x1)
            .abs()
            .max((self.x2 - other.x2).abs())
            .max((self.x3 - other.x3).abs())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }
}

impl From<[f64; 3]> for GroupElement {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x1, self.x2, self.x3)
    }
}

pub fn group_mul(a: &GroupElement, b: &GroupElement) -> GroupElement {
    GroupElement {
        x1: a.x1 + b.x1,
        x2: a.x2 + b.x2,
        x3: a.x3 + b.x3 + 0.5 * (a.x1 * b.x2 - a.x2 * b.x1),
    }
}

pub fn group_inv(a: &GroupElement) -> GroupElement {
    GroupElement {
        x1: -a.x1,
        x2: -a.x2,
        x3: -a.x3,
    }
}

/// Anisotropic dilation `(λ x1, λ x2, λ² x3)`.
pub fn dilate(a: &GroupElement, lambda: f64) -> Result<GroupElement> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(LabError::InvalidParameter(format!(
            "dilation factor must be positive and finite, got {lambda}"
        )));
    }
    Ok(GroupElement {
        x1: lambda * a.x1,
        x2: lambda * a.x2,
        x3: lambda * lambda * a.x3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HorizontalVector {
    pub v1: f64,
    pub v2: f64,
}

impl HorizontalVector {
    pub const fn new(v1: f64, v2: f64) -> Self {
        Self { v1, v2 }
    }

    pub fn norm(&self) -> f64 {
        self.v1.hypot(self.v2)
    }

    /// `(|v1|^q + |v2|^q)^{1/q}`; `q = 2` is the Euclidean norm.
    pub fn q_norm(&self, q: f64) -> f64 {
        if q == 2.0 {
            return self.norm();
        }
        (self.v1.abs().powf(q) + self.v2.abs().powf(q)).powf(1.0 / q)
    }

    pub fn dot(&self, other: &HorizontalVector) -> f64 {
        self.v1 * other.v1 + self.v2 * other.v2
    }

    pub fn scale(&self, c: f64) -> HorizontalVector {
        HorizontalVector::new(c * self.v1, c * self.v2)
    }
}

impl std::ops::Add for HorizontalVector {
    type Output = HorizontalVector;
    fn add(self, rhs: HorizontalVector) -> HorizontalVector {
        HorizontalVector::new(self.v1 + rhs.v1, self.v2 + rhs.v2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothness {
    Smooth,
    /// Smooth except on the x3-axis `x1 = x2 = 0`.
    SmoothOffAxis,
}

type FieldFn = dyn Fn(&GroupElement) -> f64 + Send + Sync;

/// A scalar function on the group, evaluated through a callback.
#[derive(Clone)]
pub struct ScalarField {
    name: String,
    eval: Arc<FieldFn>,
    smoothness: Smoothness,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("name", &self.name)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl ScalarField {
    pub fn new<F>(name: impl Into<String>, smoothness: Smoothness, eval: F) -> Self
    where
        F: Fn(&GroupElement) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            smoothness,
        }
    }

    pub fn smooth<F>(name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&GroupElement) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, Smoothness::Smooth, eval)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    #[inline]
    pub fn eval(&self, a: &GroupElement) -> f64 {
        (self.eval)(a)
    }

    /// Checks `a` against the axis guard; `reach` is the largest step the
    /// stencil takes, which must not cross the axis either.
    pub fn check_point(&self, a: &GroupElement, reach: f64) -> Result<()> {
        if self.smoothness == Smoothness::SmoothOffAxis {
            let dist = a.horizontal_norm();
            if dist < AXIS_GUARD.max(2.0 * reach) {
                return Err(LabError::SingularPoint {
                    point: *a,
                    distance: dist,
                    what: "the field",
                });
            }
        }
        Ok(())
    }
}

/// Default first-derivative step `1e-5 · max(1, gauge(a))`.
pub fn default_step(a: &GroupElement) -> f64 {
    1e-5 * a.gauge().max(1.0)
}

/// Default step for the second-order stencils of [`sub_laplacian`].
pub fn default_second_step(a: &GroupElement) -> f64 {
    1e-3 * a.gauge().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    X1,
    X2,
    X3,
}

impl Direction {
    fn element(self, s: f64) -> GroupElement {
        match self {
            Direction::X1 => GroupElement::new(s, 0.0, 0.0),
            Direction::X2 => GroupElement::new(0.0, s, 0.0),
            Direction::X3 => GroupElement::new(0.0, 0.0, s),
        }
    }

    /// Maps the horizontal index 1 or 2 to a direction.
    pub fn horizontal(index: u8) -> Result<Direction> {
        match index {
            1 => Ok(Direction::X1),
            2 => Ok(Direction::X2),
            _ => Err(LabError::InvalidParameter(format!(
                "horizontal direction must be 1 or 2, got {index}"
            ))),
        }
    }
}

#[inline]
fn flow(a: &GroupElement, dir: Direction, s: f64) -> GroupElement {
    group_mul(a, &dir.element(s))
}

/// Central difference of `f` along the subgroup generated by `dir`.
fn first_difference(f: &ScalarField, a: &GroupElement, dir: Direction, h: f64) -> f64 {
    (f.eval(&flow(a, dir, h)) - f.eval(&flow(a, dir, -h))) / (2.0 * h)
}

fn second_difference(f: &ScalarField, a: &GroupElement, dir: Direction, h: f64) -> f64 {
    (f.eval(&flow(a, dir, h)) - 2.0 * f.eval(a) + f.eval(&flow(a, dir, -h))) / (h * h)
}

/// `U V f (a)` where `U` is applied last: the mixed derivative
/// `∂s ∂t f(a · exp(sU) · exp(tV))` at `s = t = 0`.
fn mixed_difference(
    f: &ScalarField,
    a: &GroupElement,
    outer: Direction,
    inner: Direction,
    hs: f64,
    ht: f64,
) -> f64 {
    let at = |s: f64, t: f64| f.eval(&flow(&flow(a, outer, s), inner, t));
    (at(hs, ht) - at(hs, -ht) - at(-hs, ht) + at(-hs, -ht)) / (4.0 * hs * ht)
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(LabError::InvalidParameter(format!(
            "finite-difference step must be positive, got {h}"
        )))
    }
}

/// `X_i f(a)` by a central difference of step `h` along the subgroup
/// `s ↦ a · exp(s X_i)`.
pub fn horizontal_derivative(
    f: &ScalarField,
    a: &GroupElement,
    direction: u8,
    h: f64,
) -> Result<f64> {
    check_step(h)?;
    let dir = Direction::horizontal(direction)?;
    Ok(first_difference(f, a, dir, h))
}

/// Derivative along any of the three left-invariant fields.
pub fn field_derivative(f: &ScalarField, a: &GroupElement, dir: Direction, h: f64) -> Result<f64> {
    check_step(h)?;
    Ok(first_difference(f, a, dir, h))
}

pub fn sub_gradient(f: &ScalarField, a: &GroupElement, h: f64) -> Result<HorizontalVector> {
    check_step(h)?;
    Ok(HorizontalVector::new(
        first_difference(f, a, Direction::X1, h),
        first_difference(f, a, Direction::X2, h),
    ))
}

/// `Δf(a) = (X1² + X2²) f(a)` from second central differences.
///
/// Fails with [`LabError::SingularPoint`] when `f` is only smooth off the
/// axis and the stencil comes too close to it.
pub fn sub_laplacian(f: &ScalarField, a: &GroupElement, h: f64) -> Result<f64> {
    check_step(h)?;
    f.check_point(a, h)?;
    Ok(second_difference(f, a, Direction::X1, h) + second_difference(f, a, Direction::X2, h))
}

/// `Γ(f, f) = (X1 f)² + (X2 f)²`.
pub fn gamma(f: &ScalarField, a: &GroupElement, h: f64) -> Result<f64> {
    let g = sub_gradient(f, a, h)?;
    Ok(g.v1 * g.v1 + g.v2 * g.v2)
}

/// All derivatives entering the `Γ₂` quadratic form at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderJet {
    pub xf: f64,
    pub yf: f64,
    pub zf: f64,
    pub xxf: f64,
    pub yyf: f64,
    pub xyf: f64,
    pub yxf: f64,
    pub xzf: f64,
    pub yzf: f64,
}

impl SecondOrderJet {
    pub fn gamma(&self) -> f64 {
        self.xf * self.xf + self.yf * self.yf
    }

    /// `(X²f)² + (Y²f)² + ½((XY+YX)f)² + ½(Zf)² + 2((XZf)(Yf) − (YZf)(Xf))`
    /// with `X = X1`, `Y = X2`, `Z = X3`.
    pub fn gamma2(&self) -> f64 {
        let sym = self.xyf + self.yxf;
        self.xxf * self.xxf
            + self.yyf * self.yyf
            + 0.5 * sym * sym
            + 0.5 * self.zf * self.zf
            + 2.0 * (self.xzf * self.yf - self.yzf * self.xf)
    }
}

/// Evaluates the jet at `a`. First derivatives use step `h`; the second and
/// mixed ones use `sqrt(h)`-scaled inner steps so that rounding does not
/// swamp the nested differences.
pub fn second_order_jet(f: &ScalarField, a: &GroupElement, h: f64) -> Result<SecondOrderJet> {
    check_step(h)?;
    let scale = a.gauge().max(1.0);
    let h2 = (h / scale).sqrt() * scale * 0.1;
    f.check_point(a, h2)?;
    use Direction::{X1, X2, X3};
    Ok(SecondOrderJet {
        xf: first_difference(f, a, X1, h),
        yf: first_difference(f, a, X2, h),
        zf: first_difference(f, a, X3, h),
        xxf: second_difference(f, a, X1, h2),
        yyf: second_difference(f, a, X2, h2),
        xyf: mixed_difference(f, a, X1, X2, h2, h2),
        yxf: mixed_difference(f, a, X2, X1, h2, h2),
        xzf: mixed_difference(f, a, X1, X3, h2, h2),
        yzf: mixed_difference(f, a, X2, X3, h2, h2),
    })
}

pub fn gamma2(f: &ScalarField, a: &GroupElement, h: f64) -> Result<f64> {
    Ok(second_order_jet(f, a, h)?.gamma2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdProbeReport {
    pub rho: f64,
    /// Minimum of `Γ₂ − ρΓ` over all fields and points.
    pub min_value: f64,
    pub witness_point: GroupElement,
    pub witness_field: String,
    pub witness_gamma: f64,
    pub witness_gamma2: f64,
    pub evaluations: usize,
}

impl CdProbeReport {
    pub fn violated(&self) -> bool {
        self.min_value < 0.0
    }
}

/// Scans `Γ₂(f) − ρ Γ(f)` over every trial field and sample point and reports
/// the minimum together with its witness.
pub fn cd_condition_probe(
    rho: f64,
    trial_fields: &[ScalarField],
    sample_points: &[GroupElement],
) -> Result<CdProbeReport> {
    if trial_fields.is_empty() || sample_points.is_empty() {
        return Err(LabError::InvalidParameter(
            "curvature probe needs at least one field and one point".into(),
        ));
    }
    let mut best: Option<CdProbeReport> = None;
    let mut evaluations = 0;
    for f in trial_fields {
        for a in sample_points {
            let jet = second_order_jet(f, a, default_step(a))?;
            let (g, g2) = (jet.gamma(), jet.gamma2());
            let value = g2 - rho * g;
            evaluations += 1;
            if best.as_ref().is_none_or(|b| value < b.min_value) {
                best = Some(CdProbeReport {
                    rho,
                    min_value: value,
                    witness_point: *a,
                    witness_field: f.name().to_string(),
                    witness_gamma: g,
                    witness_gamma2: g2,
                    evaluations: 0,
                });
            }
        }
    }
    let mut report = best.expect("non-empty scan");
    report.evaluations = evaluations;
    Ok(report)
}

/// The trial family shipped with the curvature probe.
///
/// * `x1`, whose `Γ₂` vanishes identically;
/// * `x3 + n x1`, for which `Γ₂ = ½` while `Γ` grows like `n²`;
/// * `λ x1 x3 + x2` with `λ < 0`, for which at the identity `Γ = 1` and
///   `Γ₂ = 2λ`, driven by the `XZf · Yf` cross term.
pub fn cd_trial_family() -> Vec<ScalarField> {
    let mut fields = vec![ScalarField::smooth("x1", |x| x.x1)];
    for n in [1.0, 10.0, 100.0, 1000.0] {
        fields.push(ScalarField::smooth(format!("x3+{n}*x1"), move |x| {
            x.x3 + n * x.x1
        }));
    }
    for k in 0..=7 {
        let lambda = -(10f64.powi(k));
        fields.push(ScalarField::smooth(
            format!("{lambda:e}*x1*x3+x2"),
            move |x| lambda * x.x1 * x.x3 + x.x2,
        ));
    }
    fields
}

/// Regular grid of `n³` points in the box `[-w, w]³` (odd `n` includes the
/// identity).
pub fn cd_sample_grid(half_width: f64, n: usize) -> Vec<GroupElement> {
    let n = n.max(1);
    let coord = |k: usize| {
        if n == 1 {
            0.0
        } else {
            -half_width + 2.0 * half_width * k as f64 / (n - 1) as f64
        }
    };
    let mut pts = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                pts.push(GroupElement::new(coord(i), coord(j), coord(k)));
            }
        }
    }
    pts
}
