//! Carnot–Carathéodory distance from the identity, geodesics and balls.
//!
//! Unit-speed geodesics from the identity are helices: with horizontal control
//! `a(u) = e^{i(ku + φ)}` the horizontal part is
//! `z(s) = e^{iφ}(e^{iks} − 1)/(ik)` and the central coordinate is
//! `x3(s) = (ks − sin ks)/(2k²)`. They minimise up to `|ks| = 2π`.
//!
//! For a target `(z, t)` put `u = ks/2`. The helix through it satisfies
//! `|t|/|z|² = (2u − sin 2u)/(8 sin² u)`, a strictly increasing map of
//! `u ∈ (0, π)` onto `(0, ∞)`, and the distance is `d = u |z| / sin u`. On the
//! axis (`z = 0`) the minimiser is a full turn and `d = 2√(π|t|)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::heis::{
    default_second_step, default_step, dilate, group_inv, group_mul, sub_gradient, sub_laplacian,
    GroupElement, ScalarField, Smoothness, AXIS_GUARD,
};
use crate::stats::{Estimate, EstimateMethod};

/// Ratio `|z|² / |x3|` below which the axis expansion is used.
const NEAR_AXIS_RATIO: f64 = 1e-12;

/// `x − sin x` without cancellation for small `x`.
pub(crate) fn x_minus_sin(x: f64) -> f64 {
    if x.abs() < 0.25 {
        // x³/3! − x⁵/5! + x⁷/7! − x⁹/9! + x¹¹/11!
        let x2 = x * x;
        let mut term = x * x2 / 6.0;
        let mut sum = term;
        for k in 1..6 {
            let a = (2 * k + 2) as f64;
            let b = (2 * k + 3) as f64;
            term *= -x2 / (a * b);
            sum += term;
        }
        sum
    } else {
        x - x.sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicParams {
    /// Curvature `k`; zero is a straight horizontal line.
    pub curvature: f64,
    /// Initial direction `φ` of the horizontal velocity.
    pub direction: f64,
    /// Arclength `s ≥ 0`.
    pub arclength: f64,
}

impl GeodesicParams {
    pub fn new(curvature: f64, direction: f64, arclength: f64) -> Self {
        Self {
            curvature,
            direction,
            arclength,
        }
    }

    /// True while the helix is still length minimising.
    pub fn is_minimizing(&self) -> bool {
        (self.curvature * self.arclength).abs() <= 2.0 * PI
    }
}

/// Endpoint of the unit-speed helix started at the identity.
pub fn geodesic_point(g: &GeodesicParams) -> GroupElement {
    let s = g.arclength;
    let theta = g.curvature * s;
    // (e^{iθ} − 1)/(iθ) = sin θ/θ + i (1 − cos θ)/θ
    let (re, im, x3) = if theta == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        let half = 0.5 * theta;
        let sh = half.sin();
        (
            theta.sin() / theta,
            2.0 * sh * sh / theta,
            s * s * x_minus_sin(theta) / (2.0 * theta * theta),
        )
    };
    let (sp, cp) = g.direction.sin_cos();
    GroupElement::new(s * (cp * re - sp * im), s * (sp * re + cp * im), x3)
}

/// Solves `μ(u) = ratio` for `u ∈ (0, π/2]` where
/// `μ(u) = (2u − sin 2u)/(8 sin² u)`; requires `ratio ≤ π/8`.
fn solve_low_branch(ratio: f64) -> Result<f64> {
    let mu = |u: f64| {
        let s = u.sin();
        x_minus_sin(2.0 * u) / (8.0 * s * s)
    };
    let dmu = |u: f64| {
        let (s, c) = u.sin_cos();
        0.5 - x_minus_sin(2.0 * u) * c / (4.0 * s * s * s)
    };
    // μ(u) ≈ u/6 near zero; start from a tight bracket.
    bracketed_newton(
        |u| mu(u) - ratio,
        dmu,
        0.0,
        (6.5 * ratio).min(PI / 2.0),
        1.0,
    )
}

/// Solves `ν(δ) = ratio` for `δ ∈ (0, π/2]` where `δ = π − u` and
/// `ν(δ) = (2π − 2δ + sin 2δ)/(8 sin² δ)`; requires `ratio ≥ π/8`.
fn solve_high_branch(ratio: f64) -> Result<f64> {
    let nu = |d: f64| {
        let s = d.sin();
        (2.0 * PI - 2.0 * d + (2.0 * d).sin()) / (8.0 * s * s)
    };
    let dnu = |d: f64| {
        let (s, c) = d.sin_cos();
        -0.5 - (2.0 * PI - 2.0 * d + (2.0 * d).sin()) * c / (4.0 * s * s * s)
    };
    // ν is decreasing; flip the sign so the bracketing logic sees an
    // increasing function.
    let lo = (PI / (4.0 * ratio)).sqrt() * 0.5;
    let lo = if nu(lo) > ratio { lo } else { 0.0 };
    bracketed_newton(|d| ratio - nu(d), |d| -dnu(d), lo, PI / 2.0, 1.0)
}

/// Root of an increasing function on `[lo, hi]` with `g(lo) ≤ 0 ≤ g(hi)`:
/// a few bisection steps followed by Newton iterations kept inside the
/// bracket (falling back to bisection whenever a step leaves it).
fn bracketed_newton<G, D>(g: G, dg: D, mut lo: f64, mut hi: f64, scale: f64) -> Result<f64>
where
    G: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if lo == 0.0 && hi == 0.0 {
        return Ok(0.0);
    }
    let g_hi = g(hi);
    if g_hi < 0.0 {
        return Err(LabError::RootFinding(format!(
            "shape equation not bracketed on [{lo}, {hi}] (g(hi) = {g_hi})"
        )));
    }
    for _ in 0..8 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return Ok(x);
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = gx / dg(x);
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300 * scale)
            || hi - lo <= 4.0 * f64::EPSILON * hi.abs()
        {
            return Ok(next);
        }
        x = next;
    }
    Err(LabError::RootFinding(format!(
        "no convergence after 200 iterations, bracket [{lo}, {hi}]"
    )))
}

/// Carnot–Carathéodory distance `d(a) = d(a, e)`.
pub fn cc_distance(a: &GroupElement) -> Result<f64> {
    if !a.is_finite() {
        return Err(LabError::NonFinite(format!("distance of {a}")));
    }
    let r = a.horizontal_norm();
    let t = a.x3.abs();
    if t == 0.0 {
        return Ok(r);
    }
    let axis = 2.0 * (PI * t).sqrt();
    if r == 0.0 {
        return Ok(axis);
    }
    if r * r < NEAR_AXIS_RATIO * t {
        // d = 2√(π|t|) − |z| + O(|z|²/√|t|)
        return Ok(axis - r);
    }
    let ratio = t / (r * r);
    if ratio <= PI / 8.0 {
        let u = solve_low_branch(ratio)?;
        if u == 0.0 {
            return Ok(r);
        }
        Ok(u * r / u.sin())
    } else {
        let delta = solve_high_branch(ratio)?;
        Ok((PI - delta) * r / delta.sin())
    }
}

pub fn cc_distance_pair(a: &GroupElement, b: &GroupElement) -> Result<f64> {
    cc_distance(&group_mul(&group_inv(a), b))
}

/// The distance from the identity as a [`ScalarField`], smooth off the axis.
///
/// Panics from inside the callback are impossible for finite input; a
/// non-finite input evaluates to NaN.
pub fn distance_field() -> ScalarField {
    ScalarField::new("d", Smoothness::SmoothOffAxis, |x| {
        cc_distance(x).unwrap_or(f64::NAN)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CCBall {
    pub radius: f64,
}

impl CCBall {
    pub fn new(radius: f64) -> Result<Self> {
        if radius >= 0.0 && radius.is_finite() {
            Ok(Self { radius })
        } else {
            Err(LabError::InvalidParameter(format!("ball radius {radius}")))
        }
    }

    pub fn contains(&self, x: &GroupElement) -> Result<bool> {
        Ok(cc_distance(x)? <= self.radius)
    }

    /// Half-height of the smallest box `[-R,R]² × [-cR², cR²]` containing the
    /// ball. Along the geodesic with `θ = kR`, `x3 = R²(θ − sin θ)/(2θ²)`,
    /// which peaks at `θ = π` with `c = 1/(2π)`; the sphere is dimpled at the
    /// poles, where `x3 = R²/(4π)`.
    pub fn box_half_height(&self) -> f64 {
        self.radius * self.radius / (2.0 * PI)
    }
}

fn check_off_axis(x: &GroupElement) -> Result<()> {
    let dist = x.horizontal_norm();
    if dist < AXIS_GUARD {
        Err(LabError::SingularPoint {
            point: *x,
            distance: dist,
            what: "the distance function",
        })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EikonalReport {
    pub n_points: usize,
    pub max_deviation: f64,
    pub worst_point: GroupElement,
    pub deviations: Vec<f64>,
}

/// Evaluates `| |∇d(x)| − 1 |` at every sample. `h = None` uses
/// [`default_step`] at each point. On-axis samples are rejected.
pub fn check_eikonal(samples: &[GroupElement], h: Option<f64>) -> Result<EikonalReport> {
    let d = distance_field();
    let mut report = EikonalReport {
        n_points: samples.len(),
        max_deviation: 0.0,
        worst_point: GroupElement::IDENTITY,
        deviations: Vec::with_capacity(samples.len()),
    };
    for x in samples {
        check_off_axis(x)?;
        let step = h.unwrap_or_else(|| default_step(x));
        let g = sub_gradient(&d, x, step)?;
        let dev = (g.norm() - 1.0).abs();
        if !dev.is_finite() {
            return Err(LabError::NonFinite(format!("sub-gradient of d at {x}")));
        }
        if dev >= report.max_deviation {
            report.max_deviation = dev;
            report.worst_point = *x;
        }
        report.deviations.push(dev);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct K0Report {
    /// `max d(x) Δd(x)` over the samples.
    pub k0: f64,
    pub witness: GroupElement,
    /// `d Δd` per sample, in input order.
    pub values: Vec<f64>,
    /// Running maximum after each sample.
    pub running_max: Vec<f64>,
}

/// Fits the constant in `Δd ≤ K₀/d` as the running maximum of `d Δd`.
/// `h = None` uses [`default_second_step`].
pub fn estimate_k0(samples: &[GroupElement], h: Option<f64>) -> Result<K0Report> {
    if samples.is_empty() {
        return Err(LabError::InvalidParameter("no samples for K0".into()));
    }
    let d = distance_field();
    let mut values = Vec::with_capacity(samples.len());
    let mut running_max = Vec::with_capacity(samples.len());
    let mut k0 = f64::NEG_INFINITY;
    let mut witness = samples[0];
    for x in samples {
        check_off_axis(x)?;
        let step = h.unwrap_or_else(|| default_second_step(x));
        let v = cc_distance(x)? * sub_laplacian(&d, x, step)?;
        if !v.is_finite() {
            return Err(LabError::NonFinite(format!("d Δd at {x}")));
        }
        if v > k0 {
            k0 = v;
            witness = *x;
        }
        values.push(v);
        running_max.push(k0);
    }
    Ok(K0Report {
        k0,
        witness,
        values,
        running_max,
    })
}

/// A point of the unit sphere `{d = 1}` obtained by pushing a uniform sample
/// of the unit ball radially outward; its law is the normalised cone measure
/// that appears in `dx = r³ dr dσ`.
pub fn sample_unit_sphere<R: Rng + ?Sized>(rng: &mut R) -> GroupElement {
    let c = CCBall { radius: 1.0 }.box_half_height();
    loop {
        let x = GroupElement::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-c..c),
        );
        let Ok(d) = cc_distance(&x) else { continue };
        if d <= 1.0 && d > 1e-3 && x.horizontal_norm() > 0.0 {
            return dilate(&x, 1.0 / d).expect("positive dilation");
        }
    }
}

/// Point at distance `r` in a uniformly drawn cone direction.
pub fn sample_at_distance<R: Rng + ?Sized>(rng: &mut R, r: f64) -> GroupElement {
    if r <= 0.0 {
        return GroupElement::IDENTITY;
    }
    dilate(&sample_unit_sphere(rng), r).expect("positive dilation")
}

/// Monte-Carlo estimate of the Lebesgue volume of `B_R` by rejection inside
/// the bounding box `[-R,R]² × [-R²/2π, R²/2π]`.
pub fn ball_volume(radius: f64, n_samples: usize, seed: u64) -> Result<Estimate> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(LabError::InvalidParameter(format!(
            "ball radius must be positive, got {radius}"
        )));
    }
    if n_samples == 0 {
        return Err(LabError::InvalidParameter(
            "ball volume needs samples".into(),
        ));
    }
    let ball = CCBall { radius };
    let c = ball.box_half_height();
    let box_volume = (2.0 * radius) * (2.0 * radius) * (2.0 * c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n_samples {
        let x = GroupElement::new(
            rng.random_range(-radius..radius),
            rng.random_range(-radius..radius),
            rng.random_range(-c..c),
        );
        if cc_distance(&x)? <= radius {
            hits += 1;
        }
    }
    let p = hits as f64 / n_samples as f64;
    Ok(Estimate {
        value: box_volume * p,
        stderr: box_volume * (p * (1.0 - p) / n_samples as f64).sqrt(),
        n_samples,
        seed,
        method: EstimateMethod::MonteCarlo,
    })
}
