//! U-bound verification.
//!
//! Pointwise: `|∇_i H|^q + H ≤ a d ∇_i d·∇_i H + b(ω) + c` for the two
//! examples with `a = c′ + 1`, `b(ω) = (c′ + 1) J Σ_{j∼i} d^p(ω_j)`, and an
//! additive constant `c` calibrated once on a coarse radial pre-scan.
//!
//! Integral: `E(|f|^q (d^{p−1} + Σ d(ω_j))) ≤ A₁ E|∇f|^q + B₁ E|f|^q` for
//! radial test functions, by one-site quadrature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cylinder::CylinderFn;
use crate::error::{LabError, Result};
use crate::heis::{default_step, sub_gradient, GroupElement, AXIS_GUARD};
use crate::metric::{cc_distance, distance_field, estimate_k0, sample_at_distance};
use crate::model::{
    one_site_expectation, Family, ModelSpec, QuadParams, RadialSampler, SiteContext,
};
use crate::stats::iid_mean_stderr;

/// The constants of inequality `|∇H|^q + H ≤ a d∇d·∇H + b(ω) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UBoundConstants {
    pub c_prime: f64,
    pub a: f64,
    /// `b(ω) = b_coeff · Σ_{j∼i} d(ω_j)^b_exponent`.
    pub b_coeff: f64,
    pub b_exponent: f64,
    pub additive_c: f64,
    pub q: f64,
}

impl UBoundConstants {
    /// `a` and `b(ω)` as given for Examples 1 and 2; `additive_c` is zero
    /// until calibrated.
    pub fn for_example(spec: &ModelSpec) -> Result<Self> {
        match spec.family {
            Family::Example1 { s, j } => {
                let c_prime = (2.0 * (s - 1.0).powi(2)).max(16.0 * j);
                Ok(Self {
                    c_prime,
                    a: c_prime + 1.0,
                    b_coeff: (c_prime + 1.0) * j,
                    b_exponent: 2.0,
                    additive_c: 0.0,
                    q: 2.0,
                })
            }
            Family::Example2 { s, j, q } => {
                let p = spec.p();
                let c_prime = (2f64.powf(q - 1.0) * (s - 1.0).powf(q))
                    .max(2f64.powf(2.0 * q - 2.0) * j.powf(q - 1.0) * p.powf(q));
                Ok(Self {
                    c_prime,
                    a: c_prime + 1.0,
                    b_coeff: (c_prime + 1.0) * j,
                    b_exponent: p,
                    additive_c: 0.0,
                    q,
                })
            }
            _ => Err(LabError::Unsupported(format!(
                "pointwise U-bound constants are only given for example1 and example2, not {}",
                spec.name()
            ))),
        }
    }

    pub fn b(&self, left: f64, right: f64) -> f64 {
        self.b_coeff * (left.powf(self.b_exponent) + right.powf(self.b_exponent))
    }
}

/// Slack `LHS − RHS` from the radial data: `r = d(x)`, `grad_d = |∇d|`,
/// and `F′(r)` the derivative of the one-site energy.
fn slack_radial(
    spec: &ModelSpec,
    k: &UBoundConstants,
    left: f64,
    r: f64,
    right: f64,
    grad_d: f64,
) -> f64 {
    let fp = spec.site_energy_derivative(left, r, right);
    let h = spec.site_energy(left, r, right);
    let lhs = (fp.abs() * grad_d).powf(k.q) + h;
    let rhs = k.a * r * fp * grad_d * grad_d + k.b(left, right) + k.additive_c;
    lhs - rhs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PreScan {
    pub max_slack: f64,
    pub witness: [f64; 3],
    pub margin: f64,
}

/// Coarse radial pre-scan over `d(x) ≤ r_max`, `d(ω_j) ≤ omega_max` (with
/// `|∇d| = 1`), refined by coordinate search around the best grid point.
/// The calibrated constant is the maximal slack plus a margin.
pub fn calibrate_additive_constant(
    spec: &ModelSpec,
    r_max: f64,
    omega_max: f64,
) -> Result<(UBoundConstants, PreScan)> {
    let mut k = UBoundConstants::for_example(spec)?;
    let f = |v: [f64; 3]| slack_radial(spec, &k, v[0], v[1], v[2], 1.0);
    let (nr, nw) = (400, 41);
    let mut best = ([0.0; 3], f64::NEG_INFINITY);
    for a in 0..nw {
        for b in 0..nw {
            for c in 0..=nr {
                let v = [
                    omega_max * a as f64 / (nw - 1) as f64,
                    r_max * c as f64 / nr as f64,
                    omega_max * b as f64 / (nw - 1) as f64,
                ];
                let s = f(v);
                if s > best.1 {
                    best = (v, s);
                }
            }
        }
    }
    let bounds = [omega_max, r_max, omega_max];
    let mut step = [
        omega_max / (nw - 1) as f64,
        r_max / nr as f64,
        omega_max / (nw - 1) as f64,
    ];
    for _ in 0..200 {
        let mut improved = false;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut v = best.0;
                v[axis] = (v[axis] + sign * step[axis]).clamp(0.0, bounds[axis]);
                let s = f(v);
                if s > best.1 {
                    best = (v, s);
                    improved = true;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    let margin = 1e-3 * best.1.abs().max(1.0);
    k.additive_c = best.1.max(0.0) + margin;
    Ok((
        k,
        PreScan {
            max_slack: best.1,
            witness: best.0,
            margin,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UBoundWitness {
    pub x: GroupElement,
    pub omega_left: GroupElement,
    pub omega_right: GroupElement,
    pub d_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UBoundReport {
    pub spec: ModelSpec,
    pub constants: UBoundConstants,
    pub pre_scan: PreScan,
    /// Largest `LHS − RHS` over the cloud; the check passes iff `≤ 0`.
    pub lhs_max_slack: f64,
    pub witness: Option<UBoundWitness>,
    pub n_points: usize,
    pub n_skipped_on_axis: usize,
    pub seed: u64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CloudParams {
    pub n: usize,
    pub seed: u64,
    /// Verification range of `d(x)`.
    pub d_max: f64,
    pub omega_max: f64,
    /// Range of the calibration pre-scan.
    pub prescan_d_max: f64,
}

impl Default for CloudParams {
    fn default() -> Self {
        Self {
            n: 100_000,
            seed: 7,
            d_max: 50.0,
            omega_max: 10.0,
            prescan_d_max: 5.0,
        }
    }
}

/// Slack at one `(x, ω)`; `None` when `x` sits on the centre axis where the
/// gradient of `H` does not exist.
pub fn pointwise_slack(
    spec: &ModelSpec,
    k: &UBoundConstants,
    x: &GroupElement,
    omega_left: &GroupElement,
    omega_right: &GroupElement,
) -> Result<Option<f64>> {
    let (l, r) = (cc_distance(omega_left)?, cc_distance(omega_right)?);
    let d = cc_distance(x)?;
    let field = distance_field();
    let h = default_step(x);
    if field.check_point(x, h).is_err() {
        // at the identity the gradient vanishes when F′(0) = 0
        if d == 0.0 && spec.site_energy_derivative(l, 0.0, r) == 0.0 {
            return Ok(Some(slack_radial(spec, k, l, 0.0, r, 0.0)));
        }
        return Ok(None);
    }
    let g = sub_gradient(&field, x, h)?;
    // |∇H|^q and d∇d·∇H with the measured ∇d
    let fp = spec.site_energy_derivative(l, d, r);
    let grad_h = g.scale(fp);
    let lhs = grad_h.norm().powf(k.q) + spec.site_energy(l, d, r);
    let rhs = k.a * d * g.dot(&grad_h) + k.b(l, r) + k.additive_c;
    Ok(Some(lhs - rhs))
}

/// Calibrates `c` on the pre-scan range, freezes it, then checks a fresh
/// cloud of `(x, ω)` with `d(x)` uniform on `[0, d_max]` and `d(ω_j)`
/// uniform on `[0, ω_max]`, directions from the cone measure.
pub fn ubound_pointwise_check(spec: &ModelSpec, params: &CloudParams) -> Result<UBoundReport> {
    spec.validate()?;
    let (k, pre_scan) = calibrate_additive_constant(spec, params.prescan_d_max, params.omega_max)?;
    let chunk = 1000;
    let n_chunks = params.n.div_ceil(chunk);
    let results = (0..n_chunks)
        .into_par_iter()
        .map(|c| -> Result<(f64, Option<UBoundWitness>, usize, usize)> {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(c as u64);
            let count = chunk.min(params.n - c * chunk);
            let mut best: (f64, Option<UBoundWitness>) = (f64::NEG_INFINITY, None);
            let mut skipped = 0;
            for _ in 0..count {
                let r = rng.random_range(0.0..=params.d_max);
                let x = sample_at_distance(&mut rng, r);
                let wl_r = rng.random_range(0.0..=params.omega_max);
                let wl = sample_at_distance(&mut rng, wl_r);
                let wr_r = rng.random_range(0.0..=params.omega_max);
                let wr = sample_at_distance(&mut rng, wr_r);
                match pointwise_slack(spec, &k, &x, &wl, &wr)? {
                    Some(s) if s > best.0 => {
                        best = (
                            s,
                            Some(UBoundWitness {
                                x,
                                omega_left: wl,
                                omega_right: wr,
                                d_x: r,
                            }),
                        )
                    }
                    Some(_) => {}
                    None => skipped += 1,
                }
            }
            Ok((best.0, best.1, skipped, count))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut max_slack = f64::NEG_INFINITY;
    let mut witness = None;
    let mut skipped = 0;
    let mut n_points = 0;
    for (s, w, sk, cnt) in results {
        skipped += sk;
        n_points += cnt;
        if s > max_slack {
            max_slack = s;
            witness = w;
        }
    }
    Ok(UBoundReport {
        spec: *spec,
        constants: k,
        pre_scan,
        lhs_max_slack: max_slack,
        witness,
        n_points,
        n_skipped_on_axis: skipped,
        seed: params.seed,
        passed: max_slack <= 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralTerms {
    pub function: String,
    /// `E(|f|^q (d^{p−1} + Σ d(ω_j)))`.
    pub weighted: f64,
    /// `E|∇f|^q`.
    pub gradient: f64,
    /// `E|f|^q`.
    pub mass: f64,
    /// Monte-Carlo cross-check of `weighted` (value, standard error).
    pub weighted_mc: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryRow {
    pub omega: [f64; 2],
    pub sum_d: f64,
    pub sum_dp: f64,
    pub terms: Vec<IntegralTerms>,
    /// Smallest `B₁` on this boundary for each `A₁` of the grid.
    pub b_floor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UBoundIntegralReport {
    pub spec: ModelSpec,
    pub q: f64,
    pub a_grid: Vec<f64>,
    pub rows: Vec<BoundaryRow>,
    /// For each `A₁`, the smallest `B₁` valid on every boundary.
    pub uniform_b: Vec<f64>,
    /// The grid pair with the smallest `A₁ + B₁`.
    pub feasible_pair: (f64, f64),
}

/// Quadrature terms of the integral U-bound for each radial test function
/// (`f` must depend on site 0 only) and each boundary pair of radii.
pub fn ubound_integral_check(
    spec: &ModelSpec,
    omegas: &[[f64; 2]],
    family: &[CylinderFn],
    a_grid: &[f64],
    mc: Option<(usize, u64)>,
) -> Result<UBoundIntegralReport> {
    if family.is_empty() || omegas.is_empty() || a_grid.is_empty() {
        return Err(LabError::InvalidParameter(
            "empty family, boundary set or A grid".into(),
        ));
    }
    for f in family {
        if f.support().iter().any(|&k| k != 0) {
            return Err(LabError::InvalidParameter(format!(
                "{f} must depend on site 0 only"
            )));
        }
    }
    let q = spec.q();
    let p = spec.p();
    let quad = QuadParams::default();
    let mut rows = Vec::with_capacity(omegas.len());
    for (row_idx, w) in omegas.iter().enumerate() {
        let ctx = SiteContext::new(w[0], w[1]);
        let sum_d = w[0] + w[1];
        let mut terms = Vec::with_capacity(family.len());
        for f in family {
            let fv = |r: f64| f.eval(&|_| r);
            let weight = |r: f64| r.powf(p - 1.0) + sum_d;
            let weighted =
                one_site_expectation(spec, ctx, |r| fv(r).abs().powf(q) * weight(r), &quad)?.value;
            let gradient =
                one_site_expectation(spec, ctx, |r| f.partial(&|_| r, 0).abs().powf(q), &quad)?
                    .value;
            let mass = one_site_expectation(spec, ctx, |r| fv(r).abs().powf(q), &quad)?.value;
            let weighted_mc = match mc {
                Some((n, seed)) => {
                    let sampler = RadialSampler::new(spec, ctx)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ row_idx as u64);
                    let xs: Vec<f64> = (0..n)
                        .map(|_| {
                            let r = sampler.sample(&mut rng);
                            fv(r).abs().powf(q) * weight(r)
                        })
                        .collect();
                    Some(iid_mean_stderr(&xs))
                }
                None => None,
            };
            terms.push(IntegralTerms {
                function: f.to_string(),
                weighted,
                gradient,
                mass,
                weighted_mc,
            });
        }
        let b_floor = a_grid
            .iter()
            .map(|&a| {
                terms
                    .iter()
                    .map(|t| (t.weighted - a * t.gradient) / t.mass)
                    .fold(f64::NEG_INFINITY, f64::max)
                    .max(0.0)
            })
            .collect();
        rows.push(BoundaryRow {
            omega: *w,
            sum_d,
            sum_dp: w[0].powf(p) + w[1].powf(p),
            terms,
            b_floor,
        });
    }
    let uniform_b: Vec<f64> = (0..a_grid.len())
        .map(|k| rows.iter().map(|r| r.b_floor[k]).fold(0.0, f64::max))
        .collect();
    let best = (0..a_grid.len())
        .min_by(|&x, &y| (a_grid[x] + uniform_b[x]).total_cmp(&(a_grid[y] + uniform_b[y])))
        .expect("non-empty grid");
    Ok(UBoundIntegralReport {
        spec: *spec,
        q,
        a_grid: a_grid.to_vec(),
        rows,
        uniform_b: uniform_b.clone(),
        feasible_pair: (a_grid[best], uniform_b[best]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradDotReport {
    /// `max (|∇d|² + d Δd)` over the cloud.
    pub max_value: f64,
    pub k0: f64,
    pub bound: f64,
    pub n_points: usize,
    pub n_excluded: usize,
    pub passed: bool,
}

/// Checks `∇·(d∇d) = |∇d|² + dΔd ≤ 1 + K₀` on an off-axis cloud; points
/// closer than `10⁻³·gauge` to the centre axis are excluded and counted.
pub fn grad_dot_check(cloud: &[GroupElement], k0: Option<f64>, tol: f64) -> Result<GradDotReport> {
    let (kept, excluded): (Vec<GroupElement>, Vec<GroupElement>) = cloud
        .iter()
        .partition(|x| x.horizontal_norm() > (1e-3 * x.gauge()).max(AXIS_GUARD));
    if kept.is_empty() {
        return Err(LabError::InvalidParameter(
            "no off-axis points in the cloud".into(),
        ));
    }
    let report = estimate_k0(&kept, None)?;
    let field = distance_field();
    let mut max_value = f64::NEG_INFINITY;
    for (x, d_lap_d) in kept.iter().zip(&report.values) {
        let g = sub_gradient(&field, x, default_step(x))?;
        max_value = max_value.max(g.norm().powi(2) + d_lap_d);
    }
    let k0 = k0.unwrap_or(report.k0);
    let bound = 1.0 + k0 + tol;
    Ok(GradDotReport {
        max_value,
        k0,
        bound,
        n_points: kept.len(),
        n_excluded: excluded.len(),
        passed: max_value <= bound,
    })
}
