//! q-entropy, q-Dirichlet form and q-variance, on empirical one-site measures
//! and on two-point measures where the optimal constants are computable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cylinder::CylinderFn;
use crate::error::{LabError, Result};
use crate::heis::{default_step, dilate, sub_gradient, GroupElement, ScalarField};
use crate::metric::{cc_distance, sample_unit_sphere};
use crate::model::{one_site_expectation, ModelSpec, QuadParams, RadialSampler, SiteContext};

fn check_q(q: f64) -> Result<()> {
    if q > 1.0 && q <= 2.0 {
        Ok(())
    } else {
        Err(LabError::InvalidParameter(format!(
            "q must lie in (1, 2] (got {q})"
        )))
    }
}

/// `μ(g log g) − μg log μg` for `g ≥ 0` given by values and weights.
fn entropy_of(values: &[f64], weights: &[f64]) -> Result<f64> {
    let mass: f64 = values.iter().zip(weights).map(|(g, w)| g * w).sum();
    if !(mass > 0.0) {
        return Err(LabError::InvalidParameter(
            "entropy of a function with zero mass".into(),
        ));
    }
    let glogg: f64 = values
        .iter()
        .zip(weights)
        .map(|(&g, w)| if g > 0.0 { w * g * g.ln() } else { 0.0 })
        .sum();
    Ok((glogg - mass * mass.ln()).max(0.0))
}

/// Empirical measure of i.i.d. draws from a one-site law `E^{i,ω}`: radius
/// from the radial law, direction from the cone measure of the unit sphere.
#[derive(Debug, Clone)]
pub struct SampleMeasure {
    pub points: Vec<GroupElement>,
    pub seed: u64,
}

impl SampleMeasure {
    pub fn one_site(spec: &ModelSpec, ctx: SiteContext, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(LabError::InvalidParameter("empty sample".into()));
        }
        let radial = RadialSampler::new(spec, ctx)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        while points.len() < n {
            let r = radial.sample(&mut rng);
            let x = dilate(&sample_unit_sphere(&mut rng), r.max(f64::MIN_POSITIVE))?;
            // finite differences need room around the centre axis
            if x.horizontal_norm() > 1e-3 * x.gauge() {
                points.push(x);
            }
        }
        Ok(Self { points, seed })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn values(&self, f: &ScalarField) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.points.iter().map(|x| f.eval(x)).collect();
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(LabError::NonFinite(format!(
                "{} = {} at {}",
                f.name(),
                v[k],
                self.points[k]
            )));
        }
        Ok(v)
    }

    fn uniform_weights(&self) -> Vec<f64> {
        vec![1.0 / self.len() as f64; self.len()]
    }

    /// `μ(|f|^q log(|f|^q / μ|f|^q))`.
    pub fn entropy_q(&self, f: &ScalarField, q: f64) -> Result<f64> {
        check_q(q)?;
        let g: Vec<f64> = self.values(f)?.iter().map(|v| v.abs().powf(q)).collect();
        entropy_of(&g, &self.uniform_weights())
    }

    /// `μ|∇f|^q` with finite-difference sub-gradients (step `h`, or the
    /// default step at each point).
    pub fn dirichlet_q(&self, f: &ScalarField, q: f64, h: Option<f64>) -> Result<f64> {
        check_q(q)?;
        let mut total = 0.0;
        for x in &self.points {
            let g = sub_gradient(f, x, h.unwrap_or_else(|| default_step(x)))?;
            total += g.norm().powf(q);
        }
        Ok(total / self.len() as f64)
    }

    /// `μ|f − μf|^q`.
    pub fn variance_q(&self, f: &ScalarField, q: f64) -> Result<f64> {
        check_q(q)?;
        let v = self.values(f)?;
        let m = v.iter().sum::<f64>() / v.len() as f64;
        Ok(v.iter().map(|x| (x - m).abs().powf(q)).sum::<f64>() / v.len() as f64)
    }

    pub fn functionals(&self, f: &ScalarField, q: f64, h: Option<f64>) -> Result<Functionals> {
        Ok(Functionals {
            q,
            entropy: self.entropy_q(f, q)?,
            dirichlet: self.dirichlet_q(f, q, h)?,
            variance_q: self.variance_q(f, q)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Functionals {
    pub q: f64,
    pub entropy: f64,
    pub dirichlet: f64,
    pub variance_q: f64,
}

/// The three functionals of a radial function of site 0 under the one-site
/// law, by quadrature. Since `|∇d| = 1` off the axis, `|∇f| = |∂_r f|`.
pub fn one_site_functionals(
    spec: &ModelSpec,
    ctx: SiteContext,
    f: &CylinderFn,
    q: f64,
) -> Result<Functionals> {
    check_q(q)?;
    if let Some(k) = f.support().into_iter().find(|&k| k != 0) {
        return Err(LabError::InvalidParameter(format!(
            "{f} depends on site {k}, expected site 0 only"
        )));
    }
    let quad = QuadParams::default();
    let fv = |r: f64| f.eval(&|_| r);
    let e = |g: &dyn Fn(f64) -> f64| one_site_expectation(spec, ctx, g, &quad).map(|v| v.value);
    let mass = e(&|r| fv(r).abs().powf(q))?;
    if !(mass > 0.0) {
        return Err(LabError::InvalidParameter(
            "entropy of a function with zero mass".into(),
        ));
    }
    let glogg = e(&|r| {
        let g = fv(r).abs().powf(q);
        if g > 0.0 {
            g * g.ln()
        } else {
            0.0
        }
    })?;
    let mean = e(&|r| fv(r))?;
    Ok(Functionals {
        q,
        entropy: (glogg - mass * mass.ln()).max(0.0),
        dirichlet: e(&|r| f.partial(&|_| r, 0).abs().powf(q))?,
        variance_q: e(&|r| (fv(r) - mean).abs().powf(q))?,
    })
}

/// Test functions for ratio scans: `d`, `d²`, `min(exp(θ d^{p/2}), cap)`
/// and the coordinate `x₁`.
pub fn default_family(p: f64, theta: f64, cap: f64) -> Vec<ScalarField> {
    let d = |x: &GroupElement| cc_distance(x).unwrap_or(f64::NAN);
    vec![
        ScalarField::new("d", crate::heis::Smoothness::SmoothOffAxis, d),
        ScalarField::new(
            "d^2",
            crate::heis::Smoothness::SmoothOffAxis,
            move |x: &GroupElement| d(x).powi(2),
        ),
        ScalarField::new(
            format!("exp({theta}*d^{})", p / 2.0),
            crate::heis::Smoothness::SmoothOffAxis,
            move |x: &GroupElement| (theta * d(x).powf(p / 2.0)).exp().min(cap),
        ),
        ScalarField::smooth("x1", |x: &GroupElement| x.x1),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioEntry {
    pub name: String,
    pub numerator: f64,
    pub dirichlet: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub q: f64,
    /// Lower bound on the optimal constant.
    pub best_ratio: f64,
    pub witness: String,
    pub entries: Vec<RatioEntry>,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Numerator {
    Entropy,
    Variance,
}

fn ratio_scan(
    measure: &SampleMeasure,
    q: f64,
    family: &[ScalarField],
    which: Numerator,
) -> Result<ScanReport> {
    check_q(q)?;
    if family.is_empty() {
        return Err(LabError::InvalidParameter(
            "empty test-function family".into(),
        ));
    }
    let mut entries = Vec::with_capacity(family.len());
    for f in family {
        let v = measure.values(f)?;
        let spread = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread <= 1e-12 * v[0].abs().max(1.0) {
            return Err(LabError::InvalidParameter(format!(
                "test function {} is constant",
                f.name()
            )));
        }
        let numerator = match which {
            Numerator::Entropy => measure.entropy_q(f, q)?,
            Numerator::Variance => measure.variance_q(f, q)?,
        };
        let dirichlet = measure.dirichlet_q(f, q, None)?;
        if dirichlet <= 1e-300 {
            return Err(LabError::InvalidParameter(format!(
                "test function {} has vanishing Dirichlet form but positive numerator",
                f.name()
            )));
        }
        entries.push(RatioEntry {
            name: f.name().to_string(),
            numerator,
            dirichlet,
            ratio: numerator / dirichlet,
        });
    }
    let best = entries
        .iter()
        .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .expect("non-empty family");
    Ok(ScanReport {
        q,
        best_ratio: best.ratio,
        witness: best.name.clone(),
        entries: entries.clone(),
        n_samples: measure.len(),
        seed: measure.seed,
    })
}

/// `sup_f Ent(|f|^q) / μ|∇f|^q` over the family: a lower bound on the
/// log-Sobolev constant.
pub fn ls_ratio_scan(
    measure: &SampleMeasure,
    q: f64,
    family: &[ScalarField],
) -> Result<ScanReport> {
    ratio_scan(measure, q, family, Numerator::Entropy)
}

/// `sup_f μ|f − μf|^q / μ|∇f|^q` over the family.
pub fn sg_ratio_scan(
    measure: &SampleMeasure,
    q: f64,
    family: &[ScalarField],
) -> Result<ScanReport> {
    ratio_scan(measure, q, family, Numerator::Variance)
}

/// Measure on two points `{0, 1}` with gradient `|f(1) − f(0)|` at both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoPointMeasure {
    pub p0: f64,
    pub p1: f64,
}

impl TwoPointMeasure {
    pub fn new(p0: f64) -> Result<Self> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(LabError::InvalidParameter(format!(
                "atom weight {p0} outside (0, 1)"
            )));
        }
        Ok(Self { p0, p1: 1.0 - p0 })
    }

    fn weights(&self) -> [f64; 2] {
        [self.p0, self.p1]
    }

    pub fn entropy_q(&self, f: [f64; 2], q: f64) -> Result<f64> {
        check_q(q)?;
        entropy_of(&[f[0].abs().powf(q), f[1].abs().powf(q)], &self.weights())
    }

    pub fn dirichlet_q(&self, f: [f64; 2], q: f64) -> Result<f64> {
        check_q(q)?;
        Ok((f[1] - f[0]).abs().powf(q))
    }

    pub fn variance_q(&self, f: [f64; 2], q: f64) -> Result<f64> {
        check_q(q)?;
        let m = self.p0 * f[0] + self.p1 * f[1];
        Ok(self.p0 * (f[0] - m).abs().powf(q) + self.p1 * (f[1] - m).abs().powf(q))
    }

    /// Optimal spectral-gap constant. By translation invariance and
    /// homogeneity `f = (0, 1)` is the only test function, giving
    /// `p₀ p₁^q + p₁ p₀^q`.
    pub fn optimal_sg(&self, q: f64) -> Result<f64> {
        self.variance_q([0.0, 1.0], q)
    }

    /// Optimal log-Sobolev constant: by homogeneity and `|∇|f|| ≤ |∇f|` the
    /// supremum runs over `f = (1, t)`, `t ≥ 0`, and `f = (0, 1)`. Returns the
    /// constant and the maximising `t` (infinite for `(0, 1)`).
    pub fn optimal_ls(&self, q: f64) -> Result<(f64, f64)> {
        check_q(q)?;
        let ratio = |u: f64| -> f64 {
            let t = u.exp();
            let d = (t - 1.0).abs().powf(q);
            if d < 1e-300 {
                return 0.0;
            }
            self.entropy_q([1.0, t], q).unwrap_or(0.0) / d
        };
        // coarse scan over log t, then golden-section refinement
        let (lo, hi, n) = (-40.0, 40.0, 16_001);
        let step = (hi - lo) / (n - 1) as f64;
        let mut best = (0.0, f64::NEG_INFINITY);
        for k in 0..n {
            let u = lo + k as f64 * step;
            let r = ratio(u);
            if r > best.1 {
                best = (u, r);
            }
        }
        let (mut a, mut b) = (best.0 - step, best.0 + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if ratio(c) > ratio(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let u = 0.5 * (a + b);
        let mut out = (ratio(u).max(best.1), u.exp());
        let edge = self.entropy_q([0.0, 1.0], q)? / self.dirichlet_q([0.0, 1.0], q)?;
        let edge_swapped = self.entropy_q([1.0, 0.0], q)? / self.dirichlet_q([1.0, 0.0], q)?;
        if edge.max(edge_swapped) > out.0 {
            out = (edge.max(edge_swapped), f64::INFINITY);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationCase {
    pub p0: f64,
    pub q: f64,
    pub sg: f64,
    pub ls: f64,
    /// `4 LS / log 2`.
    pub bound: f64,
    /// For `q = 2` the sharper bound `LS / 2` is also checked.
    pub sharp_bound: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationReport {
    pub cases: Vec<RelationCase>,
    pub passed: bool,
}

/// Checks `SG_opt ≤ 4 LS_opt / log 2` (and `SG_opt ≤ LS_opt / 2` for
/// `q = 2`) on two-point measures.
pub fn sg_from_ls_relation_check(weights: &[f64], qs: &[f64]) -> Result<RelationReport> {
    let mut cases = Vec::new();
    for &p0 in weights {
        let m = TwoPointMeasure::new(p0)?;
        for &q in qs {
            let sg = m.optimal_sg(q)?;
            let (ls, _) = m.optimal_ls(q)?;
            let bound = 4.0 * ls / 2f64.ln();
            let sharp_bound = (q == 2.0).then_some(ls / 2.0);
            let tol = 1e-12 * sg.max(1e-300);
            let passed =
                sg <= bound + tol && sharp_bound.is_none_or(|b| sg <= b + tol.max(1e-9 * b));
            cases.push(RelationCase {
                p0,
                q,
                sg,
                ls,
                bound,
                sharp_bound,
                passed,
            });
        }
    }
    let passed = cases.iter().all(|c| c.passed);
    Ok(RelationReport { cases, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_entropy_hand_formula() {
        let m = TwoPointMeasure::new(0.5).unwrap();
        for q in [1.25f64, 1.5, 2.0] {
            let e = std::f64::consts::E;
            let got = m.entropy_q([1.0, (1.0 / q).exp()], q).unwrap();
            let want = 0.5 * ((1.0 + e) * (2.0 / (1.0 + e)).ln() + e);
            assert!((got - want).abs() < 1e-14, "q={q}: {got} vs {want}");
        }
    }

    #[test]
    fn one_site_quadrature_functionals() {
        let spec = ModelSpec::mu_p(1.0, 2.0).unwrap();
        let ctx = SiteContext::new(0.0, 0.0);
        let f: CylinderFn = "d0".parse().unwrap();
        let a = one_site_functionals(&spec, ctx, &f, 2.0).unwrap();
        assert!((a.dirichlet - 1.0).abs() < 1e-12);
        // Var(d) = E d² − (E d)² = 2 − 9π/16
        let want = 2.0 - 9.0 * std::f64::consts::PI / 16.0;
        assert!((a.variance_q - want).abs() < 1e-10, "{}", a.variance_q);
        let b = one_site_functionals(&spec, ctx, &f.clone().scaled(3.0), 2.0).unwrap();
        assert!((b.entropy / a.entropy - 9.0).abs() < 1e-10);
        let c = one_site_functionals(&spec, ctx, &CylinderFn::constant(2.0), 1.5).unwrap();
        assert!(c.entropy.abs() < 1e-12 && c.variance_q.abs() < 1e-12 && c.dirichlet == 0.0);
    }

    #[test]
    fn bernoulli_constants() {
        // symmetric Bernoulli, q = 2: LS = 1/2, SG = 1/4
        let m = TwoPointMeasure::new(0.5).unwrap();
        let (ls, t) = m.optimal_ls(2.0).unwrap();
        assert!((ls - 0.5).abs() < 1e-8, "{ls} at t={t}");
        assert!((m.optimal_sg(2.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn relation_holds_on_shipped_cases() {
        let r = sg_from_ls_relation_check(&[0.5, 0.9, 0.999], &[1.25, 1.5, 1.75, 2.0]).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(TwoPointMeasure::new(1.0).is_err());
    }

    #[test]
    fn homogeneity_on_empirical_measure() {
        let spec = ModelSpec::mu_p(1.0, 2.0).unwrap();
        let mu = SampleMeasure::one_site(&spec, SiteContext::new(0.0, 0.0), 2000, 5).unwrap();
        let f = &default_family(2.0, 0.5, 1e6)[0];
        let lam = 3.0;
        let g = ScalarField::new("3d", f.smoothness(), {
            let f = f.clone();
            move |x: &GroupElement| lam * f.eval(x)
        });
        for q in [1.5, 2.0] {
            let a = mu.functionals(f, q, None).unwrap();
            let b = mu.functionals(&g, q, None).unwrap();
            let s = lam.powf(q);
            assert!((b.entropy / a.entropy - s).abs() < 1e-10 * s);
            assert!((b.dirichlet / a.dirichlet - s).abs() < 1e-9 * s);
            assert!((b.variance_q / a.variance_q - s).abs() < 1e-10 * s);
        }
    }

    #[test]
    fn eikonal_dirichlet_and_constants() {
        let spec = ModelSpec::mu_p(1.0, 2.0).unwrap();
        let mu = SampleMeasure::one_site(&spec, SiteContext::new(0.0, 0.0), 1000, 6).unwrap();
        let d = &default_family(2.0, 0.5, 1e6)[0];
        for q in [1.25, 2.0] {
            assert!((mu.dirichlet_q(d, q, None).unwrap() - 1.0).abs() < 1e-3);
        }
        let c = ScalarField::smooth("c", |_| 2.0);
        assert!(mu.entropy_q(&c, 2.0).unwrap().abs() < 1e-12);
        assert_eq!(mu.dirichlet_q(&c, 2.0, None).unwrap(), 0.0);
        assert!(ls_ratio_scan(&mu, 2.0, &[c]).is_err());
        let zero = ScalarField::smooth("0", |_| 0.0);
        assert!(mu.entropy_q(&zero, 2.0).is_err());
    }
}
