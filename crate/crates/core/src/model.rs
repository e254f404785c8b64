//! Lattice Gibbs models on `ℍ^ℤ` restricted to finite windows.
//!
//! Every shipped family is radial: the phase and the pair potential depend on
//! the spins only through their distances `d(x_i)` from the identity. Since
//! `Leb{d(x) ≤ r} = Leb(B₁) r⁴`, one-site integrals reduce to
//! `∫ g(d(x)) dx = σ ∫₀^∞ g(r) r³ dr` with `σ = 4 Leb(B₁)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cylinder::CylinderFn;
use crate::error::{LabError, Result};
use crate::heis::{sub_gradient, GroupElement, HorizontalVector, ScalarField, Smoothness};
use crate::metric::{cc_distance, distance_field};
use crate::quadrature::{composite_rule, integrate_adaptive, truncation_radius};

/// Number of nearest neighbours on the one-dimensional lattice.
pub const NEIGHBOURS: usize = 2;

fn default_j_max() -> f64 {
    1.0
}

/// Hamiltonian families.
///
/// * `mu_p`: `φ = β d^p`, no interaction.
/// * `ip_quadratic`: `φ = α d^p`, bond `ε[(d_i + ρ d_j)² + (d_j + ρ d_i)²]`.
/// * `ip_power`: as above with exponent `s` on `|d_i + ρ d_j|`.
/// * `example1`: `φ = d^s`, bond `J (d_i − d_j)²`.
/// * `example2`: `φ = d^s`, bond `J (d_i + d_j)^p` with `p` dual to `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    MuP {
        beta: f64,
        p: f64,
    },
    IpQuadratic {
        alpha: f64,
        p: f64,
        eps: f64,
        rho: f64,
    },
    IpPower {
        alpha: f64,
        p: f64,
        eps: f64,
        rho: f64,
        s: f64,
    },
    Example1 {
        s: f64,
        j: f64,
    },
    Example2 {
        s: f64,
        j: f64,
        q: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub family: Family,
    /// Upper bound (exclusive) on the coupling `J` of the examples.
    #[serde(default = "default_j_max")]
    pub j_max: f64,
}

impl ModelSpec {
    pub fn new(family: Family) -> Result<Self> {
        let spec = Self {
            family,
            j_max: default_j_max(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_j_max(mut self, j_max: f64) -> Result<Self> {
        self.j_max = j_max;
        self.validate()?;
        Ok(self)
    }

    pub fn mu_p(beta: f64, p: f64) -> Result<Self> {
        Self::new(Family::MuP { beta, p })
    }

    pub fn ip_quadratic(alpha: f64, p: f64, eps: f64, rho: f64) -> Result<Self> {
        Self::new(Family::IpQuadratic { alpha, p, eps, rho })
    }

    pub fn ip_power(alpha: f64, p: f64, eps: f64, rho: f64, s: f64) -> Result<Self> {
        Self::new(Family::IpPower {
            alpha,
            p,
            eps,
            rho,
            s,
        })
    }

    pub fn example1(s: f64, j: f64) -> Result<Self> {
        Self::new(Family::Example1 { s, j })
    }

    pub fn example2(s: f64, j: f64, q: f64) -> Result<Self> {
        Self::new(Family::Example2 { s, j, q })
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            Family::MuP { .. } => "mu_p",
            Family::IpQuadratic { .. } => "ip_quadratic",
            Family::IpPower { .. } => "ip_power",
            Family::Example1 { .. } => "example1",
            Family::Example2 { .. } => "example2",
        }
    }

    /// The exponent `q ∈ (1, 2]` of the coercive inequalities.
    pub fn q(&self) -> f64 {
        match self.family {
            Family::Example1 { .. } => 2.0,
            Family::Example2 { q, .. } => q,
            _ => {
                let p = self.p();
                p / (p - 1.0)
            }
        }
    }

    /// Hölder dual of `q`.
    pub fn p(&self) -> f64 {
        match self.family {
            Family::MuP { p, .. } | Family::IpQuadratic { p, .. } | Family::IpPower { p, .. } => p,
            Family::Example1 { .. } => 2.0,
            Family::Example2 { q, .. } => q / (q - 1.0),
        }
    }

    /// Pair coupling: `J` for the examples, `ε` for the interacting `μ_p`
    /// families, zero for `μ_p`.
    pub fn coupling(&self) -> f64 {
        match self.family {
            Family::MuP { .. } => 0.0,
            Family::IpQuadratic { eps, .. } | Family::IpPower { eps, .. } => eps,
            Family::Example1 { j, .. } | Family::Example2 { j, .. } => j,
        }
    }

    pub fn has_interaction(&self) -> bool {
        self.coupling() != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::InvalidParameter(msg));
        let values: Vec<f64> = match self.family {
            Family::MuP { beta, p } => vec![beta, p],
            Family::IpQuadratic { alpha, p, eps, rho } => vec![alpha, p, eps, rho],
            Family::IpPower {
                alpha,
                p,
                eps,
                rho,
                s,
            } => vec![alpha, p, eps, rho, s],
            Family::Example1 { s, j } => vec![s, j],
            Family::Example2 { s, j, q } => vec![s, j, q],
        };
        if values.iter().any(|v| !v.is_finite()) || !(self.j_max > 0.0) {
            return bad(format!(
                "{}: parameters must be finite and j_max positive",
                self.name()
            ));
        }
        match self.family {
            Family::MuP { beta, p } => {
                if beta <= 0.0 || p < 2.0 {
                    return bad(format!(
                        "mu_p needs beta > 0 and p >= 2 (got beta={beta}, p={p})"
                    ));
                }
            }
            Family::IpQuadratic { alpha, p, eps, .. } => {
                if alpha <= 0.0 || p < 2.0 {
                    return bad(format!(
                        "ip_quadratic needs alpha > 0 and p >= 2 (got alpha={alpha}, p={p})"
                    ));
                }
                let floor = -alpha / (2.0 * NEIGHBOURS as f64);
                if p == 2.0 && eps <= floor {
                    return bad(format!(
                        "ip_quadratic with p = 2 needs eps > -alpha/{} = {floor} (got {eps})",
                        2 * NEIGHBOURS
                    ));
                }
            }
            Family::IpPower {
                alpha, p, eps, s, ..
            } => {
                if alpha <= 0.0 || p < 2.0 {
                    return bad(format!(
                        "ip_power needs alpha > 0 and p >= 2 (got alpha={alpha}, p={p})"
                    ));
                }
                if !(1.0..p).contains(&s) {
                    return bad(format!("ip_power needs 1 <= s < p (got s={s}, p={p})"));
                }
                let _ = eps;
            }
            Family::Example1 { s, j } => {
                if !(1.0..2.0).contains(&s) {
                    return bad(format!(
                        "example1 constants are only established for 1 <= s < 2 (got s={s})"
                    ));
                }
                self.check_j(j)?;
            }
            Family::Example2 { s, j, q } => {
                if !(q > 1.0 && q <= 2.0) {
                    return bad(format!("example2 needs q in (1, 2] (got {q})"));
                }
                let p = q / (q - 1.0);
                if !(1.0..p).contains(&s) {
                    return bad(format!("example2 needs 1 <= s < p = {p} (got s={s})"));
                }
                self.check_j(j)?;
            }
        }
        Ok(())
    }

    fn check_j(&self, j: f64) -> Result<()> {
        if !(0.0..self.j_max).contains(&j) {
            return Err(LabError::InvalidParameter(format!(
                "{}: J must lie in [0, {}) (got {j})",
                self.name(),
                self.j_max
            )));
        }
        Ok(())
    }

    fn phase_coeff_exp(&self) -> (f64, f64) {
        match self.family {
            Family::MuP { beta, p } => (beta, p),
            Family::IpQuadratic { alpha, p, .. } | Family::IpPower { alpha, p, .. } => (alpha, p),
            Family::Example1 { s, .. } | Family::Example2 { s, .. } => (1.0, s),
        }
    }

    /// `φ` as a function of `r = d(x)`.
    pub fn phase(&self, r: f64) -> f64 {
        let (c, e) = self.phase_coeff_exp();
        c * r.powf(e)
    }

    pub fn phase_derivative(&self, r: f64) -> f64 {
        let (c, e) = self.phase_coeff_exp();
        if e == 1.0 {
            c
        } else if r == 0.0 {
            0.0
        } else {
            c * e * r.powf(e - 1.0)
        }
    }

    /// Energy of the bond between two neighbouring spins with radii `a`, `b`
    /// (coupling included). Symmetric in `a`, `b`.
    pub fn bond(&self, a: f64, b: f64) -> f64 {
        match self.family {
            Family::MuP { .. } => 0.0,
            Family::IpQuadratic { eps, rho, .. } => {
                let (u, v) = (a + rho * b, b + rho * a);
                eps * (u * u + v * v)
            }
            Family::IpPower { eps, rho, s, .. } => {
                eps * ((a + rho * b).abs().powf(s) + (b + rho * a).abs().powf(s))
            }
            Family::Example1 { j, .. } => j * (a - b) * (a - b),
            Family::Example2 { j, .. } => {
                if j == 0.0 {
                    0.0
                } else {
                    j * (a + b).powf(self.p())
                }
            }
        }
    }

    /// `∂/∂a` of [`ModelSpec::bond`].
    pub fn bond_derivative(&self, a: f64, b: f64) -> f64 {
        match self.family {
            Family::MuP { .. } => 0.0,
            Family::IpQuadratic { eps, rho, .. } => {
                2.0 * eps * ((a + rho * b) + rho * (b + rho * a))
            }
            Family::IpPower { eps, rho, s, .. } => {
                let dpow = |u: f64| s * u.abs().powf(s - 1.0) * u.signum();
                eps * (dpow(a + rho * b) + rho * dpow(b + rho * a))
            }
            Family::Example1 { j, .. } => 2.0 * j * (a - b),
            Family::Example2 { j, .. } => {
                let p = self.p();
                if j == 0.0 {
                    0.0
                } else {
                    j * p * (a + b).powf(p - 1.0)
                }
            }
        }
    }

    /// One-site Hamiltonian `H^{i,ω}` as a function of `r = d(x_i)` for
    /// neighbour radii `left`, `right`.
    pub fn site_energy(&self, left: f64, r: f64, right: f64) -> f64 {
        self.phase(r) + self.bond(r, left) + self.bond(r, right)
    }

    pub fn site_energy_derivative(&self, left: f64, r: f64, right: f64) -> f64 {
        self.phase_derivative(r) + self.bond_derivative(r, left) + self.bond_derivative(r, right)
    }
}

/// Integer window `Λ = [lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if hi < lo {
            return Err(LabError::InvalidParameter(format!(
                "empty window [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn single(site: i64) -> Self {
        Self { lo: site, hi: site }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: i64) -> bool {
        (self.lo..=self.hi).contains(&i)
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }

    /// Sites of `Λ` in `Γ₀` (even) or `Γ₁` (odd).
    pub fn color(&self, parity: i64) -> Vec<i64> {
        self.sites().filter(|i| i.rem_euclid(2) == parity).collect()
    }
}

/// Spins on a window together with the frozen boundary values on its two
/// outer neighbours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    window: Window,
    /// Values on `lo − 1 ..= hi + 1`.
    values: Vec<GroupElement>,
}

impl LatticeConfig {
    pub fn new(
        window: Window,
        spins: Vec<GroupElement>,
        left: GroupElement,
        right: GroupElement,
    ) -> Result<Self> {
        if spins.len() != window.len() {
            return Err(LabError::InvalidParameter(format!(
                "window [{}, {}] needs {} spins, got {}",
                window.lo,
                window.hi,
                window.len(),
                spins.len()
            )));
        }
        let mut values = Vec::with_capacity(spins.len() + 2);
        values.push(left);
        values.extend(spins);
        values.push(right);
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(LabError::NonFinite(format!("spin value {bad}")));
        }
        Ok(Self { window, values })
    }

    /// Every spin and both boundary values equal to `x`.
    pub fn uniform(window: Window, x: GroupElement) -> Self {
        Self {
            window,
            values: vec![x; window.len() + 2],
        }
    }

    pub fn from_maps(
        window: Window,
        spins: &BTreeMap<i64, GroupElement>,
        boundary: &BTreeMap<i64, GroupElement>,
    ) -> Result<Self> {
        let mut s = Vec::with_capacity(window.len());
        for i in window.sites() {
            s.push(*spins.get(&i).ok_or(LabError::MissingSpin(i))?);
        }
        if let Some(&k) = spins.keys().find(|k| !window.contains(**k)) {
            return Err(LabError::SiteOutsideWindow(k));
        }
        let left = *boundary
            .get(&(window.lo - 1))
            .ok_or(LabError::MissingBoundary(window.lo - 1))?;
        let right = *boundary
            .get(&(window.hi + 1))
            .ok_or(LabError::MissingBoundary(window.hi + 1))?;
        Self::new(window, s, left, right)
    }

    pub fn window(&self) -> Window {
        self.window
    }

    fn index(&self, i: i64) -> Result<usize> {
        if i < self.window.lo - 1 || i > self.window.hi + 1 {
            return Err(LabError::SiteOutsideWindow(i));
        }
        Ok((i - self.window.lo + 1) as usize)
    }

    /// Spin or boundary value at site `i` of `Λ ∪ ∂Λ`.
    pub fn value(&self, i: i64) -> Result<GroupElement> {
        Ok(self.values[self.index(i)?])
    }

    pub fn spin(&self, i: i64) -> Result<GroupElement> {
        if !self.window.contains(i) {
            return Err(LabError::SiteOutsideWindow(i));
        }
        self.value(i)
    }

    pub fn set_spin(&mut self, i: i64, x: GroupElement) -> Result<()> {
        if !self.window.contains(i) {
            return Err(LabError::SiteOutsideWindow(i));
        }
        let k = self.index(i)?;
        self.values[k] = x;
        Ok(())
    }

    pub fn spins(&self) -> &[GroupElement] {
        &self.values[1..self.values.len() - 1]
    }

    pub fn left_boundary(&self) -> GroupElement {
        self.values[0]
    }

    pub fn right_boundary(&self) -> GroupElement {
        self.values[self.values.len() - 1]
    }

    /// Same spins and boundary on a translated window.
    pub fn shifted(&self, offset: i64) -> Self {
        Self {
            window: Window {
                lo: self.window.lo + offset,
                hi: self.window.hi + offset,
            },
            values: self.values.clone(),
        }
    }

    pub fn radii(&self) -> Result<Radii> {
        let r = self
            .values
            .iter()
            .map(cc_distance)
            .collect::<Result<Vec<_>>>()?;
        Ok(Radii {
            window: self.window,
            r,
        })
    }
}

/// Distances `d(x_i)` over `Λ ∪ ∂Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Radii {
    window: Window,
    r: Vec<f64>,
}

impl Radii {
    pub fn new(window: Window, spins: Vec<f64>, left: f64, right: f64) -> Result<Self> {
        if spins.len() != window.len() {
            return Err(LabError::InvalidParameter(
                "radius count does not match window".into(),
            ));
        }
        let mut r = Vec::with_capacity(spins.len() + 2);
        r.push(left);
        r.extend(spins);
        r.push(right);
        if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(LabError::InvalidParameter(
                "radii must be finite and non-negative".into(),
            ));
        }
        Ok(Self { window, r })
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn get(&self, i: i64) -> f64 {
        self.r[(i - self.window.lo + 1) as usize]
    }

    pub fn try_get(&self, i: i64) -> Result<f64> {
        if i < self.window.lo - 1 || i > self.window.hi + 1 {
            return Err(LabError::SiteOutsideWindow(i));
        }
        Ok(self.get(i))
    }

    pub fn set(&mut self, i: i64, v: f64) {
        let k = (i - self.window.lo + 1) as usize;
        self.r[k] = v;
    }

    pub fn left(&self) -> f64 {
        self.r[0]
    }

    pub fn right(&self) -> f64 {
        self.r[self.r.len() - 1]
    }

    pub fn boundary_max(&self) -> f64 {
        self.left().max(self.right())
    }

    /// One-site context of site `i`.
    pub fn context(&self, i: i64) -> SiteContext {
        SiteContext {
            left: self.get(i - 1),
            right: self.get(i + 1),
        }
    }

    /// `H^{M,·}` for a set `M` of window sites: phases of `M` plus every
    /// bond with at least one end in `M`, each counted once.
    pub fn block_energy(&self, spec: &ModelSpec, block: &[i64]) -> f64 {
        let mut e = 0.0;
        for &i in block {
            let ri = self.get(i);
            e += spec.phase(ri) + spec.bond(ri, self.get(i + 1));
            if !block.contains(&(i - 1)) {
                e += spec.bond(self.get(i - 1), ri);
            }
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HamiltonianValue {
    pub total: f64,
    pub per_site_phase: Vec<f64>,
    /// Bonds `(i, i+1)` touching the sites, left to right.
    pub per_bond_interaction: Vec<f64>,
}

fn check_block(window: Window, sites: &[i64]) -> Result<Vec<i64>> {
    let mut b = sites.to_vec();
    b.sort_unstable();
    b.dedup();
    if let Some(&k) = b.iter().find(|k| !window.contains(**k)) {
        return Err(LabError::SiteOutsideWindow(k));
    }
    Ok(b)
}

/// `H^{Λ,ω}` on the whole window.
pub fn hamiltonian(cfg: &LatticeConfig, spec: &ModelSpec) -> Result<HamiltonianValue> {
    let sites: Vec<i64> = cfg.window().sites().collect();
    hamiltonian_on(cfg, spec, &sites)
}

/// `H^{M,·}` for `M ⊂ Λ`, with spins outside `M` acting as boundary.
pub fn hamiltonian_on(
    cfg: &LatticeConfig,
    spec: &ModelSpec,
    sites: &[i64],
) -> Result<HamiltonianValue> {
    let block = check_block(cfg.window(), sites)?;
    let radii = cfg.radii()?;
    let per_site_phase: Vec<f64> = block.iter().map(|&i| spec.phase(radii.get(i))).collect();
    let mut bonds: Vec<i64> = Vec::new();
    for &i in &block {
        if bonds.last() != Some(&(i - 1)) {
            bonds.push(i - 1);
        }
        bonds.push(i);
    }
    let per_bond_interaction: Vec<f64> = bonds
        .iter()
        .map(|&k| spec.bond(radii.get(k), radii.get(k + 1)))
        .collect();
    let total = per_site_phase.iter().sum::<f64>() + per_bond_interaction.iter().sum::<f64>();
    if !total.is_finite() {
        return Err(LabError::NonFinite(format!("Hamiltonian {total}")));
    }
    Ok(HamiltonianValue {
        total,
        per_site_phase,
        per_bond_interaction,
    })
}

/// `∇_i H^{i,ω}` by the chain rule `F′(d) ∇d`, `F` the one-site energy.
/// On the centre axis the gradient is only defined when `F′(d) = 0`.
pub fn grad_hamiltonian_site(
    cfg: &LatticeConfig,
    spec: &ModelSpec,
    i: i64,
    h: Option<f64>,
) -> Result<HorizontalVector> {
    let x = cfg.spin(i)?;
    let radii = cfg.radii()?;
    let ctx = radii.context(i);
    let r = radii.get(i);
    let fp = spec.site_energy_derivative(ctx.left, r, ctx.right);
    let field = distance_field();
    let h = h.unwrap_or_else(|| crate::heis::default_step(&x));
    if field.check_point(&x, h).is_err() {
        if fp == 0.0 {
            return Ok(HorizontalVector { v1: 0.0, v2: 0.0 });
        }
        return Err(LabError::SingularPoint {
            point: x,
            distance: x.horizontal_norm(),
            what: "gradient of the one-site Hamiltonian on the centre axis",
        });
    }
    Ok(sub_gradient(&field, &x, h)?.scale(fp))
}

/// Finite-difference version of [`grad_hamiltonian_site`].
pub fn grad_hamiltonian_site_fd(
    cfg: &LatticeConfig,
    spec: &ModelSpec,
    i: i64,
    h: Option<f64>,
) -> Result<HorizontalVector> {
    let x = cfg.spin(i)?;
    let ctx = cfg.radii()?.context(i);
    let spec = *spec;
    let field = ScalarField::new(
        "site-energy",
        Smoothness::SmoothOffAxis,
        move |y: &GroupElement| {
            cc_distance(y)
                .map(|r| spec.site_energy(ctx.left, r, ctx.right))
                .unwrap_or(f64::NAN)
        },
    );
    let h = h.unwrap_or_else(|| crate::heis::default_step(&x));
    sub_gradient(&field, &x, h)
}

/// Neighbour radii seen by one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteContext {
    pub left: f64,
    pub right: f64,
}

impl SiteContext {
    pub fn new(left: f64, right: f64) -> Self {
        Self { left, right }
    }
}

/// The radial density `r ↦ e^{−H(r)} r³` of one site.
#[derive(Debug, Clone, Copy)]
pub struct RadialWeight {
    spec: ModelSpec,
    ctx: SiteContext,
}

pub fn radial_weight(spec: &ModelSpec, ctx: SiteContext) -> RadialWeight {
    RadialWeight { spec: *spec, ctx }
}

impl RadialWeight {
    pub fn energy(&self, r: f64) -> f64 {
        self.spec.site_energy(self.ctx.left, r, self.ctx.right)
    }

    pub fn log_density(&self, r: f64) -> f64 {
        if r == 0.0 {
            f64::NEG_INFINITY
        } else {
            3.0 * r.ln() - self.energy(r)
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.log_density(r).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadParams {
    pub rel_tol: f64,
    /// Truncation: the density beyond `r_max` stays below `tail · peak`.
    pub tail: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            tail: 1e-16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadEstimate {
    pub value: f64,
    pub rel_error: f64,
    pub r_max: f64,
}

/// `∫ g(r) e^{−H(r)} r³ dr / ∫ e^{−H(r)} r³ dr` by adaptive quadrature.
pub fn one_site_expectation<G: Fn(f64) -> f64>(
    spec: &ModelSpec,
    ctx: SiteContext,
    g: G,
    quad: &QuadParams,
) -> Result<QuadEstimate> {
    let w = radial_weight(spec, ctx);
    let trunc = truncation_radius(|r| w.log_density(r), quad.tail)?;
    let shift = trunc.log_peak;
    let dens = |r: f64| (w.log_density(r) - shift).exp();
    let r_max = trunc.r_max;
    let z = integrate_adaptive(dens, 0.0, r_max, quad.rel_tol, 0.0)?;
    let n = integrate_adaptive(
        |r| g(r) * dens(r),
        0.0,
        r_max,
        quad.rel_tol,
        quad.rel_tol * z.value,
    )?;
    // The tail of |g| e^{−H} r³ beyond r_max must be negligible as well.
    let tail = integrate_adaptive(|r| g(r).abs() * dens(r), r_max, 4.0 * r_max, 1e-6, 1e-300)?;
    let scale = n.value.abs().max(z.value * 1e-300);
    if tail.value > 1e-10 * scale.max(z.value) {
        return Err(LabError::Quadrature(format!(
            "tail mass {:e} beyond r_max = {r_max} exceeds tolerance",
            tail.value / scale.max(z.value)
        )));
    }
    let value = n.value / z.value;
    let rel_error = z.error / z.value + n.error / n.value.abs().max(z.value * 1e-12);
    if !value.is_finite() {
        return Err(LabError::NonFinite(format!("one-site expectation {value}")));
    }
    Ok(QuadEstimate {
        value,
        rel_error,
        r_max,
    })
}

fn check_support(f: &CylinderFn, window: Window) -> Result<()> {
    if let Some(&k) = f
        .support()
        .iter()
        .find(|k| **k < window.lo - 1 || **k > window.hi + 1)
    {
        return Err(LabError::SiteOutsideWindow(k));
    }
    Ok(())
}

/// `E^{i,ω} f` for a radial cylinder function, with all other sites frozen at
/// their values in `cfg`.
pub fn one_site_conditional_expectation(
    f: &CylinderFn,
    cfg: &LatticeConfig,
    spec: &ModelSpec,
    i: i64,
    quad: &QuadParams,
) -> Result<QuadEstimate> {
    if !cfg.window().contains(i) {
        return Err(LabError::SiteOutsideWindow(i));
    }
    check_support(f, cfg.window())?;
    let radii = cfg.radii()?;
    let ctx = radii.context(i);
    one_site_expectation(
        spec,
        ctx,
        |r| f.eval(&|k: i64| if k == i { r } else { radii.get(k) }),
        quad,
    )
}

/// A radius beyond which every window site is negligible, whatever the
/// other sites do inside the same range: a fixed point of the one-site
/// truncation radius over neighbour radii in `{0, R}`.
pub fn radial_cutoff(spec: &ModelSpec, neighbour_max: f64, tail: f64) -> Result<f64> {
    let mut big = neighbour_max.max(1.0);
    for _ in 0..30 {
        let mut next: f64 = 0.0;
        for (a, b) in [(0.0, 0.0), (0.0, big), (big, 0.0), (big, big)] {
            let w = radial_weight(spec, SiteContext::new(a, b));
            next = next.max(truncation_radius(|r| w.log_density(r), tail)?.r_max);
        }
        if next <= big * 1.0001 {
            return Ok(next.max(neighbour_max.min(big)));
        }
        big = next;
    }
    Err(LabError::Quadrature(format!(
        "no self-consistent cutoff for {} (reached {big})",
        spec.name()
    )))
}

/// Radial grid shared by all sites: Gauss–Legendre nodes on `(0, r_max)`
/// with log-weights `log(w_k r_k³)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialGrid {
    pub r_max: f64,
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridParams {
    pub panels: usize,
    pub order: usize,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            panels: 8,
            order: 12,
        }
    }
}

impl GridParams {
    pub fn new(panels: usize, order: usize) -> Result<Self> {
        if panels == 0 || order == 0 {
            return Err(LabError::InvalidParameter(
                "grid needs at least one panel and one node".into(),
            ));
        }
        Ok(Self { panels, order })
    }

    pub fn n_nodes(&self) -> usize {
        self.panels * self.order
    }
}

impl RadialGrid {
    pub fn new(r_max: f64, params: GridParams) -> Result<Self> {
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(LabError::InvalidParameter(format!("grid radius {r_max}")));
        }
        let rule = composite_rule(0.0, r_max, params.panels, params.order);
        Ok(Self {
            r_max,
            nodes: rule.iter().map(|p| p.0).collect(),
            log_weights: rule.iter().map(|p| p.1.ln() + 3.0 * p.0.ln()).collect(),
        })
    }

    /// Grid whose range covers every site of a window with the given frozen
    /// neighbours.
    pub fn for_spec(
        spec: &ModelSpec,
        neighbour_max: f64,
        params: GridParams,
        tail: f64,
    ) -> Result<Self> {
        Self::new(radial_cutoff(spec, neighbour_max, tail)?, params)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Running `Σ e^{l_k} v_k` kept as `e^{m} s` to avoid overflow.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSum {
    pub m: f64,
    pub s: f64,
}

impl LogSum {
    pub fn new() -> Self {
        Self {
            m: f64::NEG_INFINITY,
            s: 0.0,
        }
    }

    pub fn add(&mut self, log_w: f64, v: f64) {
        if log_w == f64::NEG_INFINITY {
            return;
        }
        if log_w > self.m {
            self.s = self.s * (self.m - log_w).exp() + v;
            self.m = log_w;
        } else {
            self.s += v * (log_w - self.m).exp();
        }
    }

    /// `self / other` for sums sharing no common scale.
    pub fn ratio(&self, other: &LogSum) -> f64 {
        self.s / other.s * (self.m - other.m).exp()
    }
}

/// Iterates over the tensor grid on `block`, calling `visit(radii, log_w)`
/// with the unnormalised log-weight `Σ log(w r³) − H^{block}`.
pub fn for_each_grid_point<F: FnMut(&Radii, f64)>(
    spec: &ModelSpec,
    base: &Radii,
    block: &[i64],
    grid: &RadialGrid,
    mut visit: F,
) {
    let n = grid.len();
    let mut radii = base.clone();
    let mut idx = vec![0usize; block.len()];
    if n == 0 {
        return;
    }
    loop {
        let mut lw = 0.0;
        for (k, &site) in block.iter().enumerate() {
            radii.set(site, grid.nodes[idx[k]]);
            lw += grid.log_weights[idx[k]];
        }
        lw -= radii.block_energy(spec, block);
        visit(&radii, lw);
        // odometer
        let mut k = 0;
        loop {
            if k == block.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `E^{block, ·} f` on a tensor grid, other sites frozen at `base`.
pub fn grid_expectation<F: Fn(&Radii) -> f64>(
    spec: &ModelSpec,
    base: &Radii,
    block: &[i64],
    grid: &RadialGrid,
    f: F,
) -> Result<f64> {
    let mut num = LogSum::new();
    let mut den = LogSum::new();
    for_each_grid_point(spec, base, block, grid, |r, lw| {
        num.add(lw, f(r));
        den.add(lw, 1.0);
    });
    let v = num.ratio(&den);
    if !v.is_finite() {
        return Err(LabError::NonFinite(format!(
            "grid expectation over {block:?}"
        )));
    }
    Ok(v)
}

/// `E^{Λ,ω} f` for a whole window (at most a few sites) on a tensor grid.
pub fn window_expectation(
    spec: &ModelSpec,
    cfg: &LatticeConfig,
    f: &CylinderFn,
    params: GridParams,
    tail: f64,
) -> Result<f64> {
    check_support(f, cfg.window())?;
    let base = cfg.radii()?;
    let grid = RadialGrid::for_spec(spec, base.boundary_max(), params, tail)?;
    let block: Vec<i64> = cfg.window().sites().collect();
    grid_expectation(spec, &base, &block, &grid, |r| f.eval(&|k| r.get(k)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DlrReport {
    pub window: Window,
    pub inner: Vec<i64>,
    /// `E^{Λ,ω}(E^{M,·} f)`.
    pub nested: f64,
    /// `E^{Λ,ω} f`.
    pub direct: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Maximum window size for the tensor-grid checks.
pub const MAX_TENSOR_SITES: usize = 3;

/// DLR consistency `E^{Λ,ω} E^{M,·} f = E^{Λ,ω} f`. The outer expectation
/// uses a tensor grid; the inner one is computed independently (adaptive
/// quadrature for one site, a separate grid otherwise).
pub fn dlr_check(
    spec: &ModelSpec,
    cfg: &LatticeConfig,
    inner: &[i64],
    f: &CylinderFn,
    tolerance: f64,
    params: GridParams,
) -> Result<DlrReport> {
    let window = cfg.window();
    if window.len() > MAX_TENSOR_SITES {
        return Err(LabError::Unsupported(format!(
            "DLR check limited to {MAX_TENSOR_SITES} sites (window has {})",
            window.len()
        )));
    }
    let inner = check_block(window, inner)?;
    if inner.is_empty() {
        return Err(LabError::InvalidParameter("inner block M is empty".into()));
    }
    check_support(f, window)?;
    let tail = QuadParams::default().tail;
    let base = cfg.radii()?;
    let grid = RadialGrid::for_spec(spec, base.boundary_max(), params, tail)?;
    let outer: Vec<i64> = window.sites().filter(|i| !inner.contains(i)).collect();
    let all: Vec<i64> = window.sites().collect();
    let inner_params = GridParams::new(params.panels + 3, params.order + 2)?;
    let inner_grid = RadialGrid::for_spec(
        spec,
        base.boundary_max().max(grid.r_max),
        inner_params,
        tail,
    )?;
    let quad = QuadParams::default();
    let eval = |r: &Radii| f.eval(&|k| r.get(k));

    let mut nested = LogSum::new();
    let mut direct = LogSum::new();
    let mut mass = LogSum::new();
    let mut failure: Option<LabError> = None;
    for_each_grid_point(spec, &base, &outer, &grid, |outer_r, _| {
        if failure.is_some() {
            return;
        }
        // inner conditional expectation, independent quadrature
        let g = if inner.len() == 1 {
            let i = inner[0];
            one_site_expectation(
                spec,
                outer_r.context(i),
                |x| {
                    let mut rr = outer_r.clone();
                    rr.set(i, x);
                    eval(&rr)
                },
                &quad,
            )
            .map(|q| q.value)
        } else {
            grid_expectation(spec, outer_r, &inner, &inner_grid, eval)
        };
        let g = match g {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                return;
            }
        };
        // the Λ-measure summed over the inner coordinates on the outer grid
        let mut outer_w = 0.0;
        for &k in &outer {
            let idx = grid
                .nodes
                .iter()
                .position(|&x| x == outer_r.get(k))
                .expect("outer radius is a grid node");
            outer_w += grid.log_weights[idx];
        }
        for_each_grid_point(spec, outer_r, &inner, &grid, |full, lw_inner| {
            // lw_inner only carries H^{M}; add the outer part of H^{Λ}
            let lw = outer_w + lw_inner
                - (full.block_energy(spec, &all) - full.block_energy(spec, &inner));
            nested.add(lw, g);
            direct.add(lw, eval(full));
            mass.add(lw, 1.0);
        });
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let nested = nested.ratio(&mass);
    let direct = direct.ratio(&mass);
    let difference = (nested - direct).abs();
    Ok(DlrReport {
        window,
        inner,
        nested,
        direct,
        difference,
        tolerance,
        passed: difference <= tolerance,
    })
}

/// Lebesgue volume of the unit CC ball, by quadrature over the boundary
/// profile `|x₃| ≤ t(|z|)` parametrised by the geodesic angle `u ∈ (0, π)`:
/// `|z| = sin u / u`, `t = (2u − sin 2u) / (8u²)`.
pub fn unit_ball_volume() -> f64 {
    let integrand = |u: f64| {
        if u == 0.0 {
            return 0.0;
        }
        let r = u.sin() / u;
        let t = crate::metric::x_minus_sin(2.0 * u) / (8.0 * u * u);
        let dr = (u * u.cos() - u.sin()) / (u * u);
        4.0 * std::f64::consts::PI * r * t * dr.abs()
    };
    integrate_adaptive(integrand, 0.0, std::f64::consts::PI, 1e-13, 0.0)
        .expect("smooth integrand on a compact interval")
        .value
}

/// Constant `σ` with `∫ g(d(x)) dx = σ ∫ g(r) r³ dr`.
pub fn radial_jacobian() -> f64 {
    4.0 * unit_ball_volume()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HStarReport {
    pub l: f64,
    /// `B*(L)`: inverse of the smallest `∫_{B_L⊗B_L} e^{−H^{{∼i},ω}}`.
    pub b_upper: f64,
    /// `B_*(L)`: `exp(max H^{{∼i},ω})` over `B_L ⊗ B_L` and the ω grid.
    pub b_lower: f64,
    pub min_integral: f64,
    pub max_energy: f64,
    pub boundary_grid: usize,
}

/// Evaluates both constants of hypothesis (H*) for the pair `{i−1, i+1}`
/// with boundary radii `d(ω_j) ∈ [0, L]`, `j ∈ {i−2, i, i+2}`, on an
/// `n_boundary`-point grid per boundary site.
pub fn hstar_diagnostic(spec: &ModelSpec, l: f64, n_boundary: usize) -> Result<HStarReport> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(LabError::InvalidParameter(format!(
            "L must be positive (got {l})"
        )));
    }
    let n = n_boundary.max(2);
    let levels: Vec<f64> = (0..n).map(|k| l * k as f64 / (n - 1) as f64).collect();
    let sigma = radial_jacobian();
    let scan = 400;
    // per-site quantities depend only on the two neighbour radii
    let mut integral = vec![vec![0.0; n]; n];
    let mut max_e = vec![vec![0.0; n]; n];
    for (a, &ra) in levels.iter().enumerate() {
        for (b, &rb) in levels.iter().enumerate() {
            let w = radial_weight(spec, SiteContext::new(ra, rb));
            integral[a][b] = sigma * integrate_adaptive(|r| w.eval(r), 0.0, l, 1e-10, 0.0)?.value;
            max_e[a][b] = (0..=scan)
                .map(|k| w.energy(l * k as f64 / scan as f64))
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let mut min_integral = f64::INFINITY;
    let mut max_energy = f64::NEG_INFINITY;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                min_integral = min_integral.min(integral[a][b] * integral[b][c]);
                max_energy = max_energy.max(max_e[a][b] + max_e[b][c]);
            }
        }
    }
    let b_upper = 1.0 / min_integral;
    let b_lower = max_energy.exp();
    if !(b_upper.is_finite() && b_lower.is_finite() && b_upper > 0.0) {
        return Err(LabError::NonFinite(format!("(H*) constants at L = {l}")));
    }
    Ok(HStarReport {
        l,
        b_upper,
        b_lower,
        min_integral,
        max_energy,
        boundary_grid: n,
    })
}

/// Inverse-CDF sampler for the one-site radial law `∝ e^{−H(r)} r³ dr`.
#[derive(Debug, Clone)]
pub struct RadialSampler {
    r: Vec<f64>,
    cdf: Vec<f64>,
}

impl RadialSampler {
    pub fn new(spec: &ModelSpec, ctx: SiteContext) -> Result<Self> {
        let w = radial_weight(spec, ctx);
        let t = truncation_radius(|r| w.log_density(r), 1e-16)?;
        // Simpson on each cell of a fine uniform grid.
        let n = 1 << 14;
        let r: Vec<f64> = (0..=n).map(|k| t.r_max * k as f64 / n as f64).collect();
        let dens = |x: f64| (w.log_density(x) - t.log_peak).exp();
        let mut cdf = vec![0.0; n + 1];
        for k in 0..n {
            let (a, b) = (r[k], r[k + 1]);
            let cell = (b - a) / 6.0 * (dens(a) + 4.0 * dens(0.5 * (a + b)) + dens(b));
            cdf[k + 1] = cdf[k] + cell;
        }
        let total = cdf[n];
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self { r, cdf })
    }

    pub fn r_max(&self) -> f64 {
        *self.r.last().expect("non-empty grid")
    }

    /// Radius with CDF value `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self
            .cdf
            .partition_point(|&c| c <= u)
            .clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.r[k - 1] + t * (self.r[k] - self.r[k - 1])
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}
