//! Splitting of `Ent_ν(f^q)` along the two colour classes.
//!
//! With `G = E^{Γ₀} f^q` and `ν = E^{Λ,ω}`,
//!
//! ```text
//! Ent_ν(f^q) = ν Ent_{E^{Γ₀}}(f^q) + ν Ent_{E^{Γ₁}}(G) + [ν(PF log PF) − νF log νF]
//! ```
//!
//! where `F = f^q` and `PF = E^{Γ₁} G`. Each conditional is evaluated on its
//! own radial grid, independent of the grid used for `ν`.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::Serialize;

use crate::cylinder::CylinderFn;
use crate::error::{LabError, Result};
use crate::model::{
    grid_expectation, GridParams, LatticeConfig, ModelSpec, RadialGrid, Radii, Window,
    MAX_TENSOR_SITES,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TelescopeTerms {
    /// `Ent_ν(f^q)`.
    pub entropy: f64,
    /// `ν Ent_{E^{Γ₀}}(f^q)`.
    pub even_term: f64,
    /// `ν Ent_{E^{Γ₁}}(E^{Γ₀} f^q)`.
    pub odd_term: f64,
    /// `ν(PF log PF) − νF log νF`.
    pub remainder: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelescopeReport {
    pub window: Window,
    pub function: String,
    pub q: f64,
    pub terms: TelescopeTerms,
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Memoised conditional expectation over one colour class; the result only
/// depends on the radii of the other class.
struct Conditional<'a> {
    spec: &'a ModelSpec,
    grid: RadialGrid,
    block: Vec<i64>,
    keys: Vec<i64>,
    memo: RefCell<HashMap<Vec<u64>, f64>>,
}

impl<'a> Conditional<'a> {
    fn new(spec: &'a ModelSpec, grid: RadialGrid, window: Window, colour: i64) -> Self {
        Self {
            spec,
            grid,
            block: window.color(colour),
            keys: window.color(1 - colour),
            memo: RefCell::new(HashMap::new()),
        }
    }

    fn eval<F: Fn(&Radii) -> f64>(&self, radii: &Radii, f: F) -> Result<f64> {
        let key: Vec<u64> = self.keys.iter().map(|&k| radii.get(k).to_bits()).collect();
        if let Some(v) = self.memo.borrow().get(&key) {
            return Ok(*v);
        }
        let v = grid_expectation(self.spec, radii, &self.block, &self.grid, f)?;
        self.memo.borrow_mut().insert(key, v);
        Ok(v)
    }
}

pub fn entropy_telescoping_check(
    spec: &ModelSpec,
    cfg: &LatticeConfig,
    f: &CylinderFn,
    q: f64,
    tol: f64,
) -> Result<TelescopeReport> {
    let window = cfg.window();
    if window.len() > MAX_TENSOR_SITES {
        return Err(LabError::Unsupported(format!(
            "telescoping check limited to {MAX_TENSOR_SITES} sites (window has {})",
            window.len()
        )));
    }
    if !(q > 1.0 && q <= 2.0) {
        return Err(LabError::InvalidParameter(format!(
            "q must lie in (1, 2], got {q}"
        )));
    }
    if let Some(&k) = f.support().iter().find(|k| !window.contains(**k)) {
        return Err(LabError::SiteOutsideWindow(k));
    }
    let radii = cfg.radii()?;
    let tail = 1e-16;
    let nmax = radii.boundary_max();
    let grid_nu = RadialGrid::for_spec(spec, nmax, GridParams::new(6, 10)?, tail)?;
    let grid0 = RadialGrid::for_spec(spec, nmax, GridParams::new(7, 11)?, tail)?;
    let grid1 = RadialGrid::for_spec(spec, nmax, GridParams::new(5, 13)?, tail)?;

    let big_f = |r: &Radii| {
        let v = f.eval(&|k| r.get(k));
        v.powf(q)
    };
    let check_positive = |r: &Radii| {
        let v = f.eval(&|k| r.get(k));
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(LabError::InvalidParameter(format!(
                "f must be positive, found {v}"
            )))
        }
    };

    let c0_flogf = Conditional::new(spec, grid0.clone(), window, 0);
    let c0_f = Conditional::new(spec, grid0, window, 0);
    let c1_glogg = Conditional::new(spec, grid1.clone(), window, 1);
    let c1_g = Conditional::new(spec, grid1, window, 1);

    let g = |r: &Radii| c0_f.eval(r, big_f);
    let inner_err = RefCell::new(None);
    let record = |res: Result<f64>| match res {
        Ok(v) => v,
        Err(e) => {
            inner_err.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };

    let block: Vec<i64> = window.sites().collect();
    let mut err = None;
    let mut sums = [0.0f64; 6];
    let mut z = 0.0;
    let mut fail = |e: LabError| {
        err.get_or_insert(e);
    };
    let mut points = Vec::new();
    crate::model::for_each_grid_point(spec, &radii, &block, &grid_nu, |r, lw| {
        points.push((r.clone(), lw))
    });
    let lw_max = points.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.1));
    for (r, lw) in &points {
        if let Err(e) = check_positive(r) {
            fail(e);
            break;
        }
        let w = (lw - lw_max).exp();
        let fv = big_f(r);
        let cond_flogf = record(c0_flogf.eval(r, |s| xlogx(big_f(s))));
        let gv = record(g(r));
        let cond_glogg = record(c1_glogg.eval(r, |s| xlogx(record(g(s)))));
        let pf = record(c1_g.eval(r, |s| record(g(s))));
        z += w;
        sums[0] += w * fv;
        sums[1] += w * xlogx(fv);
        sums[2] += w * (cond_flogf - xlogx(gv));
        sums[3] += w * (cond_glogg - xlogx(pf));
        sums[4] += w * xlogx(pf);
        sums[5] += w * pf;
    }
    if let Some(e) = err.or_else(|| inner_err.borrow_mut().take()) {
        return Err(e);
    }
    let [nf, nflogf, even, odd, npf_log, _npf] = sums.map(|s| s / z);
    let terms = TelescopeTerms {
        entropy: nflogf - xlogx(nf),
        even_term: even,
        odd_term: odd,
        remainder: npf_log - xlogx(nf),
    };
    let lhs = terms.entropy;
    let rhs = terms.even_term + terms.odd_term + terms.remainder;
    let difference = (lhs - rhs).abs();
    let tolerance = tol * lhs.abs().max(1.0);
    let finite = [lhs, rhs].iter().all(|v| v.is_finite());
    if !finite {
        return Err(LabError::NonFinite(format!(
            "telescoping terms lhs {lhs}, rhs {rhs}"
        )));
    }
    Ok(TelescopeReport {
        window,
        function: f.to_string(),
        q,
        terms,
        lhs,
        rhs,
        difference,
        tolerance,
        passed: difference <= tolerance,
    })
}
