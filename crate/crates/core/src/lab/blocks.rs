//! Sweeping-out dynamics `P = E^{Γ₁} E^{Γ₀}` on a finite window.
//!
//! Functions of the spins are stored as tables over a shared radial grid,
//! one axis per site they depend on. A one-site conditional expectation
//! contracts the site's axis against its kernel and adds axes for its window
//! neighbours. The limit `E^{Λ,ω} f` is obtained by transfer-matrix
//! elimination, on the same grid and on an independent finer one.

use serde::Serialize;

use crate::cylinder::CylinderFn;
use crate::error::{LabError, Result};
use crate::model::{GridParams, LatticeConfig, ModelSpec, RadialGrid, Window};
use crate::stats::linear_fit;

/// Largest window handled by the block dynamics.
pub const MAX_BLOCK_SITES: usize = 7;

#[derive(Debug, Clone, PartialEq)]
struct Table {
    /// Sites in increasing order.
    axes: Vec<i64>,
    n: usize,
    data: Vec<f64>,
}

impl Table {
    fn scalar(v: f64, n: usize) -> Self {
        Self {
            axes: Vec::new(),
            n,
            data: vec![v],
        }
    }

    fn strides(axes: &[i64], n: usize) -> Vec<usize> {
        let mut s = vec![1; axes.len()];
        for k in (0..axes.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * n;
        }
        s
    }

    fn from_fn(f: &CylinderFn, grid: &RadialGrid) -> Self {
        let axes: Vec<i64> = f.support().into_iter().collect();
        let n = grid.len();
        let size = n.pow(axes.len() as u32);
        let mut data = Vec::with_capacity(size);
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..size {
            let v = f.eval(&|site: i64| {
                let k = axes
                    .iter()
                    .position(|&a| a == site)
                    .expect("site in support");
                grid.nodes[idx[k]]
            });
            data.push(v);
            for k in (0..axes.len()).rev() {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self { axes, n, data }
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Kernel `K[l][r][e]` of one site: `l`, `r` index the left and right
/// neighbours when they are table axes (otherwise the dimension is 1).
struct Kernel {
    ll: usize,
    lr: usize,
    n: usize,
    data: Vec<f64>,
}

impl Kernel {
    fn at(&self, l: usize, r: usize) -> &[f64] {
        debug_assert!(l < self.ll && r < self.lr);
        let off = (l * self.lr + r) * self.n;
        &self.data[off..off + self.n]
    }
}

/// Normalised one-site conditional kernel of site `k` given its neighbours.
fn conditional_kernel(
    spec: &ModelSpec,
    grid: &RadialGrid,
    window: Window,
    left_b: f64,
    right_b: f64,
    k: i64,
) -> Kernel {
    let n = grid.len();
    let left_axis = window.contains(k - 1);
    let right_axis = window.contains(k + 1);
    let ll = if left_axis { n } else { 1 };
    let lr = if right_axis { n } else { 1 };
    let mut data = Vec::with_capacity(ll * lr * n);
    let mut logs = vec![0.0; n];
    for l in 0..ll {
        let rl = if left_axis { grid.nodes[l] } else { left_b };
        for r in 0..lr {
            let rr = if right_axis { grid.nodes[r] } else { right_b };
            let mut m = f64::NEG_INFINITY;
            for ((v, &lw), &x) in logs.iter_mut().zip(&grid.log_weights).zip(&grid.nodes) {
                *v = lw - spec.site_energy(rl, x, rr);
                m = m.max(*v);
            }
            let z: f64 = logs.iter().map(|v| (v - m).exp()).sum();
            data.extend(logs.iter().map(|v| (v - m).exp() / z));
        }
    }
    Kernel { ll, lr, n, data }
}

/// Contracts axis `site` of `t` against `kernel`, adding the neighbour axes
/// flagged in `with_left` / `with_right`.
fn integrate_site(
    t: &Table,
    site: i64,
    kernel: &Kernel,
    with_left: bool,
    with_right: bool,
) -> Table {
    let n = t.n;
    let Some(pos) = t.axes.iter().position(|&a| a == site) else {
        // the function does not depend on this site, but the neighbours
        // may still enter through an unnormalised kernel
        let mut t2 = t.clone();
        t2.axes.push(site);
        t2.axes.sort_unstable();
        let p = t2
            .axes
            .iter()
            .position(|&a| a == site)
            .expect("just inserted");
        let old_strides = Table::strides(&t.axes, n);
        let mut data = Vec::with_capacity(t.data.len() * n);
        let new_strides = Table::strides(&t2.axes, n);
        let size = t.data.len() * n;
        for flat in 0..size {
            let mut rem = flat;
            let mut off = 0;
            for (k, &s) in new_strides.iter().enumerate() {
                let i = rem / s;
                rem %= s;
                if k != p {
                    let ok = if k < p { k } else { k - 1 };
                    off += i * old_strides[ok];
                }
            }
            data.push(t.data[off]);
        }
        t2.data = data;
        return integrate_site(&t2, site, kernel, with_left, with_right);
    };
    let mut axes: Vec<i64> = t.axes.iter().copied().filter(|&a| a != site).collect();
    if with_left && !axes.contains(&(site - 1)) {
        axes.push(site - 1);
    }
    if with_right && !axes.contains(&(site + 1)) {
        axes.push(site + 1);
    }
    axes.sort_unstable();
    let old_strides = Table::strides(&t.axes, n);
    let stride_e = old_strides[pos];
    // for each new axis: its stride in the old table (0 if absent)
    let map: Vec<usize> = axes
        .iter()
        .map(|a| {
            t.axes
                .iter()
                .position(|b| b == a)
                .map_or(0, |k| old_strides[k])
        })
        .collect();
    let lpos = if with_left {
        axes.iter().position(|&a| a == site - 1)
    } else {
        None
    };
    let rpos = if with_right {
        axes.iter().position(|&a| a == site + 1)
    } else {
        None
    };
    let size = n.pow(axes.len() as u32);
    let mut data = vec![0.0; size];
    let mut idx = vec![0usize; axes.len()];
    for (flat, out) in data.iter_mut().enumerate() {
        if flat > 0 {
            for k in (0..axes.len()).rev() {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
            }
        }
        let base: usize = idx.iter().zip(&map).map(|(i, s)| i * s).sum();
        let l = lpos.map_or(0, |p| idx[p]);
        let r = rpos.map_or(0, |p| idx[p]);
        let k = kernel.at(l, r);
        let mut acc = 0.0;
        for (e, ke) in k.iter().enumerate() {
            acc += ke * t.data[base + e * stride_e];
        }
        *out = acc;
    }
    Table { axes, n, data }
}

struct Dynamics {
    window: Window,
    kernels: Vec<Kernel>,
}

impl Dynamics {
    fn kernel(&self, site: i64) -> &Kernel {
        &self.kernels[(site - self.window.lo) as usize]
    }

    /// `E^{Γ_c}` for colour `c`.
    fn condition_out(&self, t: &Table, colour: i64) -> Table {
        let mut cur = t.clone();
        for site in self.window.color(colour) {
            if cur.axes.contains(&site) {
                let w = self.window;
                cur = integrate_site(
                    &cur,
                    site,
                    self.kernel(site),
                    w.contains(site - 1),
                    w.contains(site + 1),
                );
            }
        }
        cur
    }
}

/// `E^{Λ,ω} f` on a grid by left-to-right transfer-matrix elimination.
fn transfer_mean(
    spec: &ModelSpec,
    window: Window,
    left_b: f64,
    right_b: f64,
    grid: &RadialGrid,
    f: &CylinderFn,
) -> f64 {
    let n = grid.len();
    let eliminate = |t: Table, site: i64| -> (Table, f64) {
        let right_axis = window.contains(site + 1);
        let lr = if right_axis { n } else { 1 };
        let mut data = Vec::with_capacity(lr * n);
        for r in 0..lr {
            let rr = if right_axis { grid.nodes[r] } else { right_b };
            for e in 0..n {
                let re = grid.nodes[e];
                let mut h = spec.phase(re) + spec.bond(re, rr);
                if site == window.lo {
                    h += spec.bond(left_b, re);
                }
                data.push((grid.log_weights[e] - h).exp());
            }
        }
        let k = Kernel { ll: 1, lr, n, data };
        let mut out = integrate_site(&t, site, &k, false, right_axis);
        let m = out.max_abs();
        if m > 0.0 {
            out.data.iter_mut().for_each(|v| *v /= m);
            (out, m.ln())
        } else {
            (out, 0.0)
        }
    };
    let mut num = Table::from_fn(f, grid);
    let mut den = Table::scalar(1.0, n);
    let (mut log_num, mut log_den) = (0.0, 0.0);
    for site in window.sites() {
        let (t, s) = eliminate(num, site);
        num = t;
        log_num += s;
        let (t, s) = eliminate(den, site);
        den = t;
        log_den += s;
    }
    num.data[0] / den.data[0] * (log_num - log_den).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockDynamicsRun {
    pub window: Window,
    pub spec: ModelSpec,
    pub function: String,
    pub grid: GridParams,
    pub r_max: f64,
    /// `E^{Λ,ω} f` on the iteration grid.
    pub target: f64,
    /// `E^{Λ,ω} f` on an independent finer grid.
    pub target_independent: f64,
    pub resolution_ok: bool,
    /// `sup |Pⁿf − target|` over the grid, `n = 0, 1, …`.
    pub residuals: Vec<f64>,
    /// `sup |Pⁿf − target_independent|`.
    pub residuals_independent: Vec<f64>,
    /// Table sizes of the iterates.
    pub iterate_sizes: Vec<usize>,
    /// Per-iterate contraction factor fitted on the last (up to five)
    /// residuals above round-off.
    pub geometric_rate: Option<f64>,
    pub monotone_after_first: bool,
    pub positivity_preserved: bool,
}

pub fn block_dynamics_iterate(
    spec: &ModelSpec,
    cfg: &LatticeConfig,
    f: &CylinderFn,
    n_max: usize,
    params: GridParams,
) -> Result<BlockDynamicsRun> {
    let window = cfg.window();
    if window.len() > MAX_BLOCK_SITES {
        return Err(LabError::Unsupported(format!(
            "block dynamics limited to {MAX_BLOCK_SITES} sites (window has {})",
            window.len()
        )));
    }
    if let Some(&k) = f.support().iter().find(|k| !window.contains(**k)) {
        return Err(LabError::SiteOutsideWindow(k));
    }
    let radii = cfg.radii()?;
    let (lb, rb) = (radii.left(), radii.right());
    let tail = 1e-16;
    let grid = RadialGrid::for_spec(spec, radii.boundary_max(), params, tail)?;
    let fine = GridParams::new(params.panels + 2, params.order + 4)?;
    let grid_fine = RadialGrid::new(grid.r_max, fine)?;
    let target = transfer_mean(spec, window, lb, rb, &grid, f);
    let target_independent = transfer_mean(spec, window, lb, rb, &grid_fine, f);
    let resolution_ok =
        (target - target_independent).abs() <= 1e-6 * target_independent.abs().max(1.0);

    let dyn_ = Dynamics {
        window,
        kernels: window
            .sites()
            .map(|k| conditional_kernel(spec, &grid, window, lb, rb, k))
            .collect(),
    };
    let mut t = Table::from_fn(f, &grid);
    let positive_start = t.data.iter().all(|&v| v > 0.0);
    let mut positivity_preserved = true;
    let sup = |t: &Table, c: f64| t.data.iter().fold(0.0f64, |m, v| m.max((v - c).abs()));
    let mut residuals = vec![sup(&t, target)];
    let mut residuals_independent = vec![sup(&t, target_independent)];
    let mut iterate_sizes = vec![t.data.len()];
    for _ in 0..n_max {
        t = dyn_.condition_out(&t, 0);
        t = dyn_.condition_out(&t, 1);
        if positive_start && t.data.iter().any(|&v| !(v > 0.0)) {
            positivity_preserved = false;
        }
        residuals.push(sup(&t, target));
        residuals_independent.push(sup(&t, target_independent));
        iterate_sizes.push(t.data.len());
    }
    let floor = 1e-12 * target.abs().max(1.0);
    let above: Vec<(f64, f64)> = residuals
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, r)| **r > floor)
        .map(|(k, r)| (k as f64, r.ln()))
        .collect();
    let geometric_rate = (above.len() >= 3).then(|| {
        let tail = &above[above.len().saturating_sub(5)..];
        let (x, y): (Vec<f64>, Vec<f64>) = tail.iter().copied().unzip();
        linear_fit(&x, &y).0.exp()
    });
    let monotone_after_first = residuals[1..]
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12) || w[1] <= floor);
    Ok(BlockDynamicsRun {
        window,
        spec: *spec,
        function: f.to_string(),
        grid: params,
        r_max: grid.r_max,
        target,
        target_independent,
        resolution_ok,
        residuals,
        residuals_independent,
        iterate_sizes,
        geometric_rate,
        monotone_after_first,
        positivity_preserved,
    })
}
