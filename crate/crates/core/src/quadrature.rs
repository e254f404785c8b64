//! One-dimensional quadrature: Gauss–Legendre rules, adaptive Gauss–Kronrod
//! (7/15 points) and truncation of rapidly decaying radial integrands.

use crate::error::{LabError, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on `[a, b]`: `panels` equal panels of
/// `order` nodes each. Returned as `(node, weight)` pairs in increasing order.
pub fn composite_rule(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let width = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let half = 0.5 * width;
        let mid = lo + half;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((mid + half * xi, half * wi));
        }
    }
    out
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Globally adaptive Gauss–Kronrod integration: the interval with the largest
/// error estimate is bisected until the total estimate drops below
/// `max(abs_tol, rel_tol |I|)`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    const MAX_INTERVALS: usize = 2000;
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    let mut parts: Vec<(f64, f64, f64, f64)> = Vec::new();
    // Start from a few panels so narrow peaks are not missed.
    let start = 4;
    let w = (b - a) / start as f64;
    for k in 0..start {
        let lo = a + k as f64 * w;
        let hi = if k + 1 == start { b } else { lo + w };
        let (v, e) = kronrod15(&f, lo, hi);
        parts.push((lo, hi, v, e));
    }
    loop {
        let value: f64 = parts.iter().map(|p| p.2).sum();
        let error: f64 = parts.iter().map(|p| p.3).sum();
        if !value.is_finite() {
            return Err(LabError::Quadrature(format!(
                "non-finite integral on [{a}, {b}]"
            )));
        }
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(QuadResult {
                value,
                error,
                intervals: parts.len(),
            });
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(LabError::Quadrature(format!(
                "adaptive quadrature on [{a}, {b}] stalled at error {error:e} (value {value:e})"
            )));
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod15(&f, lo, mid);
        let (v2, e2) = kronrod15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Truncation window for a radial integrand given through its logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub r_max: f64,
    /// Location and value of the largest sampled log-integrand.
    pub r_peak: f64,
    pub log_peak: f64,
}

/// Finds `r_max` such that the integrand `exp(log_f(r))` has dropped below
/// `rel · peak` for every `r ≥ r_max` on a doubling scan, i.e. the
/// integrand tail beyond `r_max` is negligible at relative level `rel`.
pub fn truncation_radius<L: Fn(f64) -> f64>(log_f: L, rel: f64) -> Result<Truncation> {
    let cut = rel.ln();
    // Coarse outward doubling until we are well past the bulk.
    let mut r_hi = 1.0;
    let mut best = (0.0, f64::NEG_INFINITY);
    for _ in 0..200 {
        let steps = 64;
        for k in 1..=steps {
            let r = r_hi * k as f64 / steps as f64;
            let v = log_f(r);
            if v.is_nan() {
                return Err(LabError::Quadrature(format!(
                    "log-integrand is NaN at r = {r}"
                )));
            }
            if v > best.1 {
                best = (r, v);
            }
        }
        let edge = log_f(r_hi);
        let beyond = log_f(2.0 * r_hi);
        if edge < best.1 + cut && beyond < edge {
            break;
        }
        r_hi *= 2.0;
        if !r_hi.is_finite() || r_hi > 1e12 {
            return Err(LabError::Quadrature("integrand does not decay".into()));
        }
    }
    // Tighten: find the last crossing of the threshold below r_hi.
    let (mut lo, mut hi) = (best.0, r_hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if log_f(mid) >= best.1 + cut {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Truncation {
        r_max: hi.max(best.0),
        r_peak: best.0,
        log_peak: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 12, 33] {
            let (x, w) = gauss_legendre(n);
            let total: f64 = w.iter().sum();
            assert!((total - 2.0).abs() < 1e-13, "n={n}");
            let deg = 2 * n - 1;
            let approx: f64 = x
                .iter()
                .zip(&w)
                .map(|(xi, wi)| wi * xi.powi(deg as i32 - 1))
                .sum();
            let exact = if (deg - 1) % 2 == 0 {
                2.0 / deg as f64
            } else {
                0.0
            };
            assert!((approx - exact).abs() < 1e-13, "n={n}: {approx} vs {exact}");
        }
    }

    #[test]
    fn composite_rule_covers_interval() {
        let rule = composite_rule(0.0, 3.0, 4, 6);
        let total: f64 = rule.iter().map(|p| p.1).sum();
        assert!((total - 3.0).abs() < 1e-13);
        assert!(rule.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn adaptive_matches_closed_forms() {
        let r = integrate_adaptive(|x| x.exp(), 0.0, 1.0, 1e-12, 0.0).unwrap();
        assert!((r.value - (1f64.exp() - 1.0)).abs() < 1e-13);
        // Γ(4) = 6
        let r = integrate_adaptive(|x| x.powi(3) * (-x).exp(), 0.0, 60.0, 1e-12, 0.0).unwrap();
        assert!((r.value - 6.0).abs() < 1e-10);
        // a sqrt singularity at the endpoint
        let r = integrate_adaptive(|x| x.sqrt(), 0.0, 1.0, 1e-10, 0.0).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn truncation_captures_the_mass() {
        let t = truncation_radius(|r: f64| 3.0 * r.ln() - r * r, 1e-16).unwrap();
        assert!(t.r_max > 5.0 && t.r_max < 12.0, "{t:?}");
        assert!((t.r_peak - 1.5f64.sqrt()).abs() < 0.05);
    }

    #[test]
    fn truncation_rejects_growth() {
        assert!(truncation_radius(|r: f64| r, 1e-16).is_err());
    }
}
