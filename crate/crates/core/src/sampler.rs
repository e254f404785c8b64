//! Metropolis sampling of `E^{Λ,ω}` with quenched boundary.
//!
//! Proposals perturb the spin in coordinates, Gaussian with standard
//! deviation `σ` in `x₁, x₂` and `σ²` in `x₃`, matching the dilation
//! structure. The proposal is symmetric, so the Metropolis rule alone gives
//! detailed balance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cylinder::CylinderFn;
use crate::error::{LabError, Result};
use crate::heis::GroupElement;
use crate::metric::cc_distance;
use crate::model::{LatticeConfig, ModelSpec, Radii};
use crate::stats::{batch_means, integrated_autocorrelation_time, Estimate, EstimateMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Sequential,
    /// Even sites (`Γ₀`) first, then odd sites (`Γ₁`).
    Checkerboard,
}

impl Schedule {
    pub fn order(&self, lo: i64, hi: i64) -> Vec<i64> {
        match self {
            Schedule::Sequential => (lo..=hi).collect(),
            Schedule::Checkerboard => (lo..=hi)
                .filter(|i| i.rem_euclid(2) == 0)
                .chain((lo..=hi).filter(|i| i.rem_euclid(2) == 1))
                .collect(),
        }
    }
}

/// `min(1, e^{−ΔH})`.
pub fn acceptance_probability(delta_h: f64) -> f64 {
    if delta_h <= 0.0 {
        1.0
    } else {
        (-delta_h).exp()
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    cfg: LatticeConfig,
    radii: Radii,
    rng: ChaCha8Rng,
    pub step_count: u64,
    accepted: Vec<u64>,
    proposed: Vec<u64>,
}

impl ChainState {
    pub fn new(cfg: LatticeConfig, seed: u64) -> Result<Self> {
        let radii = cfg.radii()?;
        let n = cfg.window().len();
        Ok(Self {
            cfg,
            radii,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step_count: 0,
            accepted: vec![0; n],
            proposed: vec![0; n],
        })
    }

    pub fn config(&self) -> &LatticeConfig {
        &self.cfg
    }

    pub fn radii(&self) -> &Radii {
        &self.radii
    }

    pub fn acceptance_rate(&self) -> f64 {
        let a: u64 = self.accepted.iter().sum();
        let p: u64 = self.proposed.iter().sum();
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }

    pub fn site_acceptance(&self) -> Vec<f64> {
        self.accepted
            .iter()
            .zip(&self.proposed)
            .map(|(&a, &p)| if p == 0 { 0.0 } else { a as f64 / p as f64 })
            .collect()
    }

    pub fn reset_statistics(&mut self) {
        self.accepted.iter_mut().for_each(|a| *a = 0);
        self.proposed.iter_mut().for_each(|p| *p = 0);
    }
}

/// One Metropolis update of site `i`. Returns whether the move was accepted.
pub fn metropolis_site_update(
    state: &mut ChainState,
    spec: &ModelSpec,
    i: i64,
    scale: f64,
) -> Result<bool> {
    let window = state.cfg.window();
    if !window.contains(i) {
        return Err(LabError::SiteOutsideWindow(i));
    }
    let x = state.cfg.spin(i)?;
    let g: [f64; 3] = [
        state.rng.sample(StandardNormal),
        state.rng.sample(StandardNormal),
        state.rng.sample(StandardNormal),
    ];
    let u: f64 = state.rng.random();
    let y = GroupElement::new(
        x.x1 + scale * g[0],
        x.x2 + scale * g[1],
        x.x3 + scale * scale * g[2],
    );
    let ctx = state.radii.context(i);
    let r_old = state.radii.get(i);
    let r_new = cc_distance(&y)?;
    let dh =
        spec.site_energy(ctx.left, r_new, ctx.right) - spec.site_energy(ctx.left, r_old, ctx.right);
    let k = (i - window.lo) as usize;
    state.proposed[k] += 1;
    state.step_count += 1;
    if u < acceptance_probability(dh) {
        state.cfg.set_spin(i, y)?;
        state.radii.set(i, r_new);
        state.accepted[k] += 1;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// One update per site in schedule order.
pub fn sweep(
    state: &mut ChainState,
    spec: &ModelSpec,
    schedule: Schedule,
    scale: f64,
) -> Result<()> {
    let w = state.cfg.window();
    for i in schedule.order(w.lo, w.hi) {
        metropolis_site_update(state, spec, i, scale)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcParams {
    /// Recorded sweeps after burn-in.
    pub n_sweeps: usize,
    /// Burn-in sweeps; `None` uses ten integrated autocorrelation times of
    /// `d(x_i)` measured on a pilot run.
    pub burn_in: Option<usize>,
    pub seed: u64,
    /// Proposal scale; `None` tunes it so the acceptance lands in `[0.2, 0.5]`.
    pub scale: Option<f64>,
    pub schedule: Schedule,
    pub n_batches: usize,
}

impl McmcParams {
    pub fn new(n_sweeps: usize, seed: u64) -> Self {
        Self {
            n_sweeps,
            burn_in: None,
            seed,
            scale: None,
            schedule: Schedule::Checkerboard,
            n_batches: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McmcReport {
    pub estimate: Estimate,
    pub acceptance_rate: f64,
    pub proposal_scale: f64,
    pub burn_in: usize,
    pub tau_int: f64,
    pub window_len: usize,
}

/// Tunes the proposal scale on a throw-away copy of the chain.
pub fn tune_scale(state: &ChainState, spec: &ModelSpec, schedule: Schedule) -> Result<f64> {
    let mut probe = state.clone();
    let mut scale: f64 = 0.8;
    for _ in 0..40 {
        probe.reset_statistics();
        for _ in 0..400 {
            sweep(&mut probe, spec, schedule, scale)?;
        }
        let acc = probe.acceptance_rate();
        if (0.25..=0.45).contains(&acc) {
            return Ok(scale);
        }
        scale *= ((acc - 0.35) * 3.0).exp();
    }
    Ok(scale)
}

fn mean_radius(r: &Radii) -> f64 {
    let w = r.window();
    w.sites().map(|i| r.get(i)).sum::<f64>() / w.len() as f64
}

/// Runs one chain and returns the recorded series of `f`.
fn run_chain(
    spec: &ModelSpec,
    cfg: &LatticeConfig,
    f: &CylinderFn,
    params: &McmcParams,
) -> Result<(Vec<f64>, f64, f64, usize)> {
    if params.burn_in.is_some_and(|b| b >= params.n_sweeps) {
        return Err(LabError::InvalidParameter(format!(
            "burn-in {} must be smaller than n = {}",
            params.burn_in.unwrap_or(0),
            params.n_sweeps
        )));
    }
    if let Some(&k) = f
        .support()
        .iter()
        .find(|k| !(cfg.window().lo - 1..=cfg.window().hi + 1).contains(*k))
    {
        return Err(LabError::SiteOutsideWindow(k));
    }
    let mut state = ChainState::new(cfg.clone(), params.seed)?;
    let scale = match params.scale {
        Some(s) => s,
        None => tune_scale(&state, spec, params.schedule)?,
    };
    let burn_in = match params.burn_in {
        Some(b) => b,
        None => {
            let pilot_len = 4000.min(params.n_sweeps).max(100);
            let mut pilot = Vec::with_capacity(pilot_len);
            for _ in 0..pilot_len {
                sweep(&mut state, spec, params.schedule, scale)?;
                pilot.push(mean_radius(&state.radii));
            }
            let tau = integrated_autocorrelation_time(&pilot);
            (10.0 * tau).ceil() as usize
        }
    };
    for _ in 0..burn_in {
        sweep(&mut state, spec, params.schedule, scale)?;
    }
    state.reset_statistics();
    let mut series = Vec::with_capacity(params.n_sweeps);
    for _ in 0..params.n_sweeps {
        sweep(&mut state, spec, params.schedule, scale)?;
        let radii = &state.radii;
        let v = f.eval(&|k| radii.get(k));
        if !v.is_finite() {
            return Err(LabError::NonFinite(format!(
                "f = {v} at configuration {:?} after {} steps",
                state.cfg.spins(),
                state.step_count
            )));
        }
        series.push(v);
    }
    Ok((series, state.acceptance_rate(), scale, burn_in))
}

/// MCMC estimate of `E^{Λ,ω} f` with batch-means error bars.
pub fn estimate_expectation(
    spec: &ModelSpec,
    cfg: &LatticeConfig,
    f: &CylinderFn,
    params: &McmcParams,
) -> Result<McmcReport> {
    if params.n_sweeps < 2 {
        return Err(LabError::InvalidParameter(
            "need at least two recorded sweeps".into(),
        ));
    }
    let (series, acc, scale, burn_in) = run_chain(spec, cfg, f, params)?;
    let (value, stderr) = batch_means(&series, params.n_batches);
    let tau_int = integrated_autocorrelation_time(&series);
    Ok(McmcReport {
        estimate: Estimate {
            value,
            stderr,
            n_samples: series.len(),
            seed: params.seed,
            method: EstimateMethod::Mcmc,
        },
        acceptance_rate: acc,
        proposal_scale: scale,
        burn_in,
        tau_int,
        window_len: cfg.window().len(),
    })
}

/// Seed of chain `k` in a multi-chain run.
pub fn chain_seed(seed: u64, k: usize) -> u64 {
    seed ^ k as u64
}

/// Pools independent estimates of the same quantity: equal-weight mean, and
/// errors added in quadrature.
pub fn merge_estimates(parts: &[Estimate]) -> Option<Estimate> {
    let first = parts.first()?;
    let k = parts.len() as f64;
    Some(Estimate {
        value: parts.iter().map(|e| e.value).sum::<f64>() / k,
        stderr: parts
            .iter()
            .map(|e| e.stderr * e.stderr)
            .sum::<f64>()
            .sqrt()
            / k,
        n_samples: parts.iter().map(|e| e.n_samples).sum(),
        seed: first.seed,
        method: first.method,
    })
}

/// Runs `n_chains` independent chains in parallel (seeds `seed ⊕ k`) and
/// pools them. Results do not depend on the thread count.
pub fn estimate_expectation_chains(
    spec: &ModelSpec,
    cfg: &LatticeConfig,
    f: &CylinderFn,
    params: &McmcParams,
    n_chains: usize,
) -> Result<(Estimate, Vec<McmcReport>)> {
    let reports = (0..n_chains.max(1))
        .into_par_iter()
        .map(|k| {
            let mut p = *params;
            p.seed = chain_seed(params.seed, k);
            estimate_expectation(spec, cfg, f, &p)
        })
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<Estimate> = reports.iter().map(|r| r.estimate).collect();
    let mut pooled = merge_estimates(&parts).expect("at least one chain");
    pooled.seed = params.seed;
    Ok((pooled, reports))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpMomentReport {
    /// Estimate of `E e^{εg}`; infinite when it overflows.
    pub estimate: Estimate,
    /// `log E e^{εg}`, finite even when the moment itself overflows.
    pub log_value: f64,
    /// Share of the sum carried by the largest 0.1% of samples.
    pub top_share: f64,
    pub heavy_tail: bool,
    pub overflow: bool,
}

/// Exponential moment `E^{Λ,ω} e^{εg}`, accumulated in log space.
pub fn exp_moment_estimate(
    spec: &ModelSpec,
    cfg: &LatticeConfig,
    g: &CylinderFn,
    eps: f64,
    params: &McmcParams,
) -> Result<ExpMomentReport> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(LabError::InvalidParameter(format!(
            "epsilon must be positive (got {eps})"
        )));
    }
    let (series, _, _, _) = run_chain(spec, cfg, g, params)?;
    let logs: Vec<f64> = series.iter().map(|v| eps * v).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let (mean_scaled, se_scaled) = batch_means(&scaled, params.n_batches);
    let log_value = m + mean_scaled.ln();
    let factor = m.exp();
    let overflow = !factor.is_finite() || !(factor * mean_scaled).is_finite();
    let mut sorted = scaled.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = sorted.len().div_ceil(1000);
    let total: f64 = sorted.iter().sum();
    let top_share = sorted[..top].iter().sum::<f64>() / total;
    let (value, stderr) = if overflow {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (factor * mean_scaled, factor * se_scaled)
    };
    Ok(ExpMomentReport {
        estimate: Estimate {
            value,
            stderr,
            n_samples: series.len(),
            seed: params.seed,
            method: EstimateMethod::Mcmc,
        },
        log_value,
        top_share,
        heavy_tail: top_share > 0.5,
        overflow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{one_site_expectation, QuadParams, SiteContext, Window};

    fn single(spec_boundary: GroupElement) -> LatticeConfig {
        LatticeConfig::new(
            Window::single(0),
            vec![GroupElement::new(0.5, 0.2, 0.1)],
            spec_boundary,
            spec_boundary,
        )
        .unwrap()
    }

    #[test]
    fn schedules() {
        assert_eq!(
            Schedule::Sequential.order(0, 0),
            Schedule::Checkerboard.order(0, 0)
        );
        let mut c = Schedule::Checkerboard.order(-2, 3);
        assert_eq!(c, vec![-2, 0, 2, -1, 1, 3]);
        c.sort();
        assert_eq!(c, Schedule::Sequential.order(-2, 3));
    }

    #[test]
    fn zero_scale_leaves_state_unchanged() {
        let spec = ModelSpec::mu_p(1.0, 2.0).unwrap();
        let mut st = ChainState::new(single(GroupElement::IDENTITY), 1).unwrap();
        let before = st.config().clone();
        for _ in 0..100 {
            assert!(metropolis_site_update(&mut st, &spec, 0, 0.0).unwrap());
        }
        assert_eq!(st.config(), &before);
        assert_eq!(acceptance_probability(0.0), 1.0);
    }

    #[test]
    fn bitwise_determinism() {
        let spec = ModelSpec::example1(1.5, 0.1).unwrap();
        let cfg = single(GroupElement::new(1.0, 0.0, 0.0));
        let f = CylinderFn::distance(0);
        let p = McmcParams::new(2000, 99);
        let a = estimate_expectation(&spec, &cfg, &f, &p).unwrap();
        let b = estimate_expectation(&spec, &cfg, &f, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let spec = ModelSpec::mu_p(1.0, 2.0).unwrap();
        let r = estimate_expectation(
            &spec,
            &single(GroupElement::IDENTITY),
            &CylinderFn::constant(3.0),
            &McmcParams::new(1000, 4),
        )
        .unwrap();
        assert_eq!((r.estimate.value, r.estimate.stderr), (3.0, 0.0));
    }

    #[test]
    fn tuned_acceptance_in_band() {
        for spec in [
            ModelSpec::mu_p(1.0, 2.0).unwrap(),
            ModelSpec::example2(1.5, 0.1, 2.0).unwrap(),
        ] {
            let r = estimate_expectation(
                &spec,
                &single(GroupElement::IDENTITY),
                &CylinderFn::distance(0),
                &McmcParams::new(20_000, 5),
            )
            .unwrap();
            assert!(
                (0.2..=0.5).contains(&r.acceptance_rate),
                "{}",
                r.acceptance_rate
            );
        }
    }

    #[test]
    fn one_site_mean_matches_quadrature() {
        let spec = ModelSpec::mu_p(1.0, 2.0).unwrap();
        let r = estimate_expectation(
            &spec,
            &single(GroupElement::IDENTITY),
            &CylinderFn::distance(0),
            &McmcParams::new(200_000, 11),
        )
        .unwrap();
        let exact = 0.75 * std::f64::consts::PI.sqrt();
        assert!(r.estimate.z_score(exact, 0.0) < 3.0, "{r:?}");
    }

    /// Chi-square test of `N(a→b) = N(b→a)` on radius bins of a one-site chain.
    #[test]
    #[allow(clippy::needless_range_loop)]
    fn detailed_balance_on_binned_states() {
        let spec = ModelSpec::mu_p(1.0, 2.0).unwrap();
        let mut st = ChainState::new(single(GroupElement::IDENTITY), 21).unwrap();
        let bins = 8;
        let bin = |r: f64| ((r / 0.45) as usize).min(bins - 1);
        let mut counts = vec![vec![0u64; bins]; bins];
        for _ in 0..2000 {
            metropolis_site_update(&mut st, &spec, 0, 0.9).unwrap();
        }
        let mut prev = bin(st.radii().get(0));
        for _ in 0..400_000 {
            metropolis_site_update(&mut st, &spec, 0, 0.9).unwrap();
            let b = bin(st.radii().get(0));
            counts[prev][b] += 1;
            prev = b;
        }
        let (mut chi2, mut dof) = (0.0, 0usize);
        for a in 0..bins {
            for b in a + 1..bins {
                let (x, y) = (counts[a][b] as f64, counts[b][a] as f64);
                if x + y >= 20.0 {
                    chi2 += (x - y).powi(2) / (x + y);
                    dof += 1;
                }
            }
        }
        // Wilson–Hilferty 99% quantile; the chain's serial correlation
        // inflates the variance slightly, so allow a factor 2.
        let k = dof as f64;
        let z = 2.326;
        let q99 = k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3);
        assert!(dof >= 5 && chi2 < 2.0 * q99, "chi2 = {chi2}, dof = {dof}");
    }

    /// Sites of one colour are conditionally independent given the other
    /// colour: the law of x₋₁ given x₀ does not see x₁.
    #[test]
    fn within_colour_independence() {
        let spec = ModelSpec::example1(1.5, 0.1).unwrap();
        let w = Window::new(-1, 1).unwrap();
        let x0 = GroupElement::new(1.0, 0.5, 0.2);
        let b = GroupElement::new(0.7, 0.0, 0.0);
        let mut means = Vec::new();
        for x1 in [
            GroupElement::new(0.1, 0.0, 0.0),
            GroupElement::new(3.0, 1.0, 2.0),
        ] {
            let cfg = LatticeConfig::new(w, vec![GroupElement::new(0.3, 0.3, 0.0), x0, x1], b, b)
                .unwrap();
            let mut st = ChainState::new(cfg, 8).unwrap();
            let mut xs = Vec::new();
            for k in 0..220_000 {
                metropolis_site_update(&mut st, &spec, -1, 1.0).unwrap();
                if k >= 20_000 {
                    xs.push(st.radii().get(-1));
                }
            }
            means.push(batch_means(&xs, 50));
        }
        let se = (means[0].1.powi(2) + means[1].1.powi(2)).sqrt();
        assert!((means[0].0 - means[1].0).abs() < 3.0 * se, "{means:?}");
        let ctx = SiteContext::new(0.7, cc_distance(&x0).unwrap());
        let exact = one_site_expectation(&spec, ctx, |r| r, &QuadParams::default())
            .unwrap()
            .value;
        assert!((means[0].0 - exact).abs() < 3.0 * means[0].1);
    }

    #[test]
    fn exp_moment_edge_cases() {
        let spec = ModelSpec::mu_p(1.0, 2.0).unwrap();
        let cfg = single(GroupElement::IDENTITY);
        let r = exp_moment_estimate(
            &spec,
            &cfg,
            &CylinderFn::constant(0.0),
            1.0,
            &McmcParams::new(1000, 3),
        )
        .unwrap();
        assert_eq!(r.estimate.value, 1.0);
        assert!(!r.heavy_tail);
        assert!(exp_moment_estimate(
            &spec,
            &cfg,
            &CylinderFn::distance(0),
            0.0,
            &McmcParams::new(1000, 3)
        )
        .is_err());
        // e^{2000 d} overflows but stays a report
        let r = exp_moment_estimate(
            &spec,
            &cfg,
            &CylinderFn::distance(0),
            2000.0,
            &McmcParams::new(2000, 3),
        )
        .unwrap();
        assert!(r.overflow && r.log_value.is_finite());
    }

    #[test]
    fn chains_merge_independently_of_threads() {
        let spec = ModelSpec::mu_p(1.0, 2.0).unwrap();
        let cfg = single(GroupElement::IDENTITY);
        let f = CylinderFn::distance(0);
        let p = McmcParams::new(3000, 17);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let (a, _) = one
            .install(|| estimate_expectation_chains(&spec, &cfg, &f, &p, 4))
            .unwrap();
        let (b, _) = estimate_expectation_chains(&spec, &cfg, &f, &p, 4).unwrap();
        assert_eq!(a, b);
    }
}
