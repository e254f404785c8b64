//! Acceptance suite: one line per criterion, non-zero exit on any failure.
//!
//! Run with `cargo test -p heislab-core --test acceptance`; pass criterion
//! numbers as arguments to run a subset.

use std::time::{Duration, Instant};

use heislab::cylinder::CylinderFn;
use heislab::heis::{
    cd_condition_probe, cd_sample_grid, cd_trial_family, dilate, group_inv, group_mul, GroupElement,
};
use heislab::lab::blocks::block_dynamics_iterate;
use heislab::lab::functionals::{
    one_site_functionals, sg_from_ls_relation_check, SampleMeasure, TwoPointMeasure,
};
use heislab::lab::telescope::entropy_telescoping_check;
use heislab::lab::ubound::{
    grad_dot_check, ubound_integral_check, ubound_pointwise_check, CloudParams,
};
use heislab::metric::{
    ball_volume, cc_distance, cc_distance_pair, check_eikonal, estimate_k0, geodesic_point,
    sample_at_distance, GeodesicParams,
};
use heislab::model::{
    dlr_check, window_expectation, GridParams, LatticeConfig, ModelSpec, SiteContext, Window,
};
use heislab::sampler::{estimate_expectation_chains, McmcParams};
use heislab::stats::linear_fit;
use heislab::ScalarField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rel_diff(a: &GroupElement, b: &GroupElement) -> f64 {
    let scale = a
        .to_array()
        .iter()
        .chain(b.to_array().iter())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / scale
}

fn random_point(rng: &mut ChaCha8Rng, w: f64) -> GroupElement {
    GroupElement::new(
        rng.random_range(-w..w),
        rng.random_range(-w..w),
        rng.random_range(-w..w),
    )
}

/// Point at distance `r` whose horizontal part is at least `frac` of its gauge.
fn off_axis_point(rng: &mut ChaCha8Rng, r: f64, frac: f64) -> GroupElement {
    loop {
        let x = sample_at_distance(rng, r);
        if x.horizontal_norm() >= frac * x.gauge() {
            return x;
        }
    }
}

fn config(lo: i64, hi: i64, left: f64, right: f64) -> LatticeConfig {
    let w = Window::new(lo, hi).expect("window");
    let at = |r: f64| geodesic_point(&GeodesicParams::new(0.6, 0.4, r));
    let spins = w.sites().map(|k| at(1.0 + 0.1 * k as f64)).collect();
    LatticeConfig::new(w, spins, at(left), at(right)).expect("config")
}

fn families() -> Vec<ModelSpec> {
    vec![
        ModelSpec::mu_p(1.0, 2.0).unwrap(),
        ModelSpec::ip_quadratic(1.0, 2.0, 0.1, 0.5).unwrap(),
        ModelSpec::ip_power(1.0, 3.0, 0.1, 0.5, 2.0).unwrap(),
        ModelSpec::example1(1.5, 0.1).unwrap(),
        ModelSpec::example2(1.5, 0.1, 2.0).unwrap(),
    ]
}

fn c1_group_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e = GroupElement::IDENTITY;
    let (mut assoc, mut ident, mut inverse, mut dil) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let (a, b, c) = (
            random_point(&mut rng, 10.0),
            random_point(&mut rng, 10.0),
            random_point(&mut rng, 10.0),
        );
        assoc = assoc.max(rel_diff(
            &group_mul(&group_mul(&a, &b), &c),
            &group_mul(&a, &group_mul(&b, &c)),
        ));
        ident = ident
            .max(rel_diff(&group_mul(&e, &a), &a))
            .max(rel_diff(&group_mul(&a, &e), &a));
        inverse = inverse
            .max(rel_diff(&group_mul(&a, &group_inv(&a)), &e))
            .max(rel_diff(&group_mul(&group_inv(&a), &a), &e));
        let lambda = rng.random_range(0.1..10.0);
        let lhs = dilate(&group_mul(&a, &b), lambda).map_err(err)?;
        let rhs = group_mul(
            &dilate(&a, lambda).map_err(err)?,
            &dilate(&b, lambda).map_err(err)?,
        );
        dil = dil.max(rel_diff(&lhs, &rhs));
    }
    let worst = assoc.max(ident).max(inverse).max(dil);
    Ok((
        worst <= 1e-12,
        format!("assoc {assoc:.1e}, identity {ident:.1e}, inverse {inverse:.1e}, dilation {dil:.1e} (tol 1e-12)"),
    ))
}

fn c2_cc_metric() -> Outcome {
    let planar = (cc_distance(&GroupElement::new(3.0, 4.0, 0.0)).map_err(err)? - 5.0).abs();
    // full-turn helix reaching height 1: bisect on the curvature
    let height =
        |k: f64| geodesic_point(&GeodesicParams::new(k, 0.0, 2.0 * std::f64::consts::PI / k)).x3;
    let (mut lo, mut hi) = (0.1, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if height(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 2.0 * std::f64::consts::PI / (0.5 * (lo + hi));
    let axis = (cc_distance(&GroupElement::new(0.0, 0.0, 1.0)).map_err(err)? - oracle).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut homog, mut inv) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let a = random_point(&mut rng, 5.0);
        let lambda = rng.random_range(0.1..10.0);
        let d = cc_distance(&a).map_err(err)?;
        let dl = cc_distance(&dilate(&a, lambda).map_err(err)?).map_err(err)?;
        homog = homog.max((dl - lambda * d).abs() / (lambda * d));
        inv = inv.max((cc_distance(&group_inv(&a)).map_err(err)? - d).abs() / d.max(1.0));
    }
    let mut triangle = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let (a, b, c) = (
            random_point(&mut rng, 3.0),
            random_point(&mut rng, 3.0),
            random_point(&mut rng, 3.0),
        );
        let excess = cc_distance_pair(&a, &c).map_err(err)?
            - cc_distance_pair(&a, &b).map_err(err)?
            - cc_distance_pair(&b, &c).map_err(err)?;
        triangle = triangle.max(excess);
    }
    let ok = planar <= 1e-8 && axis <= 1e-6 && homog <= 1e-9 && inv <= 1e-9 && triangle <= 1e-9;
    Ok((
        ok,
        format!(
            "|d(3,4,0)-5| {planar:.1e}, |d(0,0,1)-oracle {oracle:.10}| {axis:.1e}, homogeneity {homog:.1e}, inversion {inv:.1e}, max triangle excess {triangle:.2e}"
        ),
    ))
}

fn c3_eikonal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<GroupElement> = (0..1000)
        .map(|_| {
            let r = rng.random_range(0.5..5.0);
            off_axis_point(&mut rng, r, 0.05)
        })
        .collect();
    let rep = check_eikonal(&pts, Some(1e-5)).map_err(err)?;
    Ok((
        rep.max_deviation <= 1e-3,
        format!(
            "max | |∇d| - 1 | = {:.2e} over {} points (h = 1e-5)",
            rep.max_deviation, rep.n_points
        ),
    ))
}

fn c4_k0() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cloud: Vec<GroupElement> = (0..2000)
        .map(|_| {
            let r = rng.random_range(0.5..3.0);
            off_axis_point(&mut rng, r, 0.1)
        })
        .collect();
    let small = estimate_k0(&cloud[..1000], None).map_err(err)?;
    let full = estimate_k0(&cloud, None).map_err(err)?;
    let finite = full.values.iter().all(|v| v.is_finite());
    let drift = (full.k0 - small.k0).abs() / small.k0.abs();
    let gd = grad_dot_check(&cloud, Some(full.k0), 1e-3).map_err(err)?;
    Ok((
        finite && drift <= 0.1 && gd.passed,
        format!(
            "K0 = {:.4} (1000 pts) vs {:.4} (2000 pts), drift {:.1}%; max |∇d|²+dΔd = {:.4} ≤ 1+K0",
            small.k0,
            full.k0,
            100.0 * drift,
            gd.max_value
        ),
    ))
}

fn c5_ball_volume() -> Outcome {
    let radii = [0.5, 1.0, 2.0, 4.0];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &r) in radii.iter().enumerate() {
        let est = ball_volume(r, 400_000, 50 + k as u64).map_err(err)?;
        xs.push(r.ln());
        ys.push(est.value.ln());
    }
    let (slope, intercept) = linear_fit(&xs, &ys);
    Ok((
        (slope - 4.0).abs() <= 0.05,
        format!("log-log slope {slope:.4}, Leb(B1) ≈ {:.4}", intercept.exp()),
    ))
}

fn c6_cd_probe() -> Outcome {
    let family = cd_trial_family();
    let grid = cd_sample_grid(2.0, 5);
    let mut parts = Vec::new();
    let mut ok = true;
    for rho in [-1e6, 0.0, 1e6] {
        let rep = cd_condition_probe(rho, &family, &grid).map_err(err)?;
        ok &= rep.violated();
        parts.push(format!(
            "ρ={rho:e}: min {:.3e} ({})",
            rep.min_value, rep.witness_field
        ));
    }
    Ok((ok, parts.join("; ")))
}

/// Window bounds, sub-blocks, functions.
type DlrCase = (i64, i64, Vec<Vec<i64>>, Vec<&'static str>);

fn c7_dlr() -> Outcome {
    let cases: Vec<DlrCase> = vec![
        (0, 0, vec![vec![0]], vec!["d0", "1+d0^2"]),
        (
            0,
            1,
            vec![vec![0], vec![1], vec![0, 1]],
            vec!["1+d0*d1", "d0^2+d1"],
        ),
        (
            0,
            2,
            vec![vec![1], vec![0, 2], vec![0, 1]],
            vec!["1+d0*d2", "d1^2+d0"],
        ),
    ];
    let mut worst = 0.0f64;
    let mut n = 0;
    let mut all = true;
    for spec in families() {
        for (lo, hi, inners, fs) in &cases {
            let cfg = config(*lo, *hi, 0.7, 1.6);
            for f in fs {
                let f: CylinderFn = f.parse().map_err(err)?;
                for m in inners {
                    let rep = dlr_check(
                        &spec,
                        &cfg,
                        m,
                        &f,
                        1e-6,
                        GridParams::new(6, 10).map_err(err)?,
                    )
                    .map_err(err)?;
                    worst = worst.max(rep.difference);
                    all &= rep.passed;
                    n += 1;
                }
            }
        }
    }
    Ok((
        all,
        format!("{n} (spec, Λ, M, f) cases, max |nested - direct| = {worst:.2e} (tol 1e-6)"),
    ))
}

fn c8_sampler() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let chains = 4;
    let one = (
        ModelSpec::mu_p(1.0, 2.0).unwrap(),
        config(0, 0, 0.0, 0.0),
        vec!["d0", "d0^2"],
    );
    let three = (
        ModelSpec::example1(1.5, 0.1).unwrap(),
        config(0, 2, 0.5, 2.0),
        vec!["d1", "d0*d2", "d0^2+d1"],
    );
    for (spec, cfg, fs) in [one, three] {
        let sites = cfg.window().len();
        // 10⁶ single-site updates per functional
        let sweeps = 1_000_000 / sites / chains;
        for f in fs {
            let f: CylinderFn = f.parse().map_err(err)?;
            let quad =
                window_expectation(&spec, &cfg, &f, GridParams::default(), 1e-16).map_err(err)?;
            let (est, _) =
                estimate_expectation_chains(&spec, &cfg, &f, &McmcParams::new(sweeps, 8), chains)
                    .map_err(err)?;
            let z = est.z_score(quad, 0.0);
            ok &= z <= 3.0;
            lines.push(format!("{}-site {f}: z = {z:.2}", sites));
        }
    }
    Ok((ok, lines.join(", ")))
}

fn c9_ubound_pointwise() -> Outcome {
    let mut specs = Vec::new();
    for s in [1.0, 1.5, 1.9] {
        for j in [0.01, 0.1] {
            specs.push(ModelSpec::example1(s, j).unwrap());
        }
    }
    for s in [1.0, 1.5] {
        specs.push(ModelSpec::example2(s, 0.1, 2.0).unwrap());
    }
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    let mut skipped = 0;
    for spec in &specs {
        let rep = ubound_pointwise_check(spec, &CloudParams::default()).map_err(err)?;
        ok &= rep.passed;
        worst = worst.max(rep.lhs_max_slack);
        skipped += rep.n_skipped_on_axis;
    }
    Ok((
        ok,
        format!(
            "{} specs × 1e5 points, max slack {worst:.3e}, on-axis skipped {skipped}",
            specs.len()
        ),
    ))
}

fn c10_ubound_integral() -> Outcome {
    let family: Vec<CylinderFn> = ["1", "d0", "d0^2", "1+d0^2"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let a_grid = [0.5, 1.0, 2.0, 4.0, 8.0];
    let ip = ModelSpec::ip_quadratic(1.0, 2.0, 0.1, 0.5).unwrap();
    let omegas = [[0.0, 0.0], [1.0, 0.5], [2.0, 2.0], [0.5, 3.0], [4.0, 1.0]];
    let rep =
        ubound_integral_check(&ip, &omegas, &family, &a_grid, Some((20_000, 11))).map_err(err)?;
    let (a1, b1) = rep.feasible_pair;
    let mut max_z = 0.0f64;
    let mut feasible = b1.is_finite();
    for row in &rep.rows {
        for t in &row.terms {
            let (mc, se) = t.weighted_mc.expect("mc requested");
            max_z = max_z.max((mc - t.weighted).abs() / se.max(1e-300));
            feasible &= mc - 3.0 * se <= a1 * t.gradient + b1 * t.mass;
        }
    }
    let ex2 = ModelSpec::example2(1.5, 0.1, 2.0).unwrap();
    let grow = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]];
    let rep2 = ubound_integral_check(&ex2, &grow, &family, &[a1], None).map_err(err)?;
    let floors: Vec<f64> = rep2.rows.iter().map(|r| r.b_floor[0]).collect();
    let sum_dp: Vec<f64> = rep2.rows.iter().map(|r| r.sum_dp).collect();
    let increasing = floors.windows(2).all(|w| w[1] > w[0]);
    let (slope, _) = linear_fit(&sum_dp, &floors);
    Ok((
        feasible && max_z <= 3.0 && increasing && slope > 0.0,
        format!(
            "ip_quadratic: (A1, B1) = ({a1}, {b1:.3}) across 5 ω, MC max z {max_z:.2}; Ex2 at A1 = {a1}: B1 floor {:?} vs Σd^p {:?}",
            floors.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>(),
            sum_dp
        ),
    ))
}

fn c11_telescoping() -> Outcome {
    let mut n = 0;
    let mut worst = 0.0f64;
    let mut ok = true;
    for spec in families() {
        for (lo, hi) in [(0, 1), (0, 2)] {
            let cfg = config(lo, hi, 0.8, 1.7);
            for f in ["1+d0", "1+d0*d1", "exp(0.3*d1^1)"] {
                let f: CylinderFn = f.parse().map_err(err)?;
                let rep =
                    entropy_telescoping_check(&spec, &cfg, &f, spec.q(), 1e-6).map_err(err)?;
                worst = worst.max(rep.difference / rep.lhs.abs().max(1.0));
                ok &= rep.passed;
                n += 1;
            }
        }
    }
    Ok((
        ok,
        format!("{n} cases, max scaled residual {worst:.2e} (tol 1e-6)"),
    ))
}

fn c12_block_dynamics() -> Outcome {
    let specs = [
        ModelSpec::example1(1.5, 0.02).unwrap(),
        ModelSpec::example2(1.5, 0.02, 2.0).unwrap(),
        ModelSpec::ip_quadratic(1.0, 2.0, 0.02, 0.5).unwrap(),
    ];
    let fs = ["d0", "1+d-1*d1", "d0^2+d2"];
    let params = GridParams::new(3, 12).map_err(err)?;
    let mut ok = true;
    let mut worst_n = 0;
    let mut lines = Vec::new();
    for spec in &specs {
        let cfg = config(-2, 2, 0.5, 2.0);
        for f in fs {
            let f: CylinderFn = f.parse().map_err(err)?;
            let run = block_dynamics_iterate(spec, &cfg, &f, 50, params).map_err(err)?;
            let hit = run.residuals_independent.iter().position(|r| *r < 1e-3);
            ok &= run.resolution_ok && hit.is_some() && run.positivity_preserved;
            worst_n = worst_n.max(hit.unwrap_or(usize::MAX));
        }
    }
    lines.push(format!("9 runs reach residual < 1e-3 by n = {worst_n}"));
    let free = ModelSpec::example1(1.5, 0.0).unwrap();
    let run = block_dynamics_iterate(
        &free,
        &config(-2, 2, 0.5, 2.0),
        &"d0+d1".parse().unwrap(),
        3,
        params,
    )
    .map_err(err)?;
    let machine = run.residuals[2] <= 1e-13 * run.target.abs().max(1.0);
    ok &= machine;
    lines.push(format!(
        "J = 0: residual at n = 2 is {:.1e}",
        run.residuals[2]
    ));
    Ok((ok, lines.join("; ")))
}

fn c13_ls_sg_relation() -> Outcome {
    let rep = sg_from_ls_relation_check(&[0.5, 0.3, 0.1, 0.999, 0.001], &[1.25, 1.5, 2.0])
        .map_err(err)?;
    let worst = rep
        .cases
        .iter()
        .map(|c| c.sg / (4.0 * c.ls / std::f64::consts::LN_2))
        .fold(0.0f64, f64::max);
    let bern = TwoPointMeasure::new(0.5).map_err(err)?;
    let ls = bern.optimal_ls(2.0).map_err(err)?.0;
    let sg = bern.optimal_sg(2.0).map_err(err)?;
    let exact = (ls - 0.5).abs() < 1e-6 && (sg - 0.25).abs() < 1e-12;
    Ok((
        rep.passed && exact,
        format!(
            "{} cases, max SG / (4 LS / ln 2) = {worst:.4}; symmetric Bernoulli LS = {ls:.6}, SG = {sg}",
            rep.cases.len()
        ),
    ))
}

fn c14_homogeneity() -> Outcome {
    let spec = ModelSpec::mu_p(1.0, 2.0).unwrap();
    let ctx = SiteContext::new(0.0, 0.0);
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    for q in [1.25, 1.5, 2.0] {
        for f in ["d0", "1+d0^2"] {
            let f: CylinderFn = f.parse().map_err(err)?;
            let base = one_site_functionals(&spec, ctx, &f, q).map_err(err)?;
            for lambda in [0.5, 2.0, 3.7] {
                let s =
                    one_site_functionals(&spec, ctx, &f.clone().scaled(lambda), q).map_err(err)?;
                let l = lambda.powf(q);
                worst = worst
                    .max(rel(s.entropy, l * base.entropy))
                    .max(rel(s.dirichlet, l * base.dirichlet))
                    .max(rel(s.variance_q, l * base.variance_q));
            }
        }
    }
    let measure = SampleMeasure::one_site(&spec, ctx, 20_000, 14).map_err(err)?;
    let d = |x: &GroupElement| cc_distance(x).unwrap_or(f64::NAN);
    let mut worst_mc = 0.0f64;
    for q in [1.5, 2.0] {
        let base = measure
            .functionals(
                &ScalarField::new("d", heislab::Smoothness::SmoothOffAxis, d),
                q,
                None,
            )
            .map_err(err)?;
        for lambda in [0.5, 3.7] {
            let g = ScalarField::new("λd", heislab::Smoothness::SmoothOffAxis, move |x| {
                lambda * d(x)
            });
            let s = measure.functionals(&g, q, None).map_err(err)?;
            let l = lambda.powf(q);
            worst_mc = worst_mc
                .max(rel(s.entropy, l * base.entropy))
                .max(rel(s.dirichlet, l * base.dirichlet))
                .max(rel(s.variance_q, l * base.variance_q));
        }
    }
    Ok((
        worst <= 1e-10 && worst_mc <= 1e-10,
        format!("max relative deviation from λ^q scaling: quadrature {worst:.1e}, empirical measure {worst_mc:.1e}"),
    ))
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "group algebra",
            budget: secs(1),
            run: c1_group_algebra,
        },
        Criterion {
            id: 2,
            name: "CC metric",
            budget: secs(30),
            run: c2_cc_metric,
        },
        Criterion {
            id: 3,
            name: "eikonal",
            budget: secs(10),
            run: c3_eikonal,
        },
        Criterion {
            id: 4,
            name: "sub-Laplacian bound",
            budget: secs(30),
            run: c4_k0,
        },
        Criterion {
            id: 5,
            name: "ball-volume exponent",
            budget: secs(60),
            run: c5_ball_volume,
        },
        Criterion {
            id: 6,
            name: "CD(ρ,∞) failure",
            budget: secs(10),
            run: c6_cd_probe,
        },
        Criterion {
            id: 7,
            name: "DLR consistency",
            budget: secs(60),
            run: c7_dlr,
        },
        Criterion {
            id: 8,
            name: "sampler vs quadrature",
            budget: secs(300),
            run: c8_sampler,
        },
        Criterion {
            id: 9,
            name: "U-bound pointwise",
            budget: secs(300),
            run: c9_ubound_pointwise,
        },
        Criterion {
            id: 10,
            name: "U-bound integral",
            budget: secs(600),
            run: c10_ubound_integral,
        },
        Criterion {
            id: 11,
            name: "entropy telescoping",
            budget: secs(300),
            run: c11_telescoping,
        },
        Criterion {
            id: 12,
            name: "block dynamics",
            budget: secs(600),
            run: c12_block_dynamics,
        },
        Criterion {
            id: 13,
            name: "LS/SG relation",
            budget: secs(10),
            run: c13_ls_sg_relation,
        },
        Criterion {
            id: 14,
            name: "functional homogeneity",
            budget: secs(60),
            run: c14_homogeneity,
        },
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failures = 0;
    for c in criteria
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let (passed, detail) = match outcome {
            Ok((p, d)) => (p, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_budget = elapsed <= c.budget;
        let status = if passed && in_budget { "PASS" } else { "FAIL" };
        let budget_note = if in_budget {
            String::new()
        } else {
            format!(" [over budget {:?}]", c.budget)
        };
        println!(
            "criterion {:>2} {status} {:<24} {:>7.2}s{budget_note}  {detail}",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
        if status == "FAIL" {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
