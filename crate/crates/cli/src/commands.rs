use std::fmt;

use heislab::cylinder::CylinderFn;
use heislab::heis::{cd_condition_probe, cd_sample_grid, cd_trial_family};
use heislab::lab::blocks::block_dynamics_iterate;
use heislab::lab::functionals::{default_family, ls_ratio_scan, sg_ratio_scan, SampleMeasure};
use heislab::lab::telescope::entropy_telescoping_check;
use heislab::lab::ubound::{
    grad_dot_check, ubound_integral_check, ubound_pointwise_check, CloudParams,
};
use heislab::metric::{
    ball_volume, cc_distance, cc_distance_pair, check_eikonal, estimate_k0, sample_at_distance,
};
use heislab::model::{window_expectation, GridParams, LatticeConfig, ModelSpec, SiteContext};
use heislab::sampler::{
    estimate_expectation_chains, exp_moment_estimate, sweep, tune_scale, ChainState, McmcParams,
    Schedule,
};
use heislab::stats::linear_fit;
use heislab::{GroupElement, LabError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::ModelFile;
use crate::report::{num, Report, Verdict};
use crate::*;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration: exit 2.
    Usage(String),
    /// The computation itself failed: exit 1.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::RootFinding(_) | LabError::Quadrature(_) | LabError::NonFinite(_) => {
                CliError::Failure(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn cylinder(s: &str) -> Result<CylinderFn> {
    s.parse()
        .map_err(|e| CliError::Usage(format!("function `{s}`: {e}")))
}

fn load(arg: &ModelArg) -> Result<(ModelFile, LatticeConfig)> {
    let file = ModelFile::load(&arg.model)?;
    let cfg = file.config()?;
    Ok((file, cfg))
}

fn point_cols(x: &GroupElement) -> [String; 3] {
    [num(x.x1), num(x.x2), num(x.x3)]
}

fn mcmc_params(a: &McmcArgs) -> McmcParams {
    let mut p = McmcParams::new(a.sweeps, a.seed);
    p.burn_in = a.burn_in;
    p.scale = a.scale;
    p.schedule = match a.schedule {
        ScheduleArg::Sequential => Schedule::Sequential,
        ScheduleArg::Checkerboard => Schedule::Checkerboard,
    };
    p
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

pub fn run(cmd: &Command) -> Result<Report> {
    match cmd {
        Command::Model(ModelCommand::Validate(a)) => model_validate(a),
        Command::Dist(a) => dist(a),
        Command::CheckEikonal(a) => check_eikonal_cmd(a),
        Command::EstimateK0(a) => estimate_k0_cmd(a),
        Command::BallVolume(a) => ball_volume_cmd(a),
        Command::Sample(a) => sample(a),
        Command::Estimate(a) => estimate(a),
        Command::ExpMoment(a) => exp_moment(a),
        Command::UboundPointwise(a) => ubound_pointwise(a),
        Command::UboundIntegral(a) => ubound_integral(a),
        Command::LsScan(a) => scan(a, true),
        Command::SgScan(a) => scan(a, false),
        Command::TelescopeCheck(a) => telescope(a),
        Command::BlockDynamics(a) => block_dynamics(a),
        Command::CdProbe(a) => cd_probe(a),
    }
}

fn model_validate(a: &ModelArg) -> Result<Report> {
    let (file, cfg) = load(a)?;
    let spec = file.model;
    let mut r = Report::new(
        "model-validate",
        vec!["family", "q", "p", "window_lo", "window_hi"],
    );
    let w = cfg.window();
    r.push(vec![
        spec.name().to_string(),
        num(spec.q()),
        num(spec.p()),
        w.lo.to_string(),
        w.hi.to_string(),
    ]);
    r.inputs = json!({ "model": a.model });
    r.result = json!({ "model_file": file, "config": cfg });
    Ok(r)
}

fn dist(a: &DistArgs) -> Result<Report> {
    let d = match &a.from {
        Some(b) => cc_distance_pair(b, &a.point)?,
        None => cc_distance(&a.point)?,
    };
    let mut r = Report::new("dist", vec!["distance"]);
    r.push(vec![num(d)]);
    r.inputs = json!({ "point": a.point, "from": a.from });
    r.result = json!({ "distance": d });
    Ok(r)
}

fn check_eikonal_cmd(a: &EikonalArgs) -> Result<Report> {
    let pts = if a.points.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        (0..a.n)
            .map(|_| {
                let r = rng.random_range(0.5..5.0);
                off_axis_point(&mut rng, r, 0.05)
            })
            .collect()
    } else {
        a.points.clone()
    };
    let rep = check_eikonal(&pts, Some(a.h))?;
    let mut r = Report::new("check-eikonal", vec!["x1", "x2", "x3", "deviation"]);
    for (x, dev) in pts.iter().zip(&rep.deviations) {
        let [x1, x2, x3] = point_cols(x);
        r.push(vec![x1, x2, x3, num(*dev)]);
    }
    r.inputs = json!({ "n": pts.len(), "seed": a.seed, "h": a.h, "tol": a.tol, "explicit_points": !a.points.is_empty() });
    r.result = json!({ "max_deviation": rep.max_deviation, "worst_point": rep.worst_point });
    r.verdict = Verdict::from_bool(rep.max_deviation <= a.tol);
    Ok(r)
}

fn estimate_k0_cmd(a: &K0Args) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let cloud: Vec<GroupElement> = (0..a.n)
        .map(|_| {
            let r = rng.random_range(0.5..3.0);
            off_axis_point(&mut rng, r, a.axis_fraction)
        })
        .collect();
    let rep = estimate_k0(&cloud, None)?;
    let gd = grad_dot_check(&cloud, Some(rep.k0), 1e-3)?;
    let mut r = Report::new(
        "estimate-k0",
        vec!["x1", "x2", "x3", "d_lap_d", "running_max"],
    );
    for ((x, v), m) in cloud.iter().zip(&rep.values).zip(&rep.running_max) {
        let [x1, x2, x3] = point_cols(x);
        r.push(vec![x1, x2, x3, num(*v), num(*m)]);
    }
    r.inputs = json!({ "n": a.n, "seed": a.seed, "axis_fraction": a.axis_fraction });
    r.result = json!({ "k0": rep.k0, "witness": rep.witness, "grad_dot": gd });
    r.verdict = Verdict::from_bool(rep.k0.is_finite() && gd.passed);
    Ok(r)
}

fn ball_volume_cmd(a: &BallArgs) -> Result<Report> {
    let mut r = Report::new(
        "ball-volume",
        vec!["radius", "volume", "stderr", "volume_over_r4", "seed"],
    );
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (k, &radius) in a.radii.iter().enumerate() {
        let seed = a.seed.wrapping_add(k as u64);
        let est = ball_volume(radius, a.n, seed)?;
        r.push(vec![
            num(radius),
            num(est.value),
            num(est.stderr),
            num(est.value / radius.powi(4)),
            seed.to_string(),
        ]);
        xs.push(radius.ln());
        ys.push(est.value.ln());
    }
    let slope = (xs.len() >= 2).then(|| linear_fit(&xs, &ys).0);
    r.inputs = json!({ "radii": a.radii, "n": a.n, "seed": a.seed });
    r.result = json!({ "log_log_slope": slope, "unit_ball_quadrature": heislab::model::unit_ball_volume() });
    Ok(r)
}

fn sample(a: &SampleArgs) -> Result<Report> {
    let (file, cfg) = load(&a.model)?;
    let spec = file.model;
    let params = mcmc_params(&a.mcmc);
    let mut state = ChainState::new(cfg.clone(), params.seed)?;
    let scale = match params.scale {
        Some(s) => s,
        None => tune_scale(&state, &spec, params.schedule)?,
    };
    for _ in 0..params.burn_in.unwrap_or(0) {
        sweep(&mut state, &spec, params.schedule, scale)?;
    }
    state.reset_statistics();
    let mut r = Report::new("sample", vec!["sweep", "site", "x1", "x2", "x3", "d"]);
    let thin = a.thin.max(1);
    for n in 1..=params.n_sweeps {
        sweep(&mut state, &spec, params.schedule, scale)?;
        if n % thin == 0 {
            let w = cfg.window();
            for (site, x) in w.sites().zip(state.config().spins()) {
                let [x1, x2, x3] = point_cols(x);
                r.push(vec![
                    n.to_string(),
                    site.to_string(),
                    x1,
                    x2,
                    x3,
                    num(cc_distance(x)?),
                ]);
            }
        }
    }
    r.inputs = json!({ "spec": spec, "config": cfg, "mcmc": params, "thin": thin });
    r.result = json!({ "proposal_scale": scale, "acceptance_rate": state.acceptance_rate(), "site_acceptance": state.site_acceptance() });
    Ok(r)
}

fn estimate(a: &EstimateArgs) -> Result<Report> {
    let (file, cfg) = load(&a.model)?;
    let spec = file.model;
    let params = mcmc_params(&a.mcmc);
    let mut r = Report::new(
        "estimate",
        vec![
            "functional",
            "value",
            "stderr",
            "n",
            "seed",
            "quadrature",
            "z",
        ],
    );
    let mut ok = true;
    let mut details = Vec::new();
    for s in &a.functions {
        let f = cylinder(s)?;
        let (est, chains) = estimate_expectation_chains(&spec, &cfg, &f, &params, a.chains)?;
        let (quad, z) = if a.compare {
            let q = window_expectation(&spec, &cfg, &f, GridParams::default(), 1e-16)?;
            let z = est.z_score(q, 0.0);
            ok &= z <= 3.0;
            (num(q), num(z))
        } else {
            (String::new(), String::new())
        };
        r.push(vec![
            f.to_string(),
            num(est.value),
            num(est.stderr),
            est.n_samples.to_string(),
            est.seed.to_string(),
            quad,
            z,
        ]);
        details.push(json!({ "functional": f.to_string(), "estimate": est, "chains": chains }));
    }
    r.inputs = json!({ "spec": spec, "config": cfg, "mcmc": params, "chains": a.chains });
    r.result = json!(details);
    r.verdict = Verdict::from_bool(ok);
    Ok(r)
}

fn exp_moment(a: &ExpMomentArgs) -> Result<Report> {
    let (file, cfg) = load(&a.model)?;
    let spec = file.model;
    let params = mcmc_params(&a.mcmc);
    let g = cylinder(&a.g)?;
    let rep = exp_moment_estimate(&spec, &cfg, &g, a.eps, &params)?;
    let mut r = Report::new(
        "exp-moment",
        vec![
            "g",
            "eps",
            "estimate",
            "stderr",
            "log_value",
            "top_share",
            "heavy_tail",
            "overflow",
        ],
    );
    r.push(vec![
        g.to_string(),
        num(a.eps),
        num(rep.estimate.value),
        num(rep.estimate.stderr),
        num(rep.log_value),
        num(rep.top_share),
        rep.heavy_tail.to_string(),
        rep.overflow.to_string(),
    ]);
    r.inputs =
        json!({ "spec": spec, "config": cfg, "mcmc": params, "g": g.to_string(), "eps": a.eps });
    r.result = json!(rep);
    Ok(r)
}

fn ubound_pointwise(a: &UboundPointwiseArgs) -> Result<Report> {
    let (file, _) = load(&a.model)?;
    let spec = file.model;
    let params = CloudParams {
        n: a.n,
        seed: a.seed,
        d_max: a.d_max,
        omega_max: a.omega_max,
        prescan_d_max: a.prescan_d_max,
    };
    let rep = ubound_pointwise_check(&spec, &params)?;
    let k = rep.constants;
    let mut r = Report::new(
        "ubound-pointwise",
        vec![
            "family",
            "c_prime",
            "a",
            "b_coeff",
            "b_exponent",
            "additive_c",
            "max_slack",
            "n_points",
            "skipped_on_axis",
            "seed",
        ],
    );
    r.push(vec![
        spec.name().to_string(),
        num(k.c_prime),
        num(k.a),
        num(k.b_coeff),
        num(k.b_exponent),
        num(k.additive_c),
        num(rep.lhs_max_slack),
        rep.n_points.to_string(),
        rep.n_skipped_on_axis.to_string(),
        rep.seed.to_string(),
    ]);
    r.inputs = json!({ "spec": spec, "cloud": params });
    r.verdict = Verdict::from_bool(rep.passed);
    r.result = json!(rep);
    Ok(r)
}

fn ubound_integral(a: &UboundIntegralArgs) -> Result<Report> {
    let (file, _) = load(&a.model)?;
    let spec = file.model;
    let family = a
        .functions
        .iter()
        .map(|s| cylinder(s))
        .collect::<Result<Vec<_>>>()?;
    let mc = a.mc_n.map(|n| (n, a.seed));
    let rep = ubound_integral_check(&spec, &a.omegas, &family, &a.a_grid, mc)?;
    let mut r = Report::new(
        "ubound-integral",
        vec![
            "omega_left",
            "omega_right",
            "function",
            "weighted",
            "gradient",
            "mass",
            "weighted_mc",
            "mc_stderr",
        ],
    );
    let mut ok = true;
    for row in &rep.rows {
        for t in &row.terms {
            let (mc_v, mc_se) = match t.weighted_mc {
                Some((v, se)) => {
                    ok &= (v - t.weighted).abs() <= 3.0 * se;
                    (num(v), num(se))
                }
                None => (String::new(), String::new()),
            };
            r.push(vec![
                num(row.omega[0]),
                num(row.omega[1]),
                t.function.clone(),
                num(t.weighted),
                num(t.gradient),
                num(t.mass),
                mc_v,
                mc_se,
            ]);
        }
    }
    r.inputs = json!({ "spec": spec, "omegas": a.omegas, "functions": a.functions, "a_grid": a.a_grid, "mc": mc });
    r.verdict = Verdict::from_bool(ok);
    r.result = json!(rep);
    Ok(r)
}

fn one_site_context(cfg: &LatticeConfig) -> Result<SiteContext> {
    if cfg.window().len() != 1 {
        return Err(CliError::Usage("ratio scans need a one-site window".into()));
    }
    Ok(SiteContext::new(
        cc_distance(&cfg.left_boundary())?,
        cc_distance(&cfg.right_boundary())?,
    ))
}

fn scan(a: &ScanArgs, log_sobolev: bool) -> Result<Report> {
    let (file, cfg) = load(&a.model)?;
    let spec: ModelSpec = file.model;
    let ctx = one_site_context(&cfg)?;
    let q = a.q.unwrap_or(spec.q());
    let measure = SampleMeasure::one_site(&spec, ctx, a.n, a.seed)?;
    let family = default_family(spec.p(), a.theta, a.cap);
    let rep = if log_sobolev {
        ls_ratio_scan(&measure, q, &family)?
    } else {
        sg_ratio_scan(&measure, q, &family)?
    };
    let name = if log_sobolev { "ls-scan" } else { "sg-scan" };
    let mut r = Report::new(name, vec!["function", "numerator", "dirichlet", "ratio"]);
    for e in &rep.entries {
        r.push(vec![
            e.name.clone(),
            num(e.numerator),
            num(e.dirichlet),
            num(e.ratio),
        ]);
    }
    r.inputs = json!({ "spec": spec, "context": ctx, "q": q, "n": a.n, "seed": a.seed, "theta": a.theta, "cap": a.cap });
    r.result = json!(rep);
    Ok(r)
}

fn telescope(a: &TelescopeArgs) -> Result<Report> {
    let (file, cfg) = load(&a.model)?;
    let spec = file.model;
    let f = cylinder(&a.function)?;
    let q = a.q.unwrap_or(spec.q());
    let rep = entropy_telescoping_check(&spec, &cfg, &f, q, a.tol)?;
    let t = rep.terms;
    let mut r = Report::new(
        "telescope-check",
        vec![
            "function",
            "q",
            "entropy",
            "even_term",
            "odd_term",
            "remainder",
            "rhs",
            "difference",
            "tolerance",
        ],
    );
    r.push(vec![
        rep.function.clone(),
        num(q),
        num(t.entropy),
        num(t.even_term),
        num(t.odd_term),
        num(t.remainder),
        num(rep.rhs),
        num(rep.difference),
        num(rep.tolerance),
    ]);
    r.inputs = json!({ "spec": spec, "config": cfg, "q": q, "tol": a.tol });
    r.verdict = Verdict::from_bool(rep.passed);
    r.result = json!(rep);
    Ok(r)
}

fn block_dynamics(a: &BlockArgs) -> Result<Report> {
    let (file, cfg) = load(&a.model)?;
    let spec = file.model;
    let f = cylinder(&a.function)?;
    let params = GridParams::new(a.panels, a.order)?;
    let run = block_dynamics_iterate(&spec, &cfg, &f, a.n_max, params)?;
    let mut r = Report::new(
        "block-dynamics",
        vec!["n", "residual", "residual_independent", "table_size"],
    );
    for (n, ((res, ind), size)) in run
        .residuals
        .iter()
        .zip(&run.residuals_independent)
        .zip(&run.iterate_sizes)
        .enumerate()
    {
        r.push(vec![n.to_string(), num(*res), num(*ind), size.to_string()]);
    }
    let reached = run.residuals_independent.iter().any(|v| *v < a.target);
    r.inputs = json!({ "spec": spec, "config": cfg, "grid": params, "n_max": a.n_max, "target": a.target });
    r.verdict = Verdict::from_bool(run.resolution_ok && run.positivity_preserved && reached);
    r.result = json!(run);
    Ok(r)
}

fn cd_probe(a: &CdProbeArgs) -> Result<Report> {
    let family = cd_trial_family();
    let grid = cd_sample_grid(a.half_width, a.grid_n);
    let mut r = Report::new(
        "cd-probe",
        vec![
            "rho",
            "min_value",
            "witness_field",
            "x1",
            "x2",
            "x3",
            "gamma",
            "gamma2",
            "violated",
        ],
    );
    let mut all = true;
    let mut reports = Vec::new();
    for &rho in &a.rhos {
        let rep = cd_condition_probe(rho, &family, &grid)?;
        let [x1, x2, x3] = point_cols(&rep.witness_point);
        all &= rep.violated();
        r.push(vec![
            num(rho),
            num(rep.min_value),
            rep.witness_field.clone(),
            x1,
            x2,
            x3,
            num(rep.witness_gamma),
            num(rep.witness_gamma2),
            rep.violated().to_string(),
        ]);
        reports.push(rep);
    }
    r.inputs = json!({ "rhos": a.rhos, "half_width": a.half_width, "grid_n": a.grid_n });
    r.verdict = Verdict::from_bool(all);
    r.result = json!(reports);
    Ok(r)
}
