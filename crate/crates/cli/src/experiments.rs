//! Experiment dispatch: builds core inputs from a [`RunConfig`], runs the
//! kernels and collects tables, series and hard checks.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Map, Value};

use snls_core::functionals::{
    decompose_u1_u2, ensemble_scattering, maximal_profile, scattering_diagnostic, simulate_with_duhamel,
    theorem_experiment, verify_dispersive, verify_local_smoothing, wrap_time, DatumFamily, LinearFlow, MaximalOptions,
    SmoothingMode, SmoothingParams, TheoremConfig, TheoremKind, WeightedExponent,
};
use snls_core::functionals::scattering::MIN_SCATTERING_HORIZON;
use snls_core::grid::sample_potential;
use snls_core::norms::{spatial_norm, AdmissiblePair, NormSpec};
use snls_core::oracle::{
    convergence_study, dense_generator, DENSE_LIMIT, dense_generator_evolve_with, gaussian_closed_form, max_eigenvalue_real_part,
    skew_hermitian_defect, ConvergenceConfig, SchemePair,
};
use snls_core::propagators::{damped_evolve, evolve_path_with, free_evolve, PhysicsParams, Schedule, Scheme};
use snls_core::stochastic::{
    burkholder_check, run_ensemble, summarize, BurkholderConfig, EnsembleConfig, PhiSpec, NORMAL_GENERATOR,
};
use snls_core::{Error, Field, GridSpec};

use crate::config::{
    FlowKind, PairKind, PhiKind, RunConfig, SchemeKind, SmoothingKind, StrichartzKind,
};
use crate::output::{fmt_f64, OutputDir, Table, SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ASSERTION: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Mass drift tolerated by the Stratonovich scheme.
pub const MASS_TOLERANCE: f64 = 1e-10;
/// Free dispersive ratio must stay below `(4 pi)^{-d/2}` times this.
pub const DISPERSIVE_SLACK: f64 = 1.05;
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-12;
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    MassCheck,
    VerifyDispersive,
    VerifyStrichartz,
    VerifySmoothing,
    Maximal,
    Decompose,
    Scatter,
    Burkholder,
    Oracle,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Simulate,
        Experiment::MassCheck,
        Experiment::VerifyDispersive,
        Experiment::VerifyStrichartz,
        Experiment::VerifySmoothing,
        Experiment::Maximal,
        Experiment::Decompose,
        Experiment::Scatter,
        Experiment::Burkholder,
        Experiment::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::MassCheck => "mass-check",
            Experiment::VerifyDispersive => "verify-dispersive",
            Experiment::VerifyStrichartz => "verify-strichartz",
            Experiment::VerifySmoothing => "verify-smoothing",
            Experiment::Maximal => "maximal",
            Experiment::Decompose => "decompose",
            Experiment::Scatter => "scatter",
            Experiment::Burkholder => "burkholder",
            Experiment::Oracle => "oracle",
        }
    }
}

#[derive(Debug)]
pub enum RunError {
    Validation(Vec<String>),
    Core(Error),
    Io(std::io::Error),
    /// Outputs were written but hard checks failed.
    Assertion(Vec<String>),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => EXIT_VALIDATION,
            RunError::Io(_) => EXIT_IO,
            RunError::Assertion(_) => EXIT_ASSERTION,
            RunError::Core(e) => match e {
                Error::NonFinite(_) | Error::PathFailed { .. } => EXIT_ASSERTION,
                Error::Io(_) | Error::Format(_) => EXIT_IO,
                _ => EXIT_VALIDATION,
            },
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Validation(v) => write!(f, "invalid configuration:\n  {}", v.join("\n  ")),
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
            RunError::Assertion(v) => write!(f, "failed checks: {}", v.join(", ")),
        }
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

fn reject(path: &str, msg: &str) -> RunError {
    RunError::Validation(vec![format!("{path}: {msg}")])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Everything an experiment produces before it is written out.
#[derive(Debug, Default)]
pub struct Outcome {
    pub results: Value,
    pub series: Map<String, Value>,
    pub tables: Vec<Table>,
    pub fields: Vec<(String, Field, f64)>,
    pub checks: Vec<Check>,
    pub wrap_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub experiment: Experiment,
    pub config_hash: String,
    pub outputs: Vec<String>,
    pub checks: Vec<Check>,
}

fn f(x: f64) -> String {
    fmt_f64(x)
}

struct Setup {
    grid: GridSpec,
    params: PhysicsParams,
    datum: Field,
    schedule: Schedule,
    scheme: Scheme,
}

fn gaussian_datum(grid: GridSpec, amplitude: f64, a: f64) -> Field {
    Field::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|c| c * c).sum();
        Complex64::new(amplitude * (-a * r2).exp(), 0.0)
    })
}

fn physics(cfg: &RunConfig, grid: &GridSpec) -> Result<PhysicsParams, RunError> {
    let v = sample_potential(&cfg.potential(), grid)?;
    let mut params = PhysicsParams::stochastic(cfg.physics.epsilon, v, grid.dim())
        .with_nonlinearity(cfg.physics.nonlinearity);
    if let Some(p) = cfg.physics.power {
        params.power = p;
    }
    params.damping_factor = cfg.physics.damping_factor;
    params.validate(grid)?;
    Ok(params)
}

fn setup(cfg: &RunConfig) -> Result<Setup, RunError> {
    let grid = cfg.grid();
    let params = physics(cfg, &grid)?;
    let datum = gaussian_datum(grid, cfg.datum.amplitude, cfg.datum.a);
    let n = &cfg.numerics;
    let schedule = Schedule::uniform(n.horizon, n.snapshots, n.dt)?;
    let scheme = match n.scheme {
        SchemeKind::Stratonovich => Scheme::Stratonovich,
        SchemeKind::Ito => Scheme::ItoEuler {
            stability: n.ito_stability,
        },
    };
    Ok(Setup {
        grid,
        params,
        datum,
        schedule,
        scheme,
    })
}

fn ensemble(cfg: &RunConfig, steps: usize) -> EnsembleConfig {
    EnsembleConfig {
        master_seed: cfg.stochastic.master_seed,
        n_paths: cfg.stochastic.n_paths,
        dt: cfg.numerics.dt,
        steps: steps.max(1),
        workers: cfg.stochastic.workers,
    }
}

fn require_stratonovich(cfg: &RunConfig, what: &str) -> Result<(), RunError> {
    if cfg.numerics.scheme != SchemeKind::Stratonovich {
        return Err(reject("numerics.scheme", &format!("{what} requires the stratonovich scheme")));
    }
    Ok(())
}

fn norm_specs(cfg: &RunConfig, pair: &AdmissiblePair) -> Vec<NormSpec> {
    let e = &cfg.exponents;
    vec![
        NormSpec::Lebesgue { p: 2.0 },
        NormSpec::Lebesgue { p: pair.beta },
        NormSpec::X {
            s: pair.s_alpha,
            p: pair.beta_tilde_prime,
            w: e.x_weight,
        },
        NormSpec::Z { w: e.z_weight },
        NormSpec::W { w: e.w_weight },
    ]
}

fn summary_json(xs: &[f64], seed: u64) -> Result<Value, RunError> {
    Ok(serde_json::to_value(summarize(xs, seed)?).expect("summary serializes"))
}

fn simulate(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let s = setup(cfg)?;
    let pair = cfg.pair()?;
    let specs = norm_specs(cfg, &pair);
    let times = s.schedule.times();
    struct PathOut {
        mass: Vec<f64>,
        drift: f64,
        norms: Vec<Vec<f64>>,
        snapshots: Option<Vec<Field>>,
    }
    let ens = run_ensemble(&ensemble(cfg, s.schedule.total_steps()), |i, path| {
        let traj = evolve_path_with(&s.datum, path, &s.schedule, &s.params, s.scheme, &mut ())?;
        let norms = traj
            .snapshots
            .iter()
            .map(|u| specs.iter().map(|spec| spatial_norm(u, spec)).collect())
            .collect::<snls_core::Result<Vec<Vec<f64>>>>()?;
        Ok(PathOut {
            drift: traj.max_relative_mass_drift(),
            mass: traj.mass.clone(),
            norms,
            snapshots: (i == 0).then_some(traj.snapshots),
        })
    })?;
    let n = ens.len() as f64;
    let mut paths = Table::new("paths", &["path_index", "final_mass", "max_relative_mass_drift"]);
    let mut norms = Table::new("norms", &["time", "norm_kind", "value"]);
    for (i, p) in ens.results.iter().enumerate() {
        paths.push(vec![i.to_string(), f(*p.mass.last().unwrap()), f(p.drift)]);
    }
    let mut series = Map::new();
    for (k, spec) in specs.iter().enumerate() {
        let mean: Vec<f64> = (0..times.len())
            .map(|j| ens.results.iter().map(|p| p.norms[j][k]).sum::<f64>() / n)
            .collect();
        for (t, v) in times.iter().zip(&mean) {
            norms.push(vec![f(*t), spec.label(), f(*v)]);
        }
        series.insert(spec.label(), json!({ "time": times, "mean": mean }));
    }
    let drifts: Vec<f64> = ens.results.iter().map(|p| p.drift).collect();
    let max_drift = drifts.iter().cloned().fold(0.0, f64::max);
    let mut checks = Vec::new();
    if cfg.numerics.scheme == SchemeKind::Stratonovich {
        checks.push(Check::new(
            "mass_conservation",
            max_drift <= MASS_TOLERANCE,
            format!("max relative drift {max_drift:e} (limit {MASS_TOLERANCE:e})"),
        ));
    }
    let fields = ens.results[0]
        .snapshots
        .as_ref()
        .expect("path 0 keeps its snapshots")
        .iter()
        .zip(&times)
        .enumerate()
        .map(|(j, (u, &t))| (format!("snapshots/path0_{j:04}.snls"), u.clone(), t))
        .collect();
    Ok(Outcome {
        results: json!({
            "scheme": cfg.numerics.scheme,
            "pair": pair,
            "initial_mass": s.datum.mass(),
            "max_relative_mass_drift": max_drift,
            "drift_summary": summary_json(&drifts, cfg.stochastic.master_seed)?,
        }),
        series,
        tables: vec![paths, norms],
        fields,
        checks,
        wrap_time: Some(wrap_time(&s.datum)?),
    })
}

fn mass_check(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let s = setup(cfg)?;
    let times = s.schedule.times();
    let ens = run_ensemble(&ensemble(cfg, s.schedule.total_steps()), |_, path| {
        let traj = evolve_path_with(&s.datum, path, &s.schedule, &s.params, s.scheme, &mut ())?;
        let m0 = traj.mass[0].sqrt();
        Ok(traj.mass.iter().map(|m| (m.sqrt() - m0) / m0).collect::<Vec<f64>>())
    })?;
    let mut table = Table::new("mass_drift", &["path_index", "time", "relative_drift"]);
    let mut per_path = Vec::with_capacity(ens.len());
    for (i, drift) in ens.results.iter().enumerate() {
        for (t, d) in times.iter().zip(drift) {
            table.push(vec![i.to_string(), f(*t), f(*d)]);
        }
        per_path.push(drift.iter().map(|d| d.abs()).fold(0.0, f64::max));
    }
    let worst: Vec<f64> = (0..times.len())
        .map(|j| ens.results.iter().map(|d| d[j].abs()).fold(0.0, f64::max))
        .collect();
    let max_drift = per_path.iter().cloned().fold(0.0, f64::max);
    let mut checks = Vec::new();
    if cfg.numerics.scheme == SchemeKind::Stratonovich {
        checks.push(Check::new(
            "mass_conservation",
            max_drift <= MASS_TOLERANCE,
            format!("max relative drift {max_drift:e} (limit {MASS_TOLERANCE:e})"),
        ));
    }
    let mut series = Map::new();
    series.insert("max_abs_drift".into(), json!({ "time": times, "value": worst }));
    Ok(Outcome {
        results: json!({
            "scheme": cfg.numerics.scheme,
            "max_relative_mass_drift": max_drift,
            "per_path_summary": summary_json(&per_path, cfg.stochastic.master_seed)?,
        }),
        series,
        tables: vec![table],
        checks,
        ..Outcome::default()
    })
}

fn flow(cfg: &RunConfig, kind: FlowKind) -> LinearFlow {
    match kind {
        FlowKind::Free => LinearFlow::Free,
        FlowKind::Damped => LinearFlow::Damped {
            epsilon: cfg.physics.epsilon,
            potential: cfg.potential(),
            damping_factor: cfg.physics.damping_factor,
            dt: cfg.numerics.dt,
        },
    }
}

fn dispersive(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let grid = cfg.grid();
    let d = &cfg.dispersive;
    let datum = gaussian_datum(grid, cfg.datum.amplitude, cfg.datum.a);
    let wrap = wrap_time(&datum)?;
    let t_max = d.t_max.unwrap_or(wrap);
    let count = ((t_max - d.t_min) / d.time_step + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=count).map(|j| d.t_min + j as f64 * d.time_step).collect();
    let flow = flow(cfg, d.flow);
    let report = verify_dispersive(&flow, &datum, &times)?;
    let l1 = datum.values().iter().map(|z| z.norm()).sum::<f64>() * grid.cell_volume();
    let half_dim = grid.dim() as f64 / 2.0;
    // Peak of the free Gaussian, |A| (1 + 16 a^2 t^2)^{-d/4}, sits at the origin.
    let a = cfg.datum.a;
    let closed: Vec<f64> = times
        .iter()
        .map(|&t| {
            let peak = cfg.datum.amplitude.abs() * (1.0 + 16.0 * a * a * t * t).powf(-half_dim / 2.0);
            t.powf(half_dim) * peak / l1
        })
        .collect();
    let mut table = Table::new("dispersive", &["time", "ratio", "free_closed_form_ratio"]);
    for (row, c) in report.rows.iter().zip(&closed) {
        table.push(vec![f(row.t), f(row.ratio), f(*c)]);
    }
    let ratios: Vec<f64> = report.rows.iter().map(|r| r.ratio).collect();
    let bound = (4.0 * std::f64::consts::PI).powf(-half_dim);
    let mut checks = Vec::new();
    if d.flow == FlowKind::Free {
        checks.push(Check::new(
            "dispersive_bound",
            report.sup <= bound * DISPERSIVE_SLACK,
            format!("sup ratio {} against (4 pi)^(-d/2) = {}", report.sup, bound),
        ));
        let gap = ratios.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        checks.push(Check::new(
            "closed_form_match",
            gap <= CLOSED_FORM_TOLERANCE,
            format!("max deviation {gap:e} (limit {CLOSED_FORM_TOLERANCE:e})"),
        ));
    }
    let mut series = Map::new();
    series.insert(
        "compensated_decay".into(),
        json!({ "time": times, "ratio": ratios, "free_closed_form_ratio": closed }),
    );
    Ok(Outcome {
        results: json!({
            "flow": flow,
            "sup_ratio": report.sup,
            "free_bound": bound,
        }),
        series,
        tables: vec![table],
        checks,
        wrap_time: Some(report.wrap_time),
        ..Outcome::default()
    })
}

fn strichartz(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let grid = cfg.grid();
    let st = &cfg.strichartz;
    let pair = cfg.pair()?;
    let datum = gaussian_datum(grid, cfg.datum.amplitude, cfg.datum.a);
    let report = theorem_experiment(&TheoremConfig {
        kind: match st.kind {
            StrichartzKind::Linear => TheoremKind::Linear,
            StrichartzKind::Nonlinear => TheoremKind::Nonlinear,
            StrichartzKind::Strichartz => TheoremKind::Strichartz,
        },
        datum: datum.clone(),
        potential: cfg.potential(),
        epsilon: cfg.physics.epsilon,
        pair,
        base_horizon: st.base_horizon,
        dt: cfg.numerics.dt,
        sample_step: st.sample_step,
        n_paths: cfg.stochastic.n_paths,
        master_seed: cfg.stochastic.master_seed,
        workers: cfg.stochastic.workers,
        homogeneity: st.homogeneity,
    })?;
    let mut norms = Table::new(
        "mixed_norms",
        &["horizon", "value", "std_error", "ci_low", "ci_high", "strichartz_ratio"],
    );
    for ((h, m), r) in report.horizons.iter().zip(&report.mixed_norms).zip(&report.strichartz_ratios) {
        norms.push(vec![f(*h), f(m.value), f(m.std_error), f(m.ci.0), f(m.ci.1), f(*r)]);
    }
    let mut windows = Table::new("contributions", &["window", "contribution", "increment_ratio"]);
    for (k, c) in report.contributions.iter().enumerate() {
        let r = if k == 0 { String::new() } else { f(report.increment_ratios[k - 1]) };
        windows.push(vec![k.to_string(), f(*c), r]);
    }
    let values: Vec<f64> = report.mixed_norms.iter().map(|m| m.value).collect();
    let monotone = values.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
    let checks = vec![Check::new(
        "mixed_norm_monotone_in_horizon",
        monotone && values.iter().all(|v| v.is_finite()),
        format!("mixed norms {values:?}"),
    )];
    let mut series = Map::new();
    series.insert("mixed_norm".into(), json!({ "horizon": report.horizons, "value": values }));
    series.insert(
        "window_contributions".into(),
        json!({ "contribution": report.contributions, "increment_ratio": report.increment_ratios }),
    );
    Ok(Outcome {
        results: json!({
            "report": report,
            "saturating": report.saturating(1.0),
        }),
        series,
        tables: vec![norms, windows],
        checks,
        wrap_time: Some(wrap_time(&datum)?),
        ..Outcome::default()
    })
}

fn smoothing(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let sm = &cfg.smoothing;
    let mode = match sm.mode {
        SmoothingKind::Global => SmoothingMode::Global {
            delta: cfg.exponents.delta,
        },
        SmoothingKind::Pointwise => SmoothingMode::Pointwise {
            radius: sm.radius.unwrap_or(4.0 * cfg.physics.potential.width),
        },
    };
    let family = DatumFamily::new(sm.family_size, sm.family_seed);
    let report = verify_local_smoothing(
        mode,
        &family,
        &SmoothingParams {
            grid: cfg.grid(),
            flow: flow(cfg, sm.flow),
            time_step: sm.time_step,
            horizon: None,
        },
    )?;
    let mut table = Table::new("smoothing", &["datum_index", "ratio"]);
    for (i, r) in report.ratios.iter().enumerate() {
        table.push(vec![i.to_string(), f(*r)]);
    }
    let checks = vec![Check::new(
        "ratios_finite",
        report.ratios.iter().all(|r| r.is_finite()) && report.max_ratio_refined.is_finite(),
        format!("max ratio {}, refined {}", report.max_ratio, report.max_ratio_refined),
    )];
    let mut series = Map::new();
    series.insert("ratios".into(), json!(report.ratios));
    Ok(Outcome {
        results: json!({ "family": family, "report": report }),
        series,
        tables: vec![table],
        checks,
        ..Outcome::default()
    })
}

fn maximal_options(cfg: &RunConfig) -> Result<MaximalOptions, RunError> {
    Ok(MaximalOptions {
        pair: cfg.pair()?,
        weight: cfg.exponents.x_weight,
        exponent: WeightedExponent::default(),
    })
}

fn maximal(cfg: &RunConfig) -> Result<Outcome, RunError> {
    require_stratonovich(cfg, "maximal")?;
    let s = setup(cfg)?;
    let opts = maximal_options(cfg)?;
    let ens = run_ensemble(&ensemble(cfg, s.schedule.total_steps()), |_, path| {
        let run = simulate_with_duhamel(&s.datum, path, &s.schedule, &s.params)?;
        maximal_profile(&run, &opts)
    })?;
    let mut table = Table::new(
        "maximal",
        &["path_index", "time", "raw", "running", "lebesgue", "weighted", "weighted_alternate"],
    );
    let mut monotone = true;
    for (i, p) in ens.results.iter().enumerate() {
        for j in 0..p.times.len() {
            table.push(vec![
                i.to_string(),
                f(p.times[j]),
                f(p.raw[j]),
                f(p.running[j]),
                f(p.lebesgue[j]),
                f(p.weighted[j]),
                f(p.weighted_alternate[j]),
            ]);
        }
        monotone &= p.running.windows(2).all(|w| w[1] >= w[0]) && p.running.iter().zip(&p.raw).all(|(r, x)| r >= x);
    }
    let finals: Vec<f64> = ens.results.iter().map(|p| *p.running.last().unwrap()).collect();
    let times = ens.results[0].times.clone();
    let mean: Vec<f64> = (0..times.len())
        .map(|j| ens.results.iter().map(|p| p.running[j]).sum::<f64>() / ens.len() as f64)
        .collect();
    let mut series = Map::new();
    series.insert("running_mean".into(), json!({ "time": times, "value": mean }));
    Ok(Outcome {
        results: json!({
            "options": opts,
            "final_running_summary": summary_json(&finals, cfg.stochastic.master_seed)?,
        }),
        series,
        tables: vec![table],
        checks: vec![Check::new(
            "running_maximum_monotone",
            monotone,
            "running M* nondecreasing and above raw M*".into(),
        )],
        ..Outcome::default()
    })
}

fn decompose(cfg: &RunConfig) -> Result<Outcome, RunError> {
    require_stratonovich(cfg, "decompose")?;
    let s = setup(cfg)?;
    let opts = maximal_options(cfg)?;
    let e = &cfg.exponents;
    struct PathOut {
        times: Vec<f64>,
        mstar: Vec<f64>,
        u1: Vec<f64>,
        u2: Vec<f64>,
        endpoints: Vec<f64>,
        values: Vec<f64>,
        violations: usize,
        additivity: f64,
        excess: f64,
        u1_mixed: f64,
    }
    let ens = run_ensemble(&ensemble(cfg, s.schedule.total_steps()), |_, path| {
        let run = simulate_with_duhamel(&s.datum, path, &s.schedule, &s.params)?;
        let dec = decompose_u1_u2(&run, &opts, e.e_m, e.partition_cap)?;
        Ok(PathOut {
            excess: dec.bound_excess(),
            additivity: dec.additivity_error,
            u1_mixed: dec.u1_mixed,
            violations: dec.partition.violations,
            endpoints: dec.partition.endpoints,
            values: dec.partition.values,
            times: dec.times,
            mstar: dec.mstar,
            u1: dec.u1_norm,
            u2: dec.u2_norm,
        })
    })?;
    let mut table = Table::new("decomposition", &["path_index", "time", "mstar", "u1_norm", "u2_norm"]);
    let mut parts = Table::new("partition", &["path_index", "interval", "t_start", "t_end", "mstar_mixed"]);
    for (i, p) in ens.results.iter().enumerate() {
        for j in 0..p.times.len() {
            table.push(vec![i.to_string(), f(p.times[j]), f(p.mstar[j]), f(p.u1[j]), f(p.u2[j])]);
        }
        for (k, v) in p.values.iter().enumerate() {
            parts.push(vec![i.to_string(), k.to_string(), f(p.endpoints[k]), f(p.endpoints[k + 1]), f(*v)]);
        }
    }
    let additivity = ens.results.iter().map(|p| p.additivity).fold(0.0, f64::max);
    let excess = ens.results.iter().map(|p| p.excess).fold(f64::NEG_INFINITY, f64::max);
    let scale = ens
        .results
        .iter()
        .flat_map(|p| p.mstar.iter())
        .cloned()
        .fold(1.0, f64::max);
    let intervals: Vec<f64> = ens.results.iter().map(|p| p.values.len() as f64).collect();
    let mut series = Map::new();
    series.insert(
        "path0".into(),
        json!({
            "time": ens.results[0].times,
            "mstar": ens.results[0].mstar,
            "u1_norm": ens.results[0].u1,
            "u2_norm": ens.results[0].u2,
        }),
    );
    Ok(Outcome {
        results: json!({
            "e_m": e.e_m,
            "max_additivity_error": additivity,
            "max_bound_excess": excess,
            "partition_violations": ens.results.iter().map(|p| p.violations).sum::<usize>(),
            "interval_summary": summary_json(&intervals, cfg.stochastic.master_seed)?,
            "u1_mixed": ens.results.iter().map(|p| p.u1_mixed).collect::<Vec<_>>(),
        }),
        series,
        tables: vec![table, parts],
        checks: vec![
            Check::new(
                "additivity",
                additivity <= DECOMPOSITION_TOLERANCE,
                format!("max ||u1 + u2 - u||_inf / ||u||_inf = {additivity:e}"),
            ),
            Check::new(
                "u2_bounded_by_mstar",
                excess <= DECOMPOSITION_TOLERANCE * scale,
                format!("max ||u2||_X - M* = {excess:e}"),
            ),
        ],
        ..Outcome::default()
    })
}

fn scatter(cfg: &RunConfig) -> Result<Outcome, RunError> {
    require_stratonovich(cfg, "scatter")?;
    if cfg.numerics.horizon < MIN_SCATTERING_HORIZON {
        return Err(reject(
            "numerics.horizon",
            &format!("scatter needs a horizon of at least {MIN_SCATTERING_HORIZON}"),
        ));
    }
    let s = setup(cfg)?;
    let ens = run_ensemble(&ensemble(cfg, s.schedule.total_steps()), |_, path| {
        let traj = evolve_path_with(&s.datum, path, &s.schedule, &s.params, s.scheme, &mut ())?;
        scattering_diagnostic(&traj)
    })?;
    let stats = ensemble_scattering(&ens.results, cfg.stochastic.master_seed)?;
    let mut table = Table::new("scattering", &["path_index", "t1", "t2", "difference"]);
    for (i, r) in ens.results.iter().enumerate() {
        for w in &r.windows {
            table.push(vec![i.to_string(), f(w.t1), f(w.t2), f(w.difference)]);
        }
    }
    let mut summary = Table::new("scattering_summary", &["t1", "t2", "median", "ci_low", "ci_high"]);
    for w in &stats.windows {
        summary.push(vec![f(w.t1), f(w.t2), f(w.median), f(w.median_ci.0), f(w.median_ci.1)]);
    }
    let m0 = s.datum.l2_norm();
    let mismatch = ens.results.iter().map(|r| r.final_mismatch).fold(0.0, f64::max);
    let mut series = Map::new();
    series.insert(
        "dyadic_cauchy".into(),
        json!({
            "t1": stats.windows.iter().map(|w| w.t1).collect::<Vec<_>>(),
            "t2": stats.windows.iter().map(|w| w.t2).collect::<Vec<_>>(),
            "median": stats.windows.iter().map(|w| w.median).collect::<Vec<_>>(),
        }),
    );
    Ok(Outcome {
        results: json!({
            "ensemble": stats,
            "medians_decreasing": stats.medians_decreasing(),
            "max_final_mismatch": mismatch,
            "half_mismatch": ens.results.iter().map(|r| r.half_mismatch).collect::<Vec<_>>(),
        }),
        series,
        tables: vec![table, summary],
        checks: vec![Check::new(
            "profile_reconstruction",
            mismatch <= 1e-9 * m0.max(1.0),
            format!("max ||u(T) - S(T) u+||_2 = {mismatch:e}"),
        )],
        wrap_time: Some(wrap_time(&s.datum)?),
        ..Outcome::default()
    })
}

fn burkholder(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let s = setup(cfg)?;
    let b = &cfg.burkholder;
    let phi = match b.phi {
        PhiKind::Zero => PhiSpec::Zero,
        PhiKind::Deterministic => PhiSpec::Deterministic {
            profile: s.datum.clone(),
            omega: b.omega,
        },
        PhiKind::Adapted => PhiSpec::Adapted {
            u0: s.datum.clone(),
            params: s.params.clone(),
        },
    };
    let report = burkholder_check(&BurkholderConfig {
        phi,
        rho: b.rho,
        p: b.p,
        n_paths: cfg.stochastic.n_paths,
        horizon: cfg.numerics.horizon,
        dt: cfg.numerics.dt,
        snapshots: cfg.numerics.snapshots,
        master_seed: cfg.stochastic.master_seed,
        workers: cfg.stochastic.workers,
    })?;
    let mut table = Table::new("burkholder_pairs", &["a", "b", "ratio"]);
    for &(a, bb, r) in &report.pairs {
        table.push(vec![f(a), f(bb), f(r)]);
    }
    let finite = report.pairs.iter().all(|p| p.2.is_finite()) && report.sup_ratio.is_finite();
    Ok(Outcome {
        results: json!({ "phi": b.phi, "report": report }),
        tables: vec![table],
        checks: vec![Check::new(
            "ratios_finite",
            finite,
            format!("sup ratio {}, full-interval ratio {}", report.sup_ratio, report.full_ratio),
        )],
        ..Outcome::default()
    })
}

/// Dense generator checks need the full `N x N` matrix.
pub const ORACLE_SKEW_TOLERANCE: f64 = 1e-12;
pub const ORACLE_EIGEN_TOLERANCE: f64 = 1e-10;
pub const ORACLE_PROPAGATOR_TOLERANCE: f64 = 1e-6;
pub const ORACLE_CLOSED_FORM_TOLERANCE: f64 = 1e-8;

fn oracle(cfg: &RunConfig) -> Result<Outcome, RunError> {
    if cfg.grid.dim != 1 || cfg.grid.n > DENSE_LIMIT {
        return Err(reject(
            "grid.n",
            &format!("the dense oracle needs grid.dim = 1 and grid.n <= {DENSE_LIMIT}"),
        ));
    }
    let s = setup(cfg)?;
    let grid = s.grid;
    let eps = cfg.physics.epsilon;
    let v = s.params.potential.as_slice();
    let t = cfg.oracle.time;
    let mut checks = Vec::new();

    let unitary = dense_generator(&grid, eps, v, 0.0)?;
    let skew = skew_hermitian_defect(&unitary);
    checks.push(Check::new(
        "generator_skew_hermitian",
        skew <= ORACLE_SKEW_TOLERANCE,
        format!("||G + G*|| / ||G|| = {skew:e} without damping"),
    ));
    let damped = dense_generator(&grid, eps, v, s.params.damping_factor)?;
    let eig = max_eigenvalue_real_part(&damped);
    checks.push(Check::new(
        "generator_dissipative",
        eig <= ORACLE_EIGEN_TOLERANCE,
        format!("max Re(spectrum) = {eig:e}"),
    ));

    let mut linear = s.params.clone().with_nonlinearity(false);
    linear.noise = true;
    let reference = dense_generator_evolve_with(&s.datum, t, eps, v, s.params.damping_factor)?;
    let substeps = cfg.numerics.substeps;
    let stepped = damped_evolve(&s.datum, t, &linear, substeps)?;
    let prop_err = stepped.relative_l2_distance(&reference);
    checks.push(Check::new(
        "damped_propagator_vs_dense",
        prop_err <= ORACLE_PROPAGATOR_TOLERANCE,
        format!("relative L2 error {prop_err:e} at t = {t} with {substeps} substeps"),
    ));

    let closed = gaussian_closed_form(&grid, t, cfg.datum.a)
        .map_err(|e| {
            reject(
                "oracle.time",
                &format!("{e}; shorten oracle.time or widen grid.half_length"),
            )
        })?
        .scale(Complex64::new(cfg.datum.amplitude, 0.0));
    let cf_err = free_evolve(&s.datum, t).relative_l2_distance(&closed);
    checks.push(Check::new(
        "free_flow_vs_closed_form",
        cf_err <= ORACLE_CLOSED_FORM_TOLERANCE,
        format!("relative L2 error {cf_err:e} at t = {t}"),
    ));

    let o = &cfg.oracle;
    let pair = match o.pair {
        PairKind::StrangSelf => SchemePair::StrangSelf,
        PairKind::ItoVsStratonovich => SchemePair::ItoVsStratonovich,
        PairKind::Identical => SchemePair::Identical,
    };
    let mut conv = ConvergenceConfig::new(pair, s.datum.clone(), s.params.clone(), cfg.numerics.horizon, o.dt_coarse);
    conv.levels = o.levels;
    conv.seeds = (0..o.seeds as u64).map(|k| cfg.stochastic.master_seed + k).collect();
    conv.ito_stability = cfg.numerics.ito_stability;
    let rate = convergence_study(&conv)?;
    let mut table = Table::new("convergence", &["dt", "error", "mass_drift"]);
    for (j, (h, e)) in rate.dts.iter().zip(&rate.errors).enumerate() {
        let drift = rate.mass_drift.as_ref().map(|m| f(m[j])).unwrap_or_default();
        table.push(vec![f(*h), f(*e), drift]);
    }
    let mut series = Map::new();
    series.insert("convergence".into(), json!({ "dt": rate.dts, "error": rate.errors }));
    Ok(Outcome {
        results: json!({
            "skew_defect": skew,
            "max_eigen_real_part": eig,
            "propagator_error": prop_err,
            "closed_form_error": cf_err,
            "convergence": rate,
        }),
        series,
        tables: vec![table],
        checks,
        ..Outcome::default()
    })
}

/// Runs the experiment without touching the file system.
pub fn compute(exp: Experiment, cfg: &RunConfig) -> Result<Outcome, RunError> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(RunError::Validation(violations));
    }
    match exp {
        Experiment::Simulate => simulate(cfg),
        Experiment::MassCheck => mass_check(cfg),
        Experiment::VerifyDispersive => dispersive(cfg),
        Experiment::VerifyStrichartz => strichartz(cfg),
        Experiment::VerifySmoothing => smoothing(cfg),
        Experiment::Maximal => maximal(cfg),
        Experiment::Decompose => decompose(cfg),
        Experiment::Scatter => scatter(cfg),
        Experiment::Burkholder => burkholder(cfg),
        Experiment::Oracle => oracle(cfg),
    }
}

/// Runs `exp` and writes its artifacts plus `manifest.json` under `out`.
pub fn run(exp: Experiment, cfg: &RunConfig, out: &Path) -> Result<RunSummary, RunError> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(RunError::Validation(violations));
    }
    let started = SystemTime::now();
    let clock = Instant::now();
    let mut dir = OutputDir::create(out)?;
    let outcome = compute(exp, cfg)?;
    let hash = cfg.hash();

    let mut tables = Vec::new();
    for t in &outcome.tables {
        dir.write_table(t)?;
        tables.push(t.file_name());
    }
    let mut snapshots = Vec::new();
    for (name, field, t) in &outcome.fields {
        dir.write_field(name, field, *t)?;
        snapshots.push(name.clone());
    }
    let grid = cfg.grid();
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "experiment": exp,
        "config_hash": hash,
        "master_seed": cfg.stochastic.master_seed,
        "n_paths": cfg.stochastic.n_paths,
        "grid": { "dim": grid.dim(), "n": grid.n(), "half_length": grid.half_length() },
        "wrap_time": outcome.wrap_time,
        "results": outcome.results,
        "series": outcome.series,
        "checks": outcome.checks,
        "tables": tables,
        "snapshots": snapshots,
    });
    let summary_name = format!("{}.json", exp.name());
    dir.write_json(&summary_name, &summary)?;

    let mut outputs = dir.written().to_vec();
    outputs.push("manifest.json".into());
    let unix = started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "experiment": exp,
        "config_hash": hash,
        "version": env!("CARGO_PKG_VERSION"),
        "rng": {
            "path_streams": "chacha20 stream per (master_seed, path_index)",
            "normal_generator": NORMAL_GENERATOR,
        },
        "started_unix_seconds": unix,
        "elapsed_seconds": clock.elapsed().as_secs_f64(),
        "outputs": outputs,
        "config": cfg,
    });
    dir.write_json("manifest.json", &manifest)?;

    let failed: Vec<String> = outcome.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    if !failed.is_empty() {
        return Err(RunError::Assertion(failed));
    }
    Ok(RunSummary {
        experiment: exp,
        config_hash: hash,
        outputs,
        checks: outcome.checks,
    })
}
