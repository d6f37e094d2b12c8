use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::{sample_potential, Field, GridSpec, PotentialSpec};
use crate::norms::{lp_norm, omega_mixed_norm, trapezoid_weights, AdmissiblePair, MomentEstimate, NormSpec, NormEvaluator};
use crate::propagators::{evolve_path, free_evolve, DampedPropagator, PhysicsParams, Schedule, DEFAULT_DAMPING_FACTOR};
use crate::spectral::{apply_table_in_place, forward, weight_profile, Symbol};
use crate::stochastic::{run_ensemble, stream_rng, EnsembleConfig, NormalStream};

/// Fraction of spectral mass inside the effective wavenumber radius.
pub const WRAP_MASS_FRACTION: f64 = 0.999;

/// Radius in `k` holding `WRAP_MASS_FRACTION` of the spectral mass.
pub fn effective_wavenumber(field: &Field) -> Result<f64> {
    let spec = forward(field)?;
    let grid = field.grid();
    let mut pairs: Vec<(f64, f64)> = spec
        .coefficients()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let k = grid.wavevector(i);
            ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt(), c.norm_sqr())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (k, m) in pairs {
        acc += m;
        if acc >= WRAP_MASS_FRACTION * total {
            return Ok(k);
        }
    }
    Ok(grid.k_max())
}

/// Time before the bulk of the wave packet reaches the periodic boundary: `L / (4 k_eff)`.
pub fn wrap_time(field: &Field) -> Result<f64> {
    let k = effective_wavenumber(field)?.max(field.grid().dk());
    Ok(field.grid().half_length() / (4.0 * k))
}

/// Linear propagator under test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LinearFlow {
    Free,
    /// `H(t)` with decay `damping_factor * eps^2 V^2`, stepped with `dt`.
    Damped {
        epsilon: f64,
        potential: PotentialSpec,
        damping_factor: f64,
        dt: f64,
    },
}

impl LinearFlow {
    pub fn damped(epsilon: f64, potential: PotentialSpec, dt: f64) -> Self {
        LinearFlow::Damped {
            epsilon,
            potential,
            damping_factor: DEFAULT_DAMPING_FACTOR,
            dt,
        }
    }

    fn propagator(&self, grid: &GridSpec) -> Result<Option<DampedPropagator>> {
        match self {
            LinearFlow::Free => Ok(None),
            LinearFlow::Damped {
                epsilon,
                potential,
                damping_factor,
                dt,
            } => {
                if *epsilon == 0.0 || *damping_factor == 0.0 || potential.amplitude == 0.0 {
                    return Ok(None);
                }
                let v = sample_potential(potential, grid)?;
                let mut params = PhysicsParams::linear(*epsilon, v, grid.dim());
                params.damping_factor = *damping_factor;
                Ok(Some(DampedPropagator::new(grid, &params, *dt)?))
            }
        }
    }

    /// `P(t_j) f` for ascending `times >= 0`.
    pub fn evolve_series(&self, f: &Field, times: &[f64]) -> Result<Vec<Field>> {
        if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
            return Err(invalid("times", "must be ascending and nonnegative"));
        }
        let Some(prop) = self.propagator(f.grid())? else {
            return Ok(times.iter().map(|&t| free_evolve(f, t)).collect());
        };
        let dt = prop.dt();
        let mut state = f.values().to_vec();
        let mut at = 0usize;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::ScheduleMismatch(format!("time {t} is not a multiple of dt = {dt}")));
            }
            let k = k as usize;
            prop.apply_in_place(&mut state, k - at);
            at = k;
            out.push(Field::from_vec(*f.grid(), state.clone())?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispersiveRow {
    pub t: f64,
    /// `t^{d/2} ||P(t) f||_inf / ||f||_1`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispersiveTable {
    pub rows: Vec<DispersiveRow>,
    pub sup: f64,
    pub wrap_time: f64,
}

pub fn verify_dispersive(flow: &LinearFlow, datum: &Field, times: &[f64]) -> Result<DispersiveTable> {
    datum.check_finite()?;
    let wrap = wrap_time(datum)?;
    if let Some(&t) = times.iter().find(|&&t| t > wrap) {
        return Err(Error::BeyondWrap { time: t, wrap });
    }
    if times.iter().any(|&t| t <= 0.0) {
        return Err(invalid("times", "must be positive"));
    }
    let grid = datum.grid();
    let l1 = lp_norm(datum.values(), 1.0, grid.cell_volume());
    let half_d = grid.dim() as f64 / 2.0;
    let states = flow.evolve_series(datum, times)?;
    let rows: Vec<DispersiveRow> = times
        .iter()
        .zip(&states)
        .map(|(&t, s)| DispersiveRow {
            t,
            ratio: if l1 == 0.0 { 0.0 } else { t.powf(half_d) * s.max_abs() / l1 },
        })
        .collect();
    let sup = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(DispersiveTable {
        rows,
        sup,
        wrap_time: wrap,
    })
}

/// Random localized data `sum_j c_j exp(-|x - x_j|^2 / 2) exp(i xi_j . x)`
/// with `|xi_j|_inf <= max_frequency` and `|x_j|_inf <= spread`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatumFamily {
    pub count: usize,
    pub bumps: usize,
    pub max_frequency: f64,
    pub spread: f64,
    pub seed: u64,
}

impl DatumFamily {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            bumps: 3,
            max_frequency: 2.0,
            spread: 2.0,
            seed,
        }
    }

    /// Member `index` sampled on `grid`; the same continuum function on every grid.
    pub fn member(&self, index: usize, grid: &GridSpec) -> Field {
        let mut rng = NormalStream::new(stream_rng(self.seed, index as u64));
        let d = grid.dim();
        let bumps: Vec<(Complex64, [f64; 3], [f64; 3])> = (0..self.bumps)
            .map(|_| {
                let c = Complex64::new(rng.next_normal(), rng.next_normal());
                let mut x0 = [0.0; 3];
                let mut xi = [0.0; 3];
                for a in 0..d {
                    x0[a] = self.spread * (2.0 * rng.uniform() - 1.0);
                    xi[a] = self.max_frequency * (2.0 * rng.uniform() - 1.0);
                }
                (c, x0, xi)
            })
            .collect();
        Field::from_fn(*grid, |x| {
            bumps
                .iter()
                .map(|(c, x0, xi)| {
                    let mut r2 = 0.0;
                    let mut phase = 0.0;
                    for a in 0..x.len() {
                        r2 += (x[a] - x0[a]).powi(2);
                        phase += xi[a] * x[a];
                    }
                    c * (-r2 / 2.0).exp() * Complex64::from_polar(1.0, phase)
                })
                .sum()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SmoothingMode {
    /// `int int <x>^{-1-delta} | |grad|^{1/2} P(t) f |^2 dx dt / ||f||_2^2`.
    Global { delta: f64 },
    /// `sup_{t in [1, T]} t ||grad P(t) f||_{L2(B_R)} / (N(R) ||<x> f||_2)` with
    /// `N(R) = R` for the free flow and `<R>^{3/2}` for the damped one.
    Pointwise { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothingParams {
    pub grid: GridSpec,
    pub flow: LinearFlow,
    /// Spacing of the time quadrature / sampling grid.
    pub time_step: f64,
    /// Integration horizon; defaults to the family's wrap time.
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothingReport {
    pub mode: SmoothingMode,
    pub horizon: f64,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// Same family on the grid with `2N` points.
    pub max_ratio_refined: f64,
    /// `|refined - max| / max`.
    pub refinement_delta: f64,
}

fn smoothing_ratio(mode: SmoothingMode, flow: &LinearFlow, f: &Field, times: &[f64]) -> Result<f64> {
    let grid = *f.grid();
    let cell = grid.cell_volume();
    let mass = f.mass();
    if mass == 0.0 {
        return Ok(0.0);
    }
    let states = flow.evolve_series(f, times)?;
    match mode {
        SmoothingMode::Global { delta } => {
            let weight = weight_profile(&grid, 1.0 + delta);
            let riesz = Symbol::Riesz(0.5).table(&grid)?;
            let w = trapezoid_weights(times);
            let mut total = 0.0;
            for (s, wt) in states.iter().zip(&w) {
                let mut v = s.values().to_vec();
                apply_table_in_place(&grid, &mut v, &riesz);
                let integral: f64 = v.iter().zip(&weight).map(|(z, r)| r * z.norm_sqr()).sum();
                total += wt * integral * cell;
            }
            Ok(total / mass)
        }
        SmoothingMode::Pointwise { radius } => {
            let r2 = grid.radius_squared();
            let ball: Vec<bool> = r2.iter().map(|&r| r <= radius * radius).collect();
            let moment: f64 = f
                .values()
                .iter()
                .zip(&r2)
                .map(|(z, r)| (1.0 + r) * z.norm_sqr())
                .sum::<f64>()
                * cell;
            let norm_r = match flow {
                LinearFlow::Free => radius,
                LinearFlow::Damped { .. } => (1.0 + radius * radius).powf(0.75),
            };
            let grads: Vec<Vec<Complex64>> = (0..grid.dim())
                .map(|a| Symbol::Gradient(a).table(&grid))
                .collect::<Result<_>>()?;
            let mut best = 0.0f64;
            for (s, &t) in states.iter().zip(times) {
                let mut sq = vec![0.0; grid.len()];
                for g in &grads {
                    let mut v = s.values().to_vec();
                    apply_table_in_place(&grid, &mut v, g);
                    for (acc, z) in sq.iter_mut().zip(&v) {
                        *acc += z.norm_sqr();
                    }
                }
                let local: f64 = sq.iter().zip(&ball).filter(|(_, &b)| b).map(|(q, _)| q).sum::<f64>() * cell;
                best = best.max(t * local.sqrt() / (norm_r * moment.sqrt()));
            }
            Ok(best)
        }
    }
}

fn smoothing_times(mode: SmoothingMode, horizon: f64, step: f64) -> Vec<f64> {
    let start = match mode {
        SmoothingMode::Global { .. } => 0.0,
        SmoothingMode::Pointwise { .. } => 1.0,
    };
    let n = ((horizon - start) / step).floor() as usize;
    (0..=n).map(|j| start + j as f64 * step).collect()
}

fn family_max(
    mode: SmoothingMode,
    family: &DatumFamily,
    flow: &LinearFlow,
    grid: &GridSpec,
    times: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let ratios = (0..family.count)
        .map(|i| smoothing_ratio(mode, flow, &family.member(i, grid), times))
        .collect::<Result<Vec<f64>>>()?;
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    Ok((ratios, max))
}

pub fn verify_local_smoothing(
    mode: SmoothingMode,
    family: &DatumFamily,
    params: &SmoothingParams,
) -> Result<SmoothingReport> {
    match mode {
        SmoothingMode::Global { delta } if !(delta > 0.0 && delta.is_finite()) => {
            return Err(invalid("delta", "must be positive"));
        }
        SmoothingMode::Pointwise { radius } if !(radius > 0.0) || radius > params.grid.half_length() => {
            return Err(invalid("radius", "ball must be nonempty and inside the box"));
        }
        _ => {}
    }
    if !(params.time_step > 0.0) {
        return Err(invalid("time_step", "must be positive"));
    }
    let grid = params.grid;
    let horizon = match params.horizon {
        Some(h) => h,
        None => {
            let mut wrap = f64::INFINITY;
            for i in 0..family.count {
                wrap = wrap.min(wrap_time(&family.member(i, &grid))?);
            }
            wrap
        }
    };
    if let SmoothingMode::Pointwise { .. } = mode {
        if horizon < 1.0 {
            return Err(Error::HorizonTooShort { horizon, required: 1.0 });
        }
    }
    let times = smoothing_times(mode, horizon, params.time_step);
    let (ratios, max_ratio) = family_max(mode, family, &params.flow, &grid, &times)?;
    let fine = GridSpec::new(grid.dim(), 2 * grid.n(), grid.half_length())?;
    let (_, max_ratio_refined) = family_max(mode, family, &params.flow, &fine, &times)?;
    let refinement_delta = if max_ratio == 0.0 {
        0.0
    } else {
        (max_ratio_refined - max_ratio).abs() / max_ratio
    };
    Ok(SmoothingReport {
        mode,
        horizon,
        ratios,
        max_ratio,
        max_ratio_refined,
        refinement_delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TheoremKind {
    /// Linear stochastic model, `||u||_{L^alpha_omega L^alpha_t L^beta_x}`.
    Linear,
    /// Full nonlinear model, same norm.
    Nonlinear,
    /// Deterministic `||S(t) f||_{L^alpha_t L^beta_x} / ||f||_2`.
    Strichartz,
}

#[derive(Debug, Clone)]
pub struct TheoremConfig {
    pub kind: TheoremKind,
    pub datum: Field,
    pub potential: PotentialSpec,
    pub epsilon: f64,
    pub pair: AdmissiblePair,
    /// Horizons `T, 2T, 4T` are derived from this base.
    pub base_horizon: f64,
    pub dt: f64,
    /// Snapshot spacing for the time quadrature.
    pub sample_step: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub homogeneity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomogeneityCheck {
    /// `||u[2 u0]|| / (2 ||u[u0]||)` at the longest horizon.
    pub ratio: f64,
    pub doubled: MomentEstimate,
    pub within_ci: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub kind: TheoremKind,
    pub pair: AdmissiblePair,
    pub horizons: Vec<f64>,
    pub mixed_norms: Vec<MomentEstimate>,
    /// Ensemble mean of `int_window ||u||_beta^alpha dt` per dyadic window.
    pub contributions: Vec<f64>,
    /// `contribution[k+1] / contribution[k]`.
    pub increment_ratios: Vec<f64>,
    /// Mixed norm divided by `||u0||_2`.
    pub strichartz_ratios: Vec<f64>,
    pub homogeneity: Option<HomogeneityCheck>,
}

impl TheoremReport {
    pub fn saturating(&self, limit: f64) -> bool {
        self.increment_ratios.iter().all(|&r| r < limit)
    }
}

pub const THEOREM_HORIZON_FACTORS: [f64; 3] = [1.0, 2.0, 4.0];

pub fn theorem_experiment(cfg: &TheoremConfig) -> Result<TheoremReport> {
    let grid = *cfg.datum.grid();
    if !(cfg.base_horizon > 0.0) {
        return Err(invalid("horizon", "must be positive"));
    }
    let horizons: Vec<f64> = THEOREM_HORIZON_FACTORS.iter().map(|f| f * cfg.base_horizon).collect();
    let total = *horizons.last().unwrap();
    let count = (total / cfg.sample_step).round() as usize;
    let schedule = Schedule::uniform(total, count, cfg.dt)?;
    let times = schedule.times();
    let horizon_idx: Vec<usize> = horizons
        .iter()
        .map(|&h| {
            times
                .iter()
                .position(|&t| (t - h).abs() <= 1e-9 * h)
                .ok_or(Error::OffGrid { time: h })
        })
        .collect::<Result<_>>()?;
    let v = sample_potential(&cfg.potential, &grid)?;
    let (epsilon, nonlinear, n_paths) = match cfg.kind {
        TheoremKind::Linear => (cfg.epsilon, false, cfg.n_paths),
        TheoremKind::Nonlinear => (cfg.epsilon, true, cfg.n_paths),
        TheoremKind::Strichartz => (0.0, false, 1),
    };
    let params = PhysicsParams::stochastic(epsilon, v, grid.dim()).with_nonlinearity(nonlinear);
    let eval = NormEvaluator::new(&grid, NormSpec::Lebesgue { p: cfg.pair.beta })?;
    let alpha = cfg.pair.alpha;
    // Per-window trapezoid integrals of ||u||_beta^alpha.
    let integrals = |u0: &Field, path: &crate::stochastic::BrownianPath| -> Result<Vec<f64>> {
        let traj = evolve_path(u0, path, &schedule, &params)?;
        let vals: Vec<f64> = traj.snapshots.iter().map(|s| eval.eval(s.values()).powf(alpha)).collect();
        let mut out = Vec::with_capacity(horizons.len());
        let mut prev = 0usize;
        for &h in &horizon_idx {
            let w = trapezoid_weights(&times[prev..=h]);
            out.push(w.iter().zip(&vals[prev..=h]).map(|(a, b)| a * b).sum());
            prev = h;
        }
        Ok(out)
    };
    let doubled = cfg.datum.scale(Complex64::new(2.0, 0.0));
    let ens = run_ensemble(
        &EnsembleConfig {
            master_seed: cfg.master_seed,
            n_paths,
            dt: cfg.dt,
            steps: schedule.total_steps(),
            workers: cfg.workers,
        },
        |_, path| {
            let base = integrals(&cfg.datum, path)?;
            let twice = if cfg.homogeneity {
                Some(integrals(&doubled, path)?)
            } else {
                None
            };
            Ok((base, twice))
        },
    )?;
    let n = ens.len() as f64;
    let cumulative = |sel: &dyn Fn(usize) -> Option<Vec<f64>>, h: usize| -> Vec<f64> {
        (0..ens.len())
            .filter_map(|i| sel(i).map(|w| w[..=h].iter().sum::<f64>().powf(1.0 / alpha)))
            .collect()
    };
    let base_sel = |i: usize| Some(ens.results[i].0.clone());
    let twice_sel = |i: usize| ens.results[i].1.clone();
    let mixed_norms = (0..horizons.len())
        .map(|h| omega_mixed_norm(&cumulative(&base_sel, h), alpha, cfg.master_seed ^ h as u64))
        .collect::<Result<Vec<_>>>()?;
    let contributions: Vec<f64> = (0..horizons.len())
        .map(|h| ens.results.iter().map(|r| r.0[h]).sum::<f64>() / n)
        .collect();
    let increment_ratios = contributions.windows(2).map(|w| w[1] / w[0]).collect();
    let m0 = cfg.datum.l2_norm();
    let strichartz_ratios = mixed_norms
        .iter()
        .map(|m| if m0 == 0.0 { 0.0 } else { m.value / m0 })
        .collect();
    let homogeneity = if cfg.homogeneity {
        let last = horizons.len() - 1;
        let d = omega_mixed_norm(&cumulative(&twice_sel, last), alpha, cfg.master_seed ^ 0xD0)?;
        let base = mixed_norms[last];
        let target = 2.0 * base.value;
        Some(HomogeneityCheck {
            ratio: if base.value == 0.0 { 1.0 } else { d.value / target },
            doubled: d,
            within_ci: target >= d.ci.0 - 1e-12 * target && target <= d.ci.1 + 1e-12 * target,
        })
    } else {
        None
    };
    Ok(TheoremReport {
        kind: cfg.kind,
        pair: cfg.pair,
        horizons,
        mixed_norms,
        contributions,
        increment_ratios,
        strichartz_ratios,
        homogeneity,
    })
}
