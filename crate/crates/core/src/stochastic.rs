//! Brownian paths, bridge refinement, the Monte Carlo driver and the
//! empirical Burkholder check.
//!
//! Each path owns a ChaCha20 stream: key from the master seed, stream id from
//! the path index. Normals come from the polar-free Box-Muller transform, two
//! per pair of uniforms.

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::Field;
use crate::propagators::{evolve_path_with, PhysicsParams, Schedule, Scheme, StepObserver};

/// Name of the pinned normal generator, recorded in run manifests.
pub const NORMAL_GENERATOR: &str = "chacha20-stream/box-muller";

/// Stream generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normals by Box-Muller.
pub struct NormalStream<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> NormalStream<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    fn open_unit(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.open_unit();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.rng.next_u64() % n as u64) as usize
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sampled Brownian increments on a uniform step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrownianPath {
    dt: f64,
    increments: Vec<f64>,
    master_seed: u64,
    path_index: usize,
    /// Number of bridge doublings applied since sampling.
    level: u32,
}

impl BrownianPath {
    pub fn from_increments(dt: f64, increments: Vec<f64>, master_seed: u64, path_index: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if increments.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("increments"));
        }
        Ok(Self {
            dt,
            increments,
            master_seed,
            path_index,
            level: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> usize {
        self.path_index
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.len() as f64
    }

    /// `B(t_j)` for `j = 0..=M`, with `B(0) = 0`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut b = 0.0;
        out.push(b);
        for d in &self.increments {
            b += d;
            out.push(b);
        }
        out
    }

    /// Sums groups of `factor` adjacent increments by pairwise tree summation.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        check_power_of_two(factor)?;
        if self.len() % factor != 0 {
            return Err(invalid("factor", "must divide the number of increments"));
        }
        let mut inc = self.increments.clone();
        let mut f = factor;
        while f > 1 {
            inc = inc.chunks_exact(2).map(|p| p[0] + p[1]).collect();
            f /= 2;
        }
        Ok(Self {
            dt: self.dt * factor as f64,
            increments: inc,
            master_seed: self.master_seed,
            path_index: self.path_index,
            level: self.level.saturating_sub(factor.trailing_zeros()),
        })
    }
}

fn check_power_of_two(factor: usize) -> Result<()> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(invalid("factor", format!("{factor} is not a power of two")));
    }
    Ok(())
}

pub fn sample_brownian(master_seed: u64, path_index: usize, dt: f64, m: usize) -> Result<BrownianPath> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    if m == 0 {
        return Err(invalid("M", "must be >= 1"));
    }
    let mut normals = NormalStream::new(stream_rng(master_seed, path_index as u64));
    let s = dt.sqrt();
    let increments = (0..m).map(|_| to_lattice(s * normals.next_normal())).collect();
    Ok(BrownianPath {
        dt,
        increments,
        master_seed,
        path_index,
        level: 0,
    })
}

/// Sampled increments live on the lattice `LATTICE * Z`; sums of lattice values
/// below 2^5 in magnitude are exact, which makes bridge refinement reversible.
pub const LATTICE: f64 = 1.0 / (1u64 << 48) as f64;

fn to_lattice(x: f64) -> f64 {
    (x / LATTICE).round() * LATTICE
}

/// Splits `total` into `(a, b)` with `a + b == total` exactly in floating point.
fn exact_split(total: f64, a: f64) -> (f64, f64) {
    let a = to_lattice(a);
    let b = total - a;
    if a + b == total && b - to_lattice(b) == 0.0 {
        (a, b)
    } else {
        (total / 2.0, total / 2.0)
    }
}

/// Inserts Brownian-bridge midpoints until the step is `dt / factor`.
pub fn refine_brownian(path: &BrownianPath, factor: usize) -> Result<BrownianPath> {
    check_power_of_two(factor)?;
    let mut out = path.clone();
    let mut f = factor;
    while f > 1 {
        let level = out.level + 1;
        let seed = splitmix(out.master_seed ^ splitmix(level as u64));
        let mut normals = NormalStream::new(stream_rng(seed, out.path_index as u64));
        let sd = (out.dt / 4.0).sqrt();
        let mut inc = Vec::with_capacity(2 * out.len());
        for &total in &out.increments {
            let (a, b) = exact_split(total, total / 2.0 + sd * normals.next_normal());
            inc.push(a);
            inc.push(b);
        }
        out = BrownianPath {
            dt: out.dt / 2.0,
            increments: inc,
            master_seed: out.master_seed,
            path_index: out.path_index,
            level,
        };
        f /= 2;
    }
    Ok(out)
}

/// Pairwise summation; the tree shape depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean as `x_0 + mean(x - x_0)`, exact for constant data.
pub fn pairwise_mean(xs: &[f64]) -> f64 {
    let Some(&x0) = xs.first() else {
        return f64::NAN;
    };
    let shifted: Vec<f64> = xs.iter().map(|x| x - x0).collect();
    x0 + pairwise_sum(&shifted) / xs.len() as f64
}

/// Driver settings for one ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub master_seed: u64,
    pub n_paths: usize,
    pub dt: f64,
    pub steps: usize,
    pub workers: usize,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::EmptyEnsemble);
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if self.steps == 0 {
            return Err(invalid("steps", "must be >= 1"));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be >= 1"));
        }
        Ok(())
    }
}

/// Per-path outputs in path-index order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEnsemble<T> {
    pub master_seed: u64,
    pub results: Vec<T>,
}

impl<T> McEnsemble<T> {
    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

impl McEnsemble<f64> {
    pub fn mean(&self) -> f64 {
        pairwise_mean(&self.results)
    }

    pub fn summary(&self, bootstrap_seed: u64) -> Result<Summary> {
        summarize(&self.results, bootstrap_seed)
    }
}

/// Runs `evaluator` on every path. Output order and values are independent of `workers`.
pub fn run_ensemble<T, F>(config: &EnsembleConfig, evaluator: F) -> Result<McEnsemble<T>>
where
    T: Send,
    F: Fn(usize, &BrownianPath) -> Result<T> + Sync,
{
    config.validate()?;
    let job = |i: usize| -> Result<T> {
        let path = sample_brownian(config.master_seed, i, config.dt, config.steps)?;
        evaluator(i, &path).map_err(|e| match e {
            Error::PathFailed { .. } => e,
            other => Error::PathFailed {
                index: i,
                message: other.to_string(),
            },
        })
    };
    let outcomes: Vec<Result<T>> = if config.workers == 1 {
        (0..config.n_paths).map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?;
        pool.install(|| (0..config.n_paths).into_par_iter().map(job).collect())
    };
    let mut results = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        results.push(o?);
    }
    Ok(McEnsemble {
        master_seed: config.master_seed,
        results,
    })
}

/// Moments, quantiles and a bootstrap interval for the mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub std_error: f64,
    pub min: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    pub max: f64,
    pub mean_ci: (f64, f64),
}

pub const BOOTSTRAP_RESAMPLES: usize = 400;

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

/// Percentile bootstrap of `stat` over resampled indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
}

pub fn bootstrap<F>(n: usize, seed: u64, stat: F) -> Result<BootstrapEstimate>
where
    F: Fn(&[usize]) -> f64,
{
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let all: Vec<usize> = (0..n).collect();
    let estimate = stat(&all);
    let mut normals = NormalStream::new(stream_rng(seed, u64::MAX));
    let mut reps = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut idx = vec![0usize; n];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for slot in idx.iter_mut() {
            *slot = normals.below(n);
        }
        reps.push(stat(&idx));
    }
    let mean = pairwise_mean(&reps);
    let var = reps.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
    reps.sort_by(f64::total_cmp);
    Ok(BootstrapEstimate {
        estimate,
        std_error: var.sqrt(),
        ci: (quantile_sorted(&reps, 0.025), quantile_sorted(&reps, 0.975)),
    })
}

pub fn summarize(xs: &[f64], bootstrap_seed: u64) -> Result<Summary> {
    if xs.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let n = xs.len();
    let mean = pairwise_mean(xs);
    let var = if n > 1 {
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
        pairwise_sum(&dev) / (n - 1) as f64
    } else {
        0.0
    };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let boot = bootstrap(n, bootstrap_seed, |idx| {
        let pick: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
        pairwise_mean(&pick)
    })?;
    Ok(Summary {
        n,
        mean,
        std_dev: var.sqrt(),
        std_error: (var / n as f64).sqrt(),
        min: sorted[0],
        median: quantile_sorted(&sorted, 0.5),
        q05: quantile_sorted(&sorted, 0.05),
        q95: quantile_sorted(&sorted, 0.95),
        max: sorted[n - 1],
        mean_ci: boot.ci,
    })
}

/// Integrand families for the Burkholder check.
#[derive(Debug, Clone)]
pub enum PhiSpec {
    Zero,
    /// `Phi(s, x) = g(x) * cos(omega s)`; `omega = 0` gives a constant profile.
    Deterministic { profile: Field, omega: f64 },
    /// `Phi(s) = V u(s)` along the Stratonovich solution from `u0`.
    Adapted { u0: Field, params: PhysicsParams },
}

#[derive(Debug, Clone)]
pub struct BurkholderConfig {
    pub phi: PhiSpec,
    pub rho: f64,
    pub p: f64,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Number of snapshot intervals on `[0, T]`.
    pub snapshots: usize,
    pub master_seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BurkholderReport {
    pub rho: f64,
    pub p: f64,
    pub n_paths: usize,
    /// `sup` over snapshot pairs `a < b` of LHS/RHS.
    pub sup_ratio: f64,
    pub sup_ci: (f64, f64),
    /// Median over snapshot pairs of LHS/RHS.
    pub median_ratio: f64,
    /// Ratio on the full interval `[0, T]`.
    pub full_ratio: f64,
    pub full_std_error: f64,
    pub full_ci: (f64, f64),
    /// Pairs `(a, b, ratio)` on the snapshot grid.
    pub pairs: Vec<(f64, f64, f64)>,
}

fn lp_norm(data: &[Complex64], p: f64, cell: f64) -> f64 {
    if p == 2.0 {
        return (cell * data.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
    }
    (cell * data.iter().map(|z| z.norm().powf(p)).sum::<f64>()).powf(1.0 / p)
}

struct PathRecord {
    /// `||I(a,b)||_p` per pair.
    lhs: Vec<f64>,
    /// `int_a^b ||Phi||_p^2 ds` per pair.
    quad: Vec<f64>,
}

struct IntegralObserver<'a> {
    profile: &'a [f64],
    omega: Option<f64>,
    dt: f64,
    p: f64,
    cell: f64,
    running: Vec<Complex64>,
    quad: f64,
    cumulative: Vec<Vec<Complex64>>,
    quad_at: Vec<f64>,
}

impl StepObserver for IntegralObserver<'_> {
    fn before_step(&mut self, step: usize, state: &[Complex64], db: f64) {
        let (norm, coeff);
        match self.omega {
            Some(w) => {
                let m = (w * step as f64 * self.dt).cos();
                coeff = m * db;
                let phi: Vec<Complex64> = state.iter().map(|z| z * m).collect();
                norm = lp_norm(&phi, self.p, self.cell);
                for (acc, z) in self.running.iter_mut().zip(state) {
                    *acc += z * coeff;
                }
            }
            None => {
                let phi: Vec<Complex64> = state.iter().zip(self.profile).map(|(z, v)| z * v).collect();
                norm = lp_norm(&phi, self.p, self.cell);
                for (acc, f) in self.running.iter_mut().zip(&phi) {
                    *acc += f * db;
                }
            }
        }
        self.quad += norm * norm * self.dt;
    }

    fn at_snapshot(&mut self, _: usize, _: &[Complex64]) {
        self.cumulative.push(self.running.clone());
        self.quad_at.push(self.quad);
    }
}

fn pair_list(k: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            v.push((a, b));
        }
    }
    v
}

/// Empirical ratio `||int_a^b Phi dB||_{L^rho L^p} / ||(int_a^b ||Phi||_p^2)^{1/2}||_{L^rho}`.
pub fn burkholder_check(cfg: &BurkholderConfig) -> Result<BurkholderReport> {
    if !(cfg.rho.is_finite() && cfg.rho > 1.0) {
        return Err(invalid("rho", "must lie in (1, inf)"));
    }
    if !(cfg.p >= 2.0 && cfg.p.is_finite()) {
        return Err(invalid("p", "must lie in [2, inf)"));
    }
    if cfg.snapshots == 0 {
        return Err(invalid("snapshots", "must be >= 1"));
    }
    let schedule = Schedule::uniform(cfg.horizon, cfg.snapshots, cfg.dt)?;
    let pairs = pair_list(schedule.steps().len());
    let times = schedule.times();
    let steps = schedule.total_steps();
    let ens = EnsembleConfig {
        master_seed: cfg.master_seed,
        n_paths: cfg.n_paths,
        dt: cfg.dt,
        steps,
        workers: cfg.workers,
    };
    let record = |_: usize, path: &BrownianPath| -> Result<PathRecord> {
        let (u0, params, profile, omega) = match &cfg.phi {
            PhiSpec::Zero => {
                return Ok(PathRecord {
                    lhs: vec![0.0; pairs.len()],
                    quad: vec![0.0; pairs.len()],
                })
            }
            PhiSpec::Deterministic { profile, omega } => {
                // Frozen state: no dynamics, the "state" is the profile itself.
                let v = vec![0.0; profile.grid().len()];
                let params = PhysicsParams::linear(0.0, v, profile.grid().dim());
                (profile.clone(), params, Vec::new(), Some(*omega))
            }
            PhiSpec::Adapted { u0, params } => (
                u0.clone(),
                params.clone(),
                params.potential.to_vec(),
                None,
            ),
        };
        let grid = *u0.grid();
        let mut obs = IntegralObserver {
            profile: &profile,
            omega,
            dt: cfg.dt,
            p: cfg.p,
            cell: grid.cell_volume(),
            running: vec![Complex64::new(0.0, 0.0); grid.len()],
            quad: 0.0,
            cumulative: Vec::new(),
            quad_at: Vec::new(),
        };
        if omega.is_some() {
            frozen_loop(&u0, path, &schedule, &mut obs);
        } else {
            evolve_path_with(&u0, path, &schedule, &params, Scheme::Stratonovich, &mut obs)?;
        }
        let mut lhs = Vec::with_capacity(pairs.len());
        let mut quad = Vec::with_capacity(pairs.len());
        let mut diff = vec![Complex64::new(0.0, 0.0); grid.len()];
        for &(a, b) in &pairs {
            for ((d, x), y) in diff.iter_mut().zip(&obs.cumulative[b]).zip(&obs.cumulative[a]) {
                *d = x - y;
            }
            lhs.push(lp_norm(&diff, cfg.p, obs.cell));
            quad.push(obs.quad_at[b] - obs.quad_at[a]);
        }
        Ok(PathRecord { lhs, quad })
    };
    let ens = run_ensemble(&ens, record)?;
    let n = ens.len();
    let rho = cfg.rho;
    let ratio_for = |pair: usize, idx: &[usize]| -> f64 {
        let l: Vec<f64> = idx.iter().map(|&i| ens.results[i].lhs[pair].powf(rho)).collect();
        let r: Vec<f64> = idx.iter().map(|&i| ens.results[i].quad[pair].powf(rho / 2.0)).collect();
        let rhs = pairwise_mean(&r).powf(1.0 / rho);
        if rhs == 0.0 {
            0.0
        } else {
            pairwise_mean(&l).powf(1.0 / rho) / rhs
        }
    };
    let sup_over = |idx: &[usize]| (0..pairs.len()).map(|k| ratio_for(k, idx)).fold(0.0, f64::max);
    let sup = bootstrap(n, cfg.master_seed, sup_over)?;
    let full_pair = pairs
        .iter()
        .position(|&(a, b)| a == 0 && b == times.len() - 1)
        .expect("full interval is a pair");
    let full = bootstrap(n, cfg.master_seed ^ 1, |idx| ratio_for(full_pair, idx))?;
    let all: Vec<usize> = (0..n).collect();
    let pair_ratios: Vec<(f64, f64, f64)> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| (times[a], times[b], ratio_for(k, &all)))
        .collect();
    let ratios: Vec<f64> = pair_ratios.iter().map(|p| p.2).collect();
    Ok(BurkholderReport {
        rho,
        p: cfg.p,
        n_paths: n,
        sup_ratio: sup.estimate,
        sup_ci: sup.ci,
        median_ratio: median(&ratios),
        full_ratio: full.estimate,
        full_std_error: full.std_error,
        full_ci: full.ci,
        pairs: pair_ratios,
    })
}

fn frozen_loop(profile: &Field, path: &BrownianPath, schedule: &Schedule, obs: &mut dyn StepObserver) {
    let inc = path.increments();
    let state = profile.values();
    let mut step = 0;
    for (k, &target) in schedule.steps().iter().enumerate() {
        while step < target {
            obs.before_step(step, state, inc[step]);
            step += 1;
        }
        obs.at_snapshot(k, state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_brownian(7, 3, 0.01, 1000).unwrap();
        let b = sample_brownian(7, 3, 0.01, 1000).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_brownian(7, 4, 0.01, 1000).unwrap());
        assert!(sample_brownian(7, 0, 0.0, 10).is_err());
        assert!(sample_brownian(7, 0, 0.1, 0).is_err());
    }

    #[test]
    fn standard_normal_moments() {
        let m = 1_000_000;
        let p = sample_brownian(42, 0, 1.0, m).unwrap();
        let mean = pairwise_mean(p.increments());
        let var = p.increments().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!(mean.abs() < 3.0 / (m as f64).sqrt());
        assert!((var - 1.0).abs() < 3.0 * (2.0 / m as f64).sqrt());
    }

    #[test]
    fn streams_uncorrelated() {
        let m = 100_000;
        let a = sample_brownian(42, 0, 1.0, m).unwrap();
        let b = sample_brownian(42, 1, 1.0, m).unwrap();
        let c: f64 = a.increments().iter().zip(b.increments()).map(|(x, y)| x * y).sum::<f64>() / m as f64;
        assert!(c.abs() < 4.0 / (m as f64).sqrt());
    }

    #[test]
    fn cumulative_starts_at_zero() {
        let p = sample_brownian(1, 1, 0.5, 5).unwrap();
        let b = p.cumulative();
        assert_eq!(b[0], 0.0);
        assert_eq!(b.len(), 6);
        assert!((b[5] - p.increments().iter().sum::<f64>()).abs() < 1e-14);
    }

    #[test]
    fn refine_then_coarsen_is_identity() {
        let p = sample_brownian(9, 2, 0.1, 500).unwrap();
        assert_eq!(refine_brownian(&p, 1).unwrap(), p);
        for f in [2, 4, 16] {
            let r = refine_brownian(&p, f).unwrap();
            assert_eq!(r.len(), 500 * f);
            assert_eq!(r.coarsen(f).unwrap().increments(), p.increments());
        }
        assert!(refine_brownian(&p, 3).is_err());
        assert!(refine_brownian(&p, 0).is_err());
    }

    #[test]
    fn bridge_midpoint_variance() {
        let dt = 0.2;
        let p = sample_brownian(5, 0, dt, 100_000).unwrap();
        let r = refine_brownian(&p, 2).unwrap();
        let dev: Vec<f64> = p
            .increments()
            .iter()
            .zip(r.increments().chunks_exact(2))
            .map(|(t, ab)| ab[0] - t / 2.0)
            .collect();
        let n = dev.len() as f64;
        let var = dev.iter().map(|x| x * x).sum::<f64>() / n;
        let target = dt / 4.0;
        let zeros = dev.iter().filter(|x| **x == 0.0).count();
        assert!((var - target).abs() < 4.0 * target * (2.0 / n).sqrt(), "{var} {target} {zeros}");
    }

    #[test]
    fn ensemble_determinism_across_workers() {
        let cfg = EnsembleConfig {
            master_seed: 3,
            n_paths: 64,
            dt: 0.01,
            steps: 100,
            workers: 1,
        };
        let eval = |_: usize, p: &BrownianPath| Ok(p.increments().iter().map(|x| x * x).sum::<f64>());
        let a = run_ensemble(&cfg, eval).unwrap();
        let b = run_ensemble(&EnsembleConfig { workers: 4, ..cfg }, eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mean().to_bits(), b.mean().to_bits());
        let direct = sample_brownian(3, 5, 0.01, 100).unwrap();
        assert_eq!(a.results[5], eval(5, &direct).unwrap());
    }

    #[test]
    fn constant_evaluator_mean_exact() {
        let cfg = EnsembleConfig {
            master_seed: 0,
            n_paths: 37,
            dt: 0.1,
            steps: 1,
            workers: 2,
        };
        let e = run_ensemble(&cfg, |_, _| Ok(0.3)).unwrap();
        assert_eq!(e.mean(), 0.3);
        let s = e.summary(1).unwrap();
        assert_eq!(s.mean_ci, (0.3, 0.3));
    }

    #[test]
    fn failing_path_reports_lowest_index() {
        let cfg = EnsembleConfig {
            master_seed: 0,
            n_paths: 20,
            dt: 0.1,
            steps: 1,
            workers: 3,
        };
        let err = run_ensemble(&cfg, |i, _| {
            if i == 7 || i == 13 {
                Err(Error::NonFinite("test"))
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::PathFailed { index: 7, .. }));
        assert!(matches!(
            run_ensemble(&EnsembleConfig { n_paths: 0, ..cfg }, |_, _| Ok(0)),
            Err(Error::EmptyEnsemble)
        ));
    }

    #[test]
    fn zero_integrand_ratio_zero() {
        let cfg = BurkholderConfig {
            phi: PhiSpec::Zero,
            rho: 2.0,
            p: 2.0,
            n_paths: 4,
            horizon: 1.0,
            dt: 0.1,
            snapshots: 2,
            master_seed: 1,
            workers: 1,
        };
        let r = burkholder_check(&cfg).unwrap();
        assert_eq!(r.sup_ratio, 0.0);
        assert!(burkholder_check(&BurkholderConfig { rho: 1.0, ..cfg.clone() }).is_err());
        assert!(burkholder_check(&BurkholderConfig { p: 1.5, ..cfg }).is_err());
    }

    #[test]
    fn isometry_ratio_near_one() {
        let g = make_grid(1, 32, 4.0).unwrap();
        let profile = Field::from_fn(g, |x| Complex64::new((-x[0] * x[0]).exp(), 0.0));
        let cfg = BurkholderConfig {
            phi: PhiSpec::Deterministic { profile, omega: 0.0 },
            rho: 2.0,
            p: 2.0,
            n_paths: 256,
            horizon: 1.0,
            dt: 0.05,
            snapshots: 4,
            master_seed: 42,
            workers: 1,
        };
        let r = burkholder_check(&cfg).unwrap();
        assert!((r.full_ratio - 1.0).abs() < 3.0 * r.full_std_error, "{r:?}");
    }
}
