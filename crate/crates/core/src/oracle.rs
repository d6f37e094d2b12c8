//! Independent references: dense generator exponentials, closed forms and
//! dt-refinement studies.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::{Field, GridSpec};
use crate::propagators::{
    evolve_path_with, PhysicsParams, Schedule, Scheme, DEFAULT_DAMPING_FACTOR, DEFAULT_ITO_STABILITY,
};
use crate::stochastic::{sample_brownian, BrownianPath};

pub const DENSE_LIMIT: usize = 64;

/// `i D2 - c_damp diag(V^2)` with `D2` the spectral second-derivative matrix,
/// assembled from an explicit sum over Fourier modes.
pub fn dense_generator(grid: &GridSpec, epsilon: f64, potential: &[f64], damping_factor: f64) -> Result<DMatrix<Complex64>> {
    if grid.dim() != 1 {
        return Err(invalid("dim", "dense oracle is one-dimensional"));
    }
    let n = grid.n();
    if n > DENSE_LIMIT {
        return Err(Error::OracleTooLarge { n, limit: DENSE_LIMIT });
    }
    if potential.len() != n {
        return Err(Error::GridMismatch("potential length".into()));
    }
    let h = grid.spacing();
    let dk = grid.dk();
    let modes: Vec<f64> = (0..n as i64).map(|m| (m - n as i64 / 2) as f64 * dk).collect();
    let c = damping_factor * epsilon * epsilon;
    let mut g = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        for l in 0..n {
            let dx = (j as f64 - l as f64) * h;
            let d2: Complex64 = modes
                .iter()
                .map(|&k| -k * k * Complex64::from_polar(1.0, k * dx))
                .sum::<Complex64>()
                / n as f64;
            g[(j, l)] = Complex64::new(0.0, 1.0) * d2;
        }
        g[(j, j)] -= Complex64::new(c * potential[j] * potential[j], 0.0);
    }
    Ok(g)
}

/// `||G + G^*|| / ||G||` (Frobenius).
pub fn skew_hermitian_defect(g: &DMatrix<Complex64>) -> f64 {
    (g + g.adjoint()).norm() / g.norm()
}

/// Largest real part of the spectrum of `G`, from its complex Schur form.
pub fn max_eigenvalue_real_part(g: &DMatrix<Complex64>) -> f64 {
    let (_, t) = g.clone().schur().unpack();
    (0..t.nrows()).map(|i| t[(i, i)].re).fold(f64::NEG_INFINITY, f64::max)
}

/// Reference `H(t) u0 = exp(t G) u0` via the dense matrix exponential.
pub fn dense_generator_evolve(u0: &Field, t: f64, epsilon: f64, potential: &[f64]) -> Result<Field> {
    dense_generator_evolve_with(u0, t, epsilon, potential, DEFAULT_DAMPING_FACTOR)
}

pub fn dense_generator_evolve_with(
    u0: &Field,
    t: f64,
    epsilon: f64,
    potential: &[f64],
    damping_factor: f64,
) -> Result<Field> {
    let g = dense_generator(u0.grid(), epsilon, potential, damping_factor)?;
    if t == 0.0 {
        return Ok(u0.clone());
    }
    let e = (g * Complex64::new(t, 0.0)).exp();
    let v = nalgebra::DVector::from_column_slice(u0.values());
    let out = e * v;
    Field::from_vec(*u0.grid(), out.as_slice().to_vec())
}

/// Truncation budget for the closed-form Gaussian on the grid.
const RESOLUTION_EXPONENT: f64 = 32.0;

/// `(1 + 4 i a t)^{-d/2} exp(-a |x|^2 / (1 + 4 i a t))`, the free evolution of `exp(-a|x|^2)`.
pub fn gaussian_closed_form(grid: &GridSpec, t: f64, a: f64) -> Result<Field> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(invalid("a", "must be positive"));
    }
    let l = grid.half_length();
    if grid.k_max().powi(2) / (4.0 * a) < RESOLUTION_EXPONENT {
        return Err(invalid("a", "Gaussian not resolved by the grid"));
    }
    if a * l * l / (1.0 + 16.0 * a * a * t * t) < RESOLUTION_EXPONENT {
        return Err(invalid("t", "Gaussian not decayed at the box boundary"));
    }
    let denom = Complex64::new(1.0, 4.0 * a * t);
    let pre = denom.powf(-(grid.dim() as f64) / 2.0);
    Ok(Field::from_fn(*grid, |x| {
        let r2: f64 = x.iter().map(|c| c * c).sum();
        pre * (-a * r2 / denom).exp()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SchemePair {
    /// Strang at `dt` against Strang at `dt_min / 16`.
    StrangSelf,
    /// Ito Euler at `dt` against Stratonovich Strang at `dt_min / 4`, shared paths.
    ItoVsStratonovich,
    /// Strang against itself.
    Identical,
}

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub pair: SchemePair,
    pub u0: Field,
    pub params: PhysicsParams,
    pub horizon: f64,
    pub dt_coarse: f64,
    pub levels: usize,
    pub seeds: Vec<u64>,
    pub ito_stability: f64,
}

impl ConvergenceConfig {
    pub fn new(pair: SchemePair, u0: Field, params: PhysicsParams, horizon: f64, dt_coarse: f64) -> Self {
        Self {
            pair,
            u0,
            params,
            horizon,
            dt_coarse,
            levels: 4,
            seeds: vec![0],
            ito_stability: DEFAULT_ITO_STABILITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub pair: SchemePair,
    pub dts: Vec<f64>,
    /// Root mean square over seeds of the relative L2 error at the horizon.
    pub errors: Vec<f64>,
    pub per_seed_errors: Vec<Vec<f64>>,
    /// Least-squares slope of `log error` against `log dt`; `None` when all errors vanish.
    pub slope: Option<f64>,
    pub per_seed_slopes: Vec<Option<f64>>,
    /// Mean over seeds of `(||u_T||^2 - ||u_0||^2) / ||u_0||^2` for the Ito scheme.
    pub mass_drift: Option<Vec<f64>>,
    pub mass_drift_slope: Option<f64>,
}

pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn final_state(cfg: &ConvergenceConfig, path: &BrownianPath, scheme: Scheme) -> Result<Field> {
    let schedule = Schedule::from_times(&[0.0, cfg.horizon], path.dt())?;
    let traj = evolve_path_with(&cfg.u0, path, &schedule, &cfg.params, scheme, &mut ())?;
    Ok(traj.snapshots.into_iter().last().expect("two snapshots"))
}

pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<RateReport> {
    if cfg.levels < 4 {
        return Err(invalid("levels", "need at least 4 dyadic levels"));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let dts: Vec<f64> = (0..cfg.levels).map(|l| cfg.dt_coarse / (1u64 << l) as f64).collect();
    let ref_factor: usize = match cfg.pair {
        SchemePair::StrangSelf => 16,
        SchemePair::ItoVsStratonovich => 4,
        SchemePair::Identical => 1,
    };
    let finest = ref_factor << (cfg.levels - 1);
    let dt_ref = cfg.dt_coarse / finest as f64;
    let coarse_steps = (cfg.horizon / cfg.dt_coarse).round() as usize;
    if ((coarse_steps as f64) * cfg.dt_coarse - cfg.horizon).abs() > 1e-9 * cfg.horizon {
        return Err(Error::ScheduleMismatch("horizon is not a whole number of coarse steps".into()));
    }
    let norm0 = cfg.u0.l2_norm();
    let mass0 = cfg.u0.mass();
    let ito = Scheme::ItoEuler {
        stability: cfg.ito_stability,
    };
    let mut per_seed_errors = Vec::with_capacity(cfg.seeds.len());
    let mut drift_sums = vec![0.0; cfg.levels];
    for &seed in &cfg.seeds {
        let fine = sample_brownian(seed, 0, dt_ref, coarse_steps * finest)?;
        let mut errs = Vec::with_capacity(cfg.levels);
        let reference = match cfg.pair {
            SchemePair::Identical => None,
            _ => Some(final_state(cfg, &fine, Scheme::Stratonovich)?),
        };
        for (l, drift) in drift_sums.iter_mut().enumerate() {
            let path = fine.coarsen(finest >> l)?;
            let err = match cfg.pair {
                SchemePair::StrangSelf => {
                    let u = final_state(cfg, &path, Scheme::Stratonovich)?;
                    u.sub(reference.as_ref().unwrap()).l2_norm() / norm0
                }
                SchemePair::ItoVsStratonovich => {
                    let u = final_state(cfg, &path, ito)?;
                    *drift += (u.mass() - mass0) / mass0;
                    u.sub(reference.as_ref().unwrap()).l2_norm() / norm0
                }
                SchemePair::Identical => {
                    let a = final_state(cfg, &path, Scheme::Stratonovich)?;
                    let b = final_state(cfg, &path, Scheme::Stratonovich)?;
                    a.sub(&b).l2_norm() / norm0
                }
            };
            errs.push(err);
        }
        per_seed_errors.push(errs);
    }
    let n = cfg.seeds.len() as f64;
    let errors: Vec<f64> = (0..cfg.levels)
        .map(|l| (per_seed_errors.iter().map(|e| e[l] * e[l]).sum::<f64>() / n).sqrt())
        .collect();
    if errors.iter().any(|e| !e.is_finite()) {
        let usable = errors.iter().filter(|e| e.is_finite()).count();
        if usable < 3 {
            return Err(Error::TooFewLevels { usable });
        }
    }
    let slope = if errors.iter().all(|&e| e == 0.0) {
        None
    } else {
        let usable = errors.iter().filter(|&&e| e > 0.0 && e.is_finite()).count();
        if usable < 3 {
            return Err(Error::TooFewLevels { usable });
        }
        fit_slope(&dts, &errors)
    };
    let per_seed_slopes = per_seed_errors.iter().map(|e| fit_slope(&dts, e)).collect();
    let (mass_drift, mass_drift_slope) = if cfg.pair == SchemePair::ItoVsStratonovich {
        let d: Vec<f64> = drift_sums.iter().map(|s| s / n).collect();
        let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
        (Some(d), fit_slope(&dts, &abs))
    } else {
        (None, None)
    };
    Ok(RateReport {
        pair: cfg.pair,
        dts,
        errors,
        per_seed_errors,
        slope,
        per_seed_slopes,
        mass_drift,
        mass_drift_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, sample_potential, PotentialSpec};
    use crate::propagators::damped_evolve;

    #[test]
    fn undamped_generator_is_skew() {
        let g = make_grid(1, 32, 8.0).unwrap();
        let v = sample_potential(&PotentialSpec::gaussian(1.0, 1.0), &g).unwrap();
        let m = dense_generator(&g, 0.0, &v, 0.5).unwrap();
        assert!(skew_hermitian_defect(&m) < 1e-12);
        let damped = dense_generator(&g, 0.3, &v, 0.5).unwrap();
        assert!(max_eigenvalue_real_part(&damped) <= 1e-10);
    }

    #[test]
    fn dense_plane_wave_and_identity() {
        let g = make_grid(1, 16, std::f64::consts::PI).unwrap();
        let v = vec![0.0; 16];
        let f = Field::from_fn(g, |x| Complex64::from_polar(1.0, 3.0 * x[0]));
        assert_eq!(dense_generator_evolve(&f, 0.0, 0.0, &v).unwrap(), f);
        let out = dense_generator_evolve(&f, 0.4, 0.0, &v).unwrap();
        let expected = f.scale(Complex64::from_polar(1.0, -9.0 * 0.4));
        assert!(out.relative_l2_distance(&expected) < 1e-10);
        assert!((out.l2_norm() - f.l2_norm()).abs() < 1e-10 * f.l2_norm());
    }

    #[test]
    fn dense_size_guard() {
        let g = make_grid(1, 128, 8.0).unwrap();
        let f = Field::zeros(g);
        assert!(matches!(
            dense_generator_evolve(&f, 1.0, 0.0, &vec![0.0; 128]),
            Err(Error::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn damped_matches_dense() {
        let g = make_grid(1, 64, 8.0).unwrap();
        let v = sample_potential(&PotentialSpec::gaussian(1.0, 1.0), &g).unwrap();
        let u0 = Field::from_fn(g, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
        let params = PhysicsParams::linear(0.2, v.clone(), 1);
        let fast = damped_evolve(&u0, 1.0, &params, 1024).unwrap();
        let dense = dense_generator_evolve(&u0, 1.0, 0.2, &v).unwrap();
        assert!(fast.relative_l2_distance(&dense) < 1e-6);
    }

    #[test]
    fn closed_form_basics() {
        let g = make_grid(1, 1024, 64.0).unwrap();
        let u0 = gaussian_closed_form(&g, 0.0, 0.5).unwrap();
        let direct = Field::from_fn(g, |x| Complex64::new((-0.5 * x[0] * x[0]).exp(), 0.0));
        assert!(u0.relative_l2_distance(&direct) < 1e-15);
        let later = gaussian_closed_form(&g, 2.0, 0.5).unwrap();
        assert!((later.l2_norm() - u0.l2_norm()).abs() < 1e-10 * u0.l2_norm());
        let peak = later.max_abs();
        assert!((peak - (1.0f64 + 16.0 * 0.25 * 4.0).powf(-0.25)).abs() < 1e-12);
        assert!(gaussian_closed_form(&make_grid(1, 16, 2.0).unwrap(), 0.0, 0.5).is_err());
    }

    #[test]
    fn identical_schemes_degenerate() {
        let g = make_grid(1, 64, 8.0).unwrap();
        let u0 = Field::from_fn(g, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
        let params = PhysicsParams::stochastic(0.0, vec![0.0; 64], 1);
        let cfg = ConvergenceConfig::new(SchemePair::Identical, u0, params, 0.1, 0.01);
        let r = convergence_study(&cfg).unwrap();
        assert!(r.errors.iter().all(|&e| e == 0.0));
        assert_eq!(r.slope, None);
        let mut few = cfg.clone();
        few.levels = 2;
        assert!(matches!(convergence_study(&few), Err(Error::InvalidParameter { name: "levels", .. })));
    }
}
