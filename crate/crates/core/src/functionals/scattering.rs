use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::propagators::{free_evolve, Trajectory};
use crate::stochastic::{bootstrap, median};

pub const MIN_SCATTERING_HORIZON: f64 = 4.0;

/// Cauchy difference `||w(t2) - w(t1)||_2` of the profile `w(t) = S(-t) u(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DyadicWindow {
    pub t1: f64,
    pub t2: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScatteringReport {
    pub windows: Vec<DyadicWindow>,
    #[serde(skip)]
    pub u_plus: Field,
    /// `||u(T) - S(T) u+||_2`, zero up to rounding.
    pub final_mismatch: f64,
    /// `||u(T/2) - S(T/2) u+||_2` (needs `T/2` on the snapshot grid).
    pub half_mismatch: Option<f64>,
}

impl ScatteringReport {
    pub fn strictly_decreasing(&self) -> bool {
        self.windows
            .windows(2)
            .all(|w| w[1].difference < w[0].difference)
    }
}

/// Dyadic windows `[2^m, 2^{m+1}]` inside `[1, T]` whose endpoints are snapshots.
pub fn dyadic_windows(traj: &Trajectory) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t1 = 1.0;
    while 2.0 * t1 <= traj.horizon() * (1.0 + 1e-12) {
        if let (Ok(a), Ok(b)) = (traj.index_of(t1), traj.index_of(2.0 * t1)) {
            out.push((a, b));
        }
        t1 *= 2.0;
    }
    out
}

pub fn scattering_diagnostic(traj: &Trajectory) -> Result<ScatteringReport> {
    let horizon = traj.horizon();
    if horizon < MIN_SCATTERING_HORIZON {
        return Err(Error::HorizonTooShort {
            horizon,
            required: MIN_SCATTERING_HORIZON,
        });
    }
    let profile = |j: usize| free_evolve(&traj.snapshots[j], -traj.times[j]);
    let windows = dyadic_windows(traj)
        .into_iter()
        .map(|(a, b)| DyadicWindow {
            t1: traj.times[a],
            t2: traj.times[b],
            difference: profile(b).sub(&profile(a)).l2_norm(),
        })
        .collect();
    let last = traj.len() - 1;
    let u_plus = profile(last);
    let final_mismatch = traj.snapshots[last].sub(&free_evolve(&u_plus, horizon)).l2_norm();
    let half_mismatch = traj
        .index_of(horizon / 2.0)
        .ok()
        .map(|j| traj.snapshots[j].sub(&free_evolve(&u_plus, traj.times[j])).l2_norm());
    Ok(ScatteringReport {
        windows,
        u_plus,
        final_mismatch,
        half_mismatch,
    })
}

/// Per-window statistics over an ensemble of paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowStatistics {
    pub t1: f64,
    pub t2: f64,
    pub median: f64,
    pub median_ci: (f64, f64),
    /// `(rho, ||difference||_{L^rho_omega})` for `rho` in 1.5 and 2.
    pub moments: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleScattering {
    pub n_paths: usize,
    pub windows: Vec<WindowStatistics>,
}

impl EnsembleScattering {
    /// Number of consecutive window pairs over which the median decreases.
    pub fn decreasing_steps(&self) -> usize {
        self.windows
            .windows(2)
            .filter(|w| w[1].median < w[0].median)
            .count()
    }

    pub fn medians_decreasing(&self) -> bool {
        self.decreasing_steps() + 1 == self.windows.len()
    }
}

pub const SCATTERING_RHOS: [f64; 2] = [1.5, 2.0];

pub fn ensemble_scattering(reports: &[ScatteringReport], seed: u64) -> Result<EnsembleScattering> {
    let first = reports.first().ok_or(Error::EmptyEnsemble)?;
    let windows = (0..first.windows.len())
        .map(|w| {
            let d: Vec<f64> = reports.iter().map(|r| r.windows[w].difference).collect();
            let boot = bootstrap(d.len(), seed ^ w as u64, |idx| {
                let pick: Vec<f64> = idx.iter().map(|&i| d[i]).collect();
                median(&pick)
            })?;
            let moments = SCATTERING_RHOS
                .iter()
                .map(|&rho| {
                    let m = d.iter().map(|x| x.powf(rho)).sum::<f64>() / d.len() as f64;
                    (rho, m.powf(1.0 / rho))
                })
                .collect();
            Ok(WindowStatistics {
                t1: first.windows[w].t1,
                t2: first.windows[w].t2,
                median: boot.estimate,
                median_ci: boot.ci,
                moments,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleScattering {
        n_paths: reports.len(),
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::propagators::{evolve_path, PhysicsParams, Schedule};
    use crate::stochastic::sample_brownian;
    use num_complex::Complex64;

    fn trajectory(horizon: f64, nonlinear: bool) -> Trajectory {
        let g = make_grid(1, 256, 32.0).unwrap();
        let u0 = Field::from_fn(g, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
        let params = PhysicsParams::stochastic(0.0, vec![0.0; 256], 1).with_nonlinearity(nonlinear);
        let schedule = Schedule::uniform(horizon, 8, 0.01).unwrap();
        let path = sample_brownian(0, 0, 0.01, schedule.total_steps()).unwrap();
        evolve_path(&u0, &path, &schedule, &params).unwrap()
    }

    #[test]
    fn free_input_has_zero_differences() {
        let r = scattering_diagnostic(&trajectory(4.0, false)).unwrap();
        assert_eq!(r.windows.len(), 2);
        assert!(r.windows.iter().all(|w| w.difference < 1e-13));
        assert!(r.final_mismatch < 1e-13);
        assert!(r.half_mismatch.unwrap() < 1e-13);
    }

    #[test]
    fn nonlinear_profile_moves() {
        let r = scattering_diagnostic(&trajectory(4.0, true)).unwrap();
        assert!(r.windows[0].difference > 1e-6);
        assert!(r.final_mismatch < 1e-12);
    }

    #[test]
    fn short_horizon_rejected() {
        assert!(matches!(
            scattering_diagnostic(&trajectory(2.0, false)),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn ensemble_statistics() {
        let r = scattering_diagnostic(&trajectory(4.0, true)).unwrap();
        let stats = ensemble_scattering(&[r.clone(), r.clone(), r], 1).unwrap();
        assert_eq!(stats.n_paths, 3);
        let w = &stats.windows[0];
        assert!((w.median - w.moments[1].1).abs() < 1e-15);
        assert!(ensemble_scattering(&[], 1).is_err());
    }
}
