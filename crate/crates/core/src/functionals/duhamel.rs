use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::grid::{Field, GridSpec};
use crate::propagators::{
    evolve_path_with, DampedPropagator, PhysicsParams, Schedule, Scheme, StepObserver, Trajectory,
};
use crate::stochastic::BrownianPath;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Left-point accumulator for `Y(b) = -i eps int_0^b H(b-s) V u(s) dB_s`,
/// advanced by `Y <- H(dt) [Y - i eps V u dB]`.
pub struct DuhamelAccumulator {
    grid: GridSpec,
    prop: DampedPropagator,
    epsilon: f64,
    potential: Arc<Vec<f64>>,
    y: Vec<Complex64>,
    history: Vec<Field>,
}

/// `H` for the model: decay rate from the noise actually applied.
pub fn model_propagator(grid: &GridSpec, params: &PhysicsParams, dt: f64) -> Result<DampedPropagator> {
    let mut hp = params.clone();
    hp.epsilon = params.effective_epsilon();
    DampedPropagator::new(grid, &hp, dt)
}

impl DuhamelAccumulator {
    pub fn new(grid: &GridSpec, params: &PhysicsParams, dt: f64) -> Result<Self> {
        Ok(Self {
            grid: *grid,
            prop: model_propagator(grid, params, dt)?,
            epsilon: params.effective_epsilon(),
            potential: params.potential.clone(),
            y: vec![Complex64::new(0.0, 0.0); grid.len()],
            history: Vec::new(),
        })
    }

    pub fn current(&self) -> &[Complex64] {
        &self.y
    }

    pub fn into_history(self) -> Vec<Field> {
        self.history
    }
}

impl StepObserver for DuhamelAccumulator {
    fn before_step(&mut self, _: usize, state: &[Complex64], db: f64) {
        if self.epsilon == 0.0 {
            return;
        }
        let c = -I * self.epsilon * db;
        for ((y, u), v) in self.y.iter_mut().zip(state).zip(self.potential.iter()) {
            *y += c * v * u;
        }
        self.prop.apply_in_place(&mut self.y, 1);
    }

    fn at_snapshot(&mut self, _: usize, _: &[Complex64]) {
        self.history.push(Field::from_raw(self.grid, self.y.clone()));
    }
}

/// A simulated path together with the accumulator history `Y(t_j)`.
#[derive(Debug, Clone)]
pub struct DuhamelRun {
    pub trajectory: Trajectory,
    pub history: Vec<Field>,
    pub propagator: DampedPropagator,
}

impl DuhamelRun {
    pub fn epsilon(&self) -> f64 {
        self.trajectory.params.effective_epsilon()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }
}

/// Stratonovich simulation with the stochastic Duhamel term tracked alongside.
pub fn simulate_with_duhamel(
    u0: &Field,
    path: &BrownianPath,
    schedule: &Schedule,
    params: &PhysicsParams,
) -> Result<DuhamelRun> {
    let grid = *u0.grid();
    let mut acc = DuhamelAccumulator::new(&grid, params, path.dt())?;
    let trajectory = evolve_path_with(u0, path, schedule, params, Scheme::Stratonovich, &mut acc)?;
    Ok(DuhamelRun {
        trajectory,
        history: acc.into_history(),
        propagator: model_propagator(&grid, params, path.dt())?,
    })
}

/// `int_a^b H(t-s) (-i eps V u(s)) dB_s = H(t-b) [Y(b) - H(b-a) Y(a)]`.
pub fn stochastic_convolution(run: &DuhamelRun, a: f64, b: f64, t: f64) -> Result<Field> {
    let traj = &run.trajectory;
    let (ia, ib, it) = (traj.index_of(a)?, traj.index_of(b)?, traj.index_of(t)?);
    if !(ia <= ib && ib <= it) {
        return Err(invalid("interval", "need a <= b <= t"));
    }
    let grid = *traj.grid();
    if ia == ib || run.epsilon() == 0.0 {
        return Ok(Field::zeros(grid));
    }
    let steps = &traj.steps;
    let mut inner = run.history[ia].values().to_vec();
    run.propagator.apply_in_place(&mut inner, steps[ib] - steps[ia]);
    let mut out: Vec<Complex64> = run.history[ib]
        .values()
        .iter()
        .zip(&inner)
        .map(|(y, h)| y - h)
        .collect();
    run.propagator.apply_in_place(&mut out, steps[it] - steps[ib]);
    Ok(Field::from_raw(grid, out))
}

/// `||u(t_j) - H(t_j) u0 - Y(t_j)||_2 / ||u0||_2` per snapshot (linear model identity).
pub fn duhamel_residual(run: &DuhamelRun) -> Result<Vec<f64>> {
    let traj = &run.trajectory;
    let u0 = &traj.snapshots[0];
    let norm0 = u0.l2_norm();
    if norm0 == 0.0 {
        return Err(Error::InvalidParameter {
            name: "u0",
            reason: "zero datum".into(),
        });
    }
    let mut free = u0.values().to_vec();
    let mut prev = 0;
    let mut out = Vec::with_capacity(traj.len());
    for (j, snap) in traj.snapshots.iter().enumerate() {
        run.propagator.apply_in_place(&mut free, traj.steps[j] - prev);
        prev = traj.steps[j];
        let diff: Vec<Complex64> = snap
            .values()
            .iter()
            .zip(&free)
            .zip(run.history[j].values())
            .map(|((u, h), y)| u - h - y)
            .collect();
        out.push(Field::from_raw(*u0.grid(), diff).l2_norm() / norm0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, sample_potential, PotentialSpec};
    use crate::stochastic::sample_brownian;

    fn setup(eps: f64, dt: f64) -> DuhamelRun {
        let g = make_grid(1, 64, 8.0).unwrap();
        let v = sample_potential(&PotentialSpec::gaussian(1.0, 1.0), &g).unwrap();
        let params = PhysicsParams::linear(eps, v, 1);
        let u0 = Field::from_fn(g, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
        let schedule = Schedule::uniform(0.5, 5, dt).unwrap();
        let path = sample_brownian(4, 0, dt / 4.0, schedule.total_steps() * 4).unwrap();
        let path = path.coarsen(4).unwrap();
        simulate_with_duhamel(&u0, &path, &schedule, &params).unwrap()
    }

    #[test]
    fn zero_noise_has_no_stochastic_term() {
        let run = setup(0.0, 0.01);
        assert!(run.history.iter().all(|y| y.max_abs() == 0.0));
        assert!(duhamel_residual(&run).unwrap().iter().all(|&r| r < 1e-13));
        assert_eq!(stochastic_convolution(&run, 0.0, 0.3, 0.5).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn degenerate_interval_is_zero() {
        let run = setup(0.2, 0.01);
        assert_eq!(stochastic_convolution(&run, 0.2, 0.2, 0.4).unwrap().max_abs(), 0.0);
        assert!(stochastic_convolution(&run, 0.3, 0.2, 0.4).is_err());
        assert!(stochastic_convolution(&run, 0.0, 0.05, 0.4).is_err());
    }

    #[test]
    fn full_interval_matches_history() {
        let run = setup(0.2, 0.01);
        let whole = stochastic_convolution(&run, 0.0, 0.5, 0.5).unwrap();
        assert!(whole.relative_l2_distance(&run.history[5]) < 1e-14);
    }

    #[test]
    fn residual_shrinks_with_dt() {
        let coarse = *duhamel_residual(&setup(0.2, 0.01)).unwrap().last().unwrap();
        let fine = *duhamel_residual(&setup(0.2, 0.0025)).unwrap().last().unwrap();
        assert!(coarse < 1e-2, "{coarse}");
        assert!(fine < 0.7 * coarse, "{coarse} {fine}");
    }
}
