//! Evolution operators and time steppers.
//!
//! Convention: `i u_t + Laplacian u = |u|^{p-1} u + eps V u o dB`, so the free
//! flow has symbol `exp(-i|k|^2 t)`. The damped propagator `H(t)` solves
//! `v_t = i Laplacian v - c_damp V^2 v` with `c_damp = damping_factor * eps^2`
//! (factor 1/2 by default, which matches the Ito correction).
//!
//! The Stratonovich stepper is the Strang composition
//! `free(dt/2) -> nonlinear phase(dt) -> noise phase(dB) -> free(dt/2)`; every
//! substep is an L2 isometry. The Ito stepper is explicit Euler-Maruyama and
//! exists as a cross-check only.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::{Field, GridSpec};
use crate::spectral::{apply_table_in_place, fft_nd, Symbol};
use crate::stochastic::BrownianPath;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Physical parameters of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsParams {
    pub epsilon: f64,
    /// Nonlinearity exponent `p` in `|u|^{p-1} u`.
    pub power: f64,
    /// Sampled real potential `V`.
    pub potential: Arc<Vec<f64>>,
    /// `c_damp = damping_factor * eps^2`.
    pub damping_factor: f64,
    pub nonlinearity: bool,
    pub noise: bool,
    /// Adds the `-c_damp V^2` decay to the Strang stepper (damped NLS).
    pub damping: bool,
}

/// Default ratio `c_damp / eps^2`.
pub const DEFAULT_DAMPING_FACTOR: f64 = 0.5;

/// Default bound on `dt * |k_max|^2` for the explicit Ito stepper.
pub const DEFAULT_ITO_STABILITY: f64 = 0.25;

pub fn mass_critical_power(dim: usize) -> f64 {
    1.0 + 4.0 / dim as f64
}

impl PhysicsParams {
    /// Stochastic mass-critical NLS with the given potential.
    pub fn stochastic(epsilon: f64, potential: Vec<f64>, dim: usize) -> Self {
        Self {
            epsilon,
            power: mass_critical_power(dim),
            potential: Arc::new(potential),
            damping_factor: DEFAULT_DAMPING_FACTOR,
            nonlinearity: true,
            noise: true,
            damping: false,
        }
    }

    /// Linear model: nonlinearity off, noise on.
    pub fn linear(epsilon: f64, potential: Vec<f64>, dim: usize) -> Self {
        Self {
            nonlinearity: false,
            ..Self::stochastic(epsilon, potential, dim)
        }
    }

    pub fn with_nonlinearity(mut self, on: bool) -> Self {
        self.nonlinearity = on;
        self
    }

    pub fn with_noise(mut self, on: bool) -> Self {
        self.noise = on;
        self
    }

    pub fn with_damping(mut self, on: bool) -> Self {
        self.damping = on;
        self
    }

    pub fn c_damp(&self) -> f64 {
        self.damping_factor * self.epsilon * self.epsilon
    }

    /// Noise amplitude actually applied (zero when the noise switch is off).
    pub fn effective_epsilon(&self) -> f64 {
        if self.noise {
            self.epsilon
        } else {
            0.0
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(invalid("epsilon", "must be >= 0"));
        }
        if !(self.power.is_finite() && self.power >= 1.0) {
            return Err(invalid("power", "must be >= 1"));
        }
        if !(self.damping_factor.is_finite() && self.damping_factor >= 0.0) {
            return Err(invalid("damping_factor", "must be >= 0"));
        }
        if self.potential.len() != grid.len() {
            return Err(Error::GridMismatch("potential length".into()));
        }
        if self.potential.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential"));
        }
        Ok(())
    }

    fn decay_is_trivial(&self) -> bool {
        let c = self.c_damp();
        c == 0.0 || self.potential.iter().all(|&v| v == 0.0)
    }
}

fn free_table(grid: &GridSpec, t: f64) -> Vec<Complex64> {
    grid.k_squared()
        .into_iter()
        .map(|k2| Complex64::from_polar(1.0, -k2 * t))
        .collect()
}

/// `S(t) = exp(i t Laplacian)`; `t` may be negative.
pub fn free_evolve(field: &Field, t: f64) -> Field {
    if t == 0.0 {
        return field.clone();
    }
    let grid = *field.grid();
    let mut data = field.values().to_vec();
    apply_table_in_place(&grid, &mut data, &free_table(&grid, t));
    Field::from_raw(grid, data)
}

/// Precomputed Strang factorization of `H(dt)`, applied a whole number of times.
#[derive(Debug, Clone)]
pub struct DampedPropagator {
    grid: GridSpec,
    dt: f64,
    half: Vec<Complex64>,
    full: Vec<Complex64>,
    decay: Option<Vec<f64>>,
}

impl DampedPropagator {
    pub fn new(grid: &GridSpec, params: &PhysicsParams, dt: f64) -> Result<Self> {
        params.validate(grid)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        let decay = if params.decay_is_trivial() {
            None
        } else {
            let c = params.c_damp();
            Some(
                params
                    .potential
                    .iter()
                    .map(|v| (-c * v * v * dt).exp())
                    .collect(),
            )
        };
        Ok(Self {
            grid: *grid,
            dt,
            half: free_table(grid, dt / 2.0),
            full: free_table(grid, dt),
            decay,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Applies `H(steps * dt)` in place.
    pub fn apply_in_place(&self, data: &mut [Complex64], steps: usize) {
        if steps == 0 {
            return;
        }
        let Some(decay) = &self.decay else {
            let table = free_table(&self.grid, self.dt * steps as f64);
            apply_table_in_place(&self.grid, data, &table);
            return;
        };
        apply_table_in_place(&self.grid, data, &self.half);
        for s in 0..steps {
            for (z, r) in data.iter_mut().zip(decay) {
                *z *= r;
            }
            let table = if s + 1 == steps { &self.half } else { &self.full };
            apply_table_in_place(&self.grid, data, table);
        }
    }

    pub fn apply(&self, field: &Field, steps: usize) -> Field {
        let mut data = field.values().to_vec();
        self.apply_in_place(&mut data, steps);
        Field::from_raw(self.grid, data)
    }
}

/// `H(t)` by Strang splitting of the free flow and the exact pointwise decay.
pub fn damped_evolve(
    field: &Field,
    t: f64,
    params: &PhysicsParams,
    n_substeps: usize,
) -> Result<Field> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(invalid("t", "damped evolution needs t >= 0"));
    }
    if n_substeps == 0 {
        return Err(invalid("n_substeps", "must be >= 1"));
    }
    params.validate(field.grid())?;
    if t == 0.0 {
        return Ok(field.clone());
    }
    if params.decay_is_trivial() {
        return Ok(free_evolve(field, t));
    }
    let prop = DampedPropagator::new(field.grid(), params, t / n_substeps as f64)?;
    Ok(prop.apply(field, n_substeps))
}

fn nonlinear_phase_in_place(data: &mut [Complex64], dt: f64, power: f64) {
    let half_exp = (power - 1.0) / 2.0;
    for z in data.iter_mut() {
        let m2 = z.norm_sqr();
        let rate = if half_exp == 2.0 {
            m2 * m2
        } else if half_exp == 1.0 {
            m2
        } else {
            m2.powf(half_exp)
        };
        *z *= Complex64::from_polar(1.0, -rate * dt);
    }
}

/// Exact flow of `i u_t = |u|^{p-1} u`: `u <- exp(-i |u|^{p-1} dt) u`.
pub fn nonlinear_phase_step(field: &Field, dt: f64, power: f64) -> Field {
    let mut data = field.values().to_vec();
    nonlinear_phase_in_place(&mut data, dt, power);
    Field::from_raw(*field.grid(), data)
}

fn noise_phase_in_place(data: &mut [Complex64], db: f64, epsilon: f64, potential: &[f64]) {
    if db == 0.0 || epsilon == 0.0 {
        return;
    }
    for (z, v) in data.iter_mut().zip(potential) {
        *z *= Complex64::from_polar(1.0, -epsilon * v * db);
    }
}

/// Exact Stratonovich flow of `i du = eps V u o dB`: `u <- exp(-i eps V dB) u`.
pub fn noise_phase_step(field: &Field, db: f64, epsilon: f64, potential: &[f64]) -> Field {
    let mut data = field.values().to_vec();
    noise_phase_in_place(&mut data, db, epsilon, potential);
    Field::from_raw(*field.grid(), data)
}

/// Strang split-step for the Stratonovich equation with fixed `dt`.
#[derive(Debug, Clone)]
pub struct StrangStepper {
    grid: GridSpec,
    params: PhysicsParams,
    dt: f64,
    half: Vec<Complex64>,
    decay: Option<Vec<f64>>,
}

impl StrangStepper {
    pub fn new(grid: &GridSpec, params: &PhysicsParams, dt: f64) -> Result<Self> {
        params.validate(grid)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        let decay = (params.damping && !params.decay_is_trivial()).then(|| {
            let c = params.c_damp();
            params
                .potential
                .iter()
                .map(|v| (-c * v * v * dt).exp())
                .collect()
        });
        Ok(Self {
            grid: *grid,
            params: params.clone(),
            dt,
            half: free_table(grid, dt / 2.0),
            decay,
        })
    }

    pub fn step_in_place(&self, data: &mut [Complex64], db: f64) {
        apply_table_in_place(&self.grid, data, &self.half);
        if self.params.nonlinearity {
            nonlinear_phase_in_place(data, self.dt, self.params.power);
        }
        if let Some(decay) = &self.decay {
            for (z, r) in data.iter_mut().zip(decay) {
                *z *= r;
            }
        }
        noise_phase_in_place(
            data,
            db,
            self.params.effective_epsilon(),
            &self.params.potential,
        );
        apply_table_in_place(&self.grid, data, &self.half);
    }
}

pub fn stratonovich_step(
    field: &Field,
    dt: f64,
    db: f64,
    params: &PhysicsParams,
) -> Result<Field> {
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    let stepper = StrangStepper::new(field.grid(), params, dt)?;
    let mut data = field.values().to_vec();
    stepper.step_in_place(&mut data, db);
    Ok(Field::from_raw(*field.grid(), data))
}

/// Explicit Euler-Maruyama for the Ito form, left-point noise evaluation.
#[derive(Debug, Clone)]
pub struct ItoEulerStepper {
    grid: GridSpec,
    params: PhysicsParams,
    dt: f64,
    laplacian: Vec<Complex64>,
}

impl ItoEulerStepper {
    pub fn new(grid: &GridSpec, params: &PhysicsParams, dt: f64, stability: f64) -> Result<Self> {
        params.validate(grid)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        let k_max_sq = grid.dim() as f64 * grid.k_max().powi(2);
        if dt * k_max_sq > stability {
            return Err(Error::Unstable {
                value: dt * k_max_sq,
                limit: stability,
            });
        }
        let norm = 1.0 / grid.len() as f64;
        Ok(Self {
            grid: *grid,
            params: params.clone(),
            dt,
            laplacian: grid
                .k_squared()
                .into_iter()
                .map(|k2| Complex64::new(-k2 * norm, 0.0))
                .collect(),
        })
    }

    pub fn step_in_place(&self, data: &mut [Complex64], db: f64) {
        let mut lap = data.to_vec();
        fft_nd(&self.grid, &mut lap, false);
        for (z, s) in lap.iter_mut().zip(&self.laplacian) {
            *z *= s;
        }
        fft_nd(&self.grid, &mut lap, true);
        let dt = self.dt;
        let eps = self.params.effective_epsilon();
        let correction = 0.5 * eps * eps;
        let half_exp = (self.params.power - 1.0) / 2.0;
        for ((z, l), v) in data.iter_mut().zip(&lap).zip(self.params.potential.iter()) {
            let u = *z;
            let mut drift = I * l - correction * v * v * u;
            if self.params.nonlinearity {
                drift -= I * u.norm_sqr().powf(half_exp) * u;
            }
            *z = u + dt * drift - I * eps * v * u * db;
        }
    }
}

pub fn ito_euler_step(
    field: &Field,
    dt: f64,
    db: f64,
    params: &PhysicsParams,
    stability: f64,
) -> Result<Field> {
    let stepper = ItoEulerStepper::new(field.grid(), params, dt, stability)?;
    let mut data = field.values().to_vec();
    stepper.step_in_place(&mut data, db);
    Ok(Field::from_raw(*field.grid(), data))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Scheme {
    Stratonovich,
    ItoEuler { stability: f64 },
}

/// Snapshot times expressed as whole numbers of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    dt: f64,
    steps: Vec<usize>,
}

impl Schedule {
    /// Validates `times` against step size `dt`: starts at 0, strictly increasing, whole steps.
    pub fn from_times(times: &[f64], dt: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::ScheduleMismatch("empty schedule".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::ScheduleMismatch("schedule must start at t = 0".into()));
        }
        let mut steps = Vec::with_capacity(times.len());
        for &t in times {
            let k = (t / dt).round();
            if !t.is_finite() || (k * dt - t).abs() > 1e-9 * t.abs().max(1.0) {
                return Err(Error::ScheduleMismatch(format!(
                    "time {t} is not a whole number of steps of {dt}"
                )));
            }
            let k = k as usize;
            if let Some(&prev) = steps.last() {
                if k <= prev {
                    return Err(Error::ScheduleMismatch("times must increase".into()));
                }
            }
            steps.push(k);
        }
        Ok(Self { dt, steps })
    }

    /// `count + 1` equally spaced snapshots on `[0, horizon]`.
    pub fn uniform(horizon: f64, count: usize, dt: f64) -> Result<Self> {
        let times: Vec<f64> = (0..=count)
            .map(|j| horizon * j as f64 / count.max(1) as f64)
            .collect();
        if count == 0 {
            return Self::from_times(&[0.0], dt);
        }
        Self::from_times(&times, dt)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&k| k as f64 * self.dt).collect()
    }

    pub fn total_steps(&self) -> usize {
        *self.steps.last().unwrap_or(&0)
    }
}

/// Hook into the time loop. `before_step` sees the state at step `step`
/// together with the increment about to be applied.
pub trait StepObserver {
    fn before_step(&mut self, step: usize, state: &[Complex64], db: f64);
    fn at_snapshot(&mut self, snapshot: usize, state: &[Complex64]);
}

impl StepObserver for () {
    fn before_step(&mut self, _: usize, _: &[Complex64], _: f64) {}
    fn at_snapshot(&mut self, _: usize, _: &[Complex64]) {}
}

/// Time-stamped snapshots of one path.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    pub snapshots: Vec<Field>,
    /// `||u(t_j)||_2^2` per snapshot.
    pub mass: Vec<f64>,
    pub dt: f64,
    pub path_index: usize,
    pub master_seed: u64,
    pub params: PhysicsParams,
}

impl Trajectory {
    pub fn grid(&self) -> &GridSpec {
        self.snapshots[0].grid()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Snapshot index of time `t` (exact up to rounding of the step grid).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .ok_or(Error::OffGrid { time: t })
    }

    /// Largest relative deviation of `||u(t)||_2` from `||u_0||_2`.
    pub fn max_relative_mass_drift(&self) -> f64 {
        let m0 = self.mass[0].sqrt();
        self.mass
            .iter()
            .map(|m| (m.sqrt() - m0).abs() / m0)
            .fold(0.0, f64::max)
    }
}

/// Stratonovich trajectory driven by `path`.
pub fn evolve_path(
    u0: &Field,
    path: &BrownianPath,
    schedule: &Schedule,
    params: &PhysicsParams,
) -> Result<Trajectory> {
    evolve_path_with(u0, path, schedule, params, Scheme::Stratonovich, &mut ())
}

pub fn evolve_path_with(
    u0: &Field,
    path: &BrownianPath,
    schedule: &Schedule,
    params: &PhysicsParams,
    scheme: Scheme,
    observer: &mut dyn StepObserver,
) -> Result<Trajectory> {
    u0.check_finite()?;
    let grid = *u0.grid();
    params.validate(&grid)?;
    let dt = path.dt();
    if (schedule.dt() - dt).abs() > 1e-12 * dt {
        return Err(Error::ScheduleMismatch(format!(
            "schedule step {} differs from path step {}",
            schedule.dt(),
            dt
        )));
    }
    if schedule.total_steps() > path.len() {
        return Err(Error::ScheduleMismatch(format!(
            "schedule needs {} steps, path has {}",
            schedule.total_steps(),
            path.len()
        )));
    }
    enum Kernel {
        Strang(StrangStepper),
        Ito(ItoEulerStepper),
    }
    let kernel = if schedule.total_steps() == 0 {
        None
    } else {
        Some(match scheme {
            Scheme::Stratonovich => Kernel::Strang(StrangStepper::new(&grid, params, dt)?),
            Scheme::ItoEuler { stability } => {
                Kernel::Ito(ItoEulerStepper::new(&grid, params, dt, stability)?)
            }
        })
    };
    let increments = path.increments();
    let mut state = u0.values().to_vec();
    let mut snapshots = Vec::with_capacity(schedule.steps().len());
    let mut mass = Vec::with_capacity(schedule.steps().len());
    let mut step = 0usize;
    for (snap, &target) in schedule.steps().iter().enumerate() {
        while step < target {
            let db = increments[step];
            observer.before_step(step, &state, db);
            match kernel.as_ref().expect("kernel exists when steps > 0") {
                Kernel::Strang(s) => s.step_in_place(&mut state, db),
                Kernel::Ito(s) => s.step_in_place(&mut state, db),
            }
            step += 1;
        }
        observer.at_snapshot(snap, &state);
        let field = Field::from_raw(grid, state.clone());
        if !field.is_finite() {
            return Err(Error::NonFinite("trajectory state"));
        }
        mass.push(field.mass());
        snapshots.push(field);
    }
    Ok(Trajectory {
        times: schedule.times(),
        steps: schedule.steps().to_vec(),
        snapshots,
        mass,
        dt,
        path_index: path.path_index(),
        master_seed: path.master_seed(),
        params: params.clone(),
    })
}

/// Laplacian symbol applied spectrally; used by diagnostics.
pub fn laplacian(field: &Field) -> Result<Field> {
    crate::spectral::apply_multiplier(field, &Symbol::Laplacian)
}
