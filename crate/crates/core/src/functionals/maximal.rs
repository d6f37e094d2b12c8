//! Maximal functionals over the snapshot grid and the `u = u1 + u2` split.
//!
//! With `G_k(j) = H(t_k - t_j) Y(t_j)` every convolution needed at time `t_k`
//! is `G_k(b) - G_k(a)`. `G_k` is obtained from `G_{k-1}` by one application
//! of `H(t_k - t_{k-1})`, and each linear norm map is applied once per `j`.

use num_complex::Complex64;
use serde::Serialize;

use super::duhamel::DuhamelRun;
use crate::error::{invalid, Error, Result};
use crate::grid::Field;
use crate::norms::{lp_norm, time_mixed_norm_values, AdmissiblePair, NormComponent, NormEvaluator, NormSpec, X_WEIGHT};

/// Integrability exponent of the weighted Sobolev piece of `M*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum WeightedExponent {
    #[default]
    BetaTildePrime,
    BetaTilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaximalOptions {
    pub pair: AdmissiblePair,
    pub weight: f64,
    pub exponent: WeightedExponent,
}

impl MaximalOptions {
    pub fn new(pair: AdmissiblePair) -> Self {
        Self {
            pair,
            weight: X_WEIGHT,
            exponent: WeightedExponent::default(),
        }
    }

    fn weighted_p(&self, e: WeightedExponent) -> f64 {
        match e {
            WeightedExponent::BetaTildePrime => self.pair.beta_tilde_prime,
            WeightedExponent::BetaTilde => self.pair.beta_tilde,
        }
    }

    /// The norm whose pieces `M*` takes sups of.
    pub fn norm(&self) -> NormSpec {
        NormSpec::XX {
            beta: self.pair.beta,
            s: self.pair.s_alpha,
            p: self.weighted_p(self.exponent),
            w: self.weight,
        }
    }

    fn alternate(&self) -> NormSpec {
        let other = match self.exponent {
            WeightedExponent::BetaTildePrime => WeightedExponent::BetaTilde,
            WeightedExponent::BetaTilde => WeightedExponent::BetaTildePrime,
        };
        NormSpec::X {
            s: self.pair.s_alpha,
            p: self.weighted_p(other),
            w: self.weight,
        }
    }
}

/// `M*` on the snapshot grid. `raw` is the sup at fixed `t`; `running` is its
/// running maximum, which is monotone in `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximalProfile {
    pub times: Vec<f64>,
    pub raw: Vec<f64>,
    pub running: Vec<f64>,
    pub lebesgue: Vec<f64>,
    pub weighted: Vec<f64>,
    /// Weighted piece with the other integrability exponent.
    pub weighted_alternate: Vec<f64>,
}

fn running_max(xs: &[f64]) -> Vec<f64> {
    let mut m = 0.0f64;
    xs.iter()
        .map(|&x| {
            m = m.max(x);
            m
        })
        .collect()
}

/// Visits `G_k(0..=k)` for `k = 0..=last`.
fn sweep<F>(run: &DuhamelRun, last: usize, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &[Vec<Complex64>]) -> Result<()>,
{
    let steps = &run.trajectory.steps;
    let mut g: Vec<Vec<Complex64>> = Vec::with_capacity(last + 1);
    for k in 0..=last {
        if k > 0 {
            let n = steps[k] - steps[k - 1];
            for v in g.iter_mut().skip(1) {
                run.propagator.apply_in_place(v, n);
            }
        }
        g.push(run.history[k].values().to_vec());
        visit(k, &g)?;
    }
    Ok(())
}

/// `sup_{a<b<=k} ||T_b - T_a||_p` where `T` are transformed fields.
fn pair_sup(t: &[Vec<Complex64>], p: f64, cell: f64, buf: &mut Vec<Complex64>) -> f64 {
    let mut best = 0.0f64;
    let k = t.len() - 1;
    for a in 0..k {
        buf.clear();
        buf.extend(t[k].iter().zip(&t[a]).map(|(x, y)| x - y));
        best = best.max(lp_norm(buf, p, cell));
    }
    best
}

/// Sup over all pairs `a < b <= k` for one component, per `k`; the sup over
/// pairs ending before `k` is recomputed because `t_k` changes every `G`.
fn all_pairs_sup(t: &[Vec<Complex64>], p: f64, cell: f64, buf: &mut Vec<Complex64>) -> f64 {
    let mut best = 0.0f64;
    for b in 1..t.len() {
        best = best.max(pair_sup(&t[..=b], p, cell, buf));
    }
    best
}

fn transform_all(c: &NormComponent, g: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    g.iter()
        .map(|v| if c.is_identity() { v.clone() } else { c.apply(v) })
        .collect()
}

fn checked_last(run: &DuhamelRun, t: Option<f64>) -> Result<usize> {
    if run.is_empty() {
        return Err(invalid("trajectory", "no snapshots"));
    }
    match t {
        Some(t) => run.trajectory.index_of(t),
        None => Ok(run.len() - 1),
    }
}

/// Sups of each component of `specs` at every snapshot up to `last`.
fn component_sups(run: &DuhamelRun, last: usize, specs: &[NormSpec]) -> Result<Vec<Vec<f64>>> {
    let grid = *run.trajectory.grid();
    let comps: Vec<NormComponent> = specs
        .iter()
        .map(|s| NormEvaluator::new(&grid, *s).map(|e| e.components))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut out = vec![vec![0.0; last + 1]; comps.len()];
    if run.epsilon() == 0.0 {
        return Ok(out);
    }
    let cell = grid.cell_volume();
    let mut buf = Vec::with_capacity(grid.len());
    sweep(run, last, |k, g| {
        for (ci, c) in comps.iter().enumerate() {
            let t = transform_all(c, g);
            out[ci][k] = all_pairs_sup(&t, c.p, cell, &mut buf);
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn maximal_profile(run: &DuhamelRun, opts: &MaximalOptions) -> Result<MaximalProfile> {
    let last = checked_last(run, None)?;
    let sups = component_sups(run, last, &[opts.norm(), opts.alternate()])?;
    let raw: Vec<f64> = sups[0].iter().zip(&sups[1]).map(|(a, b)| a + b).collect();
    Ok(MaximalProfile {
        times: run.trajectory.times[..=last].to_vec(),
        running: running_max(&raw),
        raw,
        lebesgue: sups[0].clone(),
        weighted: sups[1].clone(),
        weighted_alternate: sups[2].clone(),
    })
}

/// Running-max `M*(t)`.
pub fn maximal_functional(run: &DuhamelRun, t: f64, pair: &AdmissiblePair) -> Result<f64> {
    let last = checked_last(run, Some(t))?;
    let opts = MaximalOptions::new(*pair);
    let sups = component_sups(run, last, &[opts.norm()])?;
    let raw: Vec<f64> = sups[0].iter().zip(&sups[1]).map(|(a, b)| a + b).collect();
    Ok(running_max(&raw)[last])
}

/// `M1*` with the Z norm: `(raw, running)` per snapshot.
pub fn m1_profile(run: &DuhamelRun) -> Result<(Vec<f64>, Vec<f64>)> {
    let last = checked_last(run, None)?;
    let raw = component_sups(run, last, &[NormSpec::z()])?.remove(0);
    let running = running_max(&raw);
    Ok((raw, running))
}

pub fn m1_functional(run: &DuhamelRun, t: f64) -> Result<f64> {
    let last = checked_last(run, Some(t))?;
    let raw = component_sups(run, last, &[NormSpec::z()])?.remove(0);
    Ok(running_max(&raw)[last])
}

/// Greedy partition of the snapshot grid for `||M*||_{L^alpha(I_j)} <= e_M`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionSpec {
    pub endpoints: Vec<f64>,
    pub e_m: f64,
    pub values: Vec<f64>,
    /// Intervals other than the last one that exceed `e_M` (single snapshot
    /// steps that cannot be split further).
    pub violations: usize,
}

impl PartitionSpec {
    pub fn intervals(&self) -> usize {
        self.endpoints.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub times: Vec<f64>,
    pub u1: Vec<Field>,
    pub u2: Vec<Field>,
    pub partition: PartitionSpec,
    /// Raw `M*(t_k)`.
    pub mstar: Vec<f64>,
    pub u1_norm: Vec<f64>,
    pub u2_norm: Vec<f64>,
    /// `max_k ||u1 + u2 - u||_inf / ||u||_inf`.
    pub additivity_error: f64,
    /// `||u1||_{L^alpha_t X}` on the full horizon.
    pub u1_mixed: f64,
}

impl Decomposition {
    /// Largest `||u2(t)||_X - M*(t)` (nonpositive when the bound holds).
    pub fn bound_excess(&self) -> f64 {
        self.u2_norm
            .iter()
            .zip(&self.mstar)
            .map(|(u, m)| u - m)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub const DEFAULT_E_M: f64 = 0.1;
pub const DEFAULT_PARTITION_CAP: usize = 10_000;

fn trapezoid_piece(t0: f64, t1: f64, v0: f64, v1: f64, alpha: f64) -> f64 {
    0.5 * (t1 - t0) * (v0.powf(alpha) + v1.powf(alpha))
}

pub fn decompose_u1_u2(
    run: &DuhamelRun,
    opts: &MaximalOptions,
    e_m: f64,
    cap: usize,
) -> Result<Decomposition> {
    if !(e_m.is_finite() && e_m > 0.0) {
        return Err(invalid("e_M", "must be positive"));
    }
    let last = checked_last(run, None)?;
    let alpha = opts.pair.alpha;
    let traj = &run.trajectory;
    let grid = *traj.grid();
    let times = traj.times.clone();
    let comps = NormEvaluator::new(&grid, opts.norm())?.components;
    let cell = grid.cell_volume();

    let mut mstar = vec![0.0; last + 1];
    let mut u2: Vec<Field> = Vec::with_capacity(last + 1);
    let mut u2_norm = vec![0.0; last + 1];
    let mut endpoints = vec![0.0];
    let mut values = Vec::new();
    let mut violations = 0;
    let mut start = 0usize;
    let mut acc = 0.0;
    let mut buf = Vec::with_capacity(grid.len());
    let noisy = run.epsilon() != 0.0;

    sweep(run, last, |k, g| {
        if !noisy {
            u2.push(Field::zeros(grid));
            return Ok(());
        }
        let transformed: Vec<Vec<Vec<Complex64>>> = comps.iter().map(|c| transform_all(c, g)).collect();
        mstar[k] = comps
            .iter()
            .zip(&transformed)
            .map(|(c, t)| all_pairs_sup(t, c.p, cell, &mut buf))
            .sum();
        if k > 0 {
            let piece = trapezoid_piece(times[k - 1], times[k], mstar[k - 1], mstar[k], alpha);
            if acc + piece > e_m.powf(alpha) && k - 1 > start {
                endpoints.push(times[k - 1]);
                values.push(acc.powf(1.0 / alpha));
                start = k - 1;
                acc = 0.0;
                if endpoints.len() - 1 > cap {
                    return Err(Error::PartitionCap { cap });
                }
            }
            acc += piece;
        }
        let s = if k == 0 { 0 } else { start };
        let mut norm = 0.0;
        for (c, t) in comps.iter().zip(&transformed) {
            buf.clear();
            buf.extend(t[k].iter().zip(&t[s]).map(|(x, y)| x - y));
            norm += lp_norm(&buf, c.p, cell);
        }
        u2_norm[k] = norm;
        let diff: Vec<Complex64> = g[k].iter().zip(&g[s]).map(|(x, y)| x - y).collect();
        u2.push(Field::from_raw(grid, diff));
        Ok(())
    })?;
    endpoints.push(times[last]);
    values.push(acc.powf(1.0 / alpha));
    if noisy {
        violations = values[..values.len() - 1].iter().filter(|&&v| v > e_m).count();
    }
    if endpoints.len() - 1 > cap {
        return Err(Error::PartitionCap { cap });
    }

    let xx = NormEvaluator::new(&grid, opts.norm())?;
    let mut u1 = Vec::with_capacity(last + 1);
    let mut u1_norm = Vec::with_capacity(last + 1);
    let mut additivity_error = 0.0f64;
    for (k, u) in traj.snapshots[..=last].iter().enumerate() {
        let a = u.sub(&u2[k]);
        let scale = u.max_abs().max(f64::MIN_POSITIVE);
        let back = a.add(&u2[k]);
        let err = back
            .values()
            .iter()
            .zip(u.values())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        additivity_error = additivity_error.max(err / scale);
        u1_norm.push(xx.eval(a.values()));
        u1.push(a);
    }
    let u1_mixed = if last >= 1 {
        time_mixed_norm_values(&times[..=last], &u1_norm, alpha)?
    } else {
        0.0
    };
    Ok(Decomposition {
        times: times[..=last].to_vec(),
        u1,
        u2,
        partition: PartitionSpec {
            endpoints,
            e_m,
            values,
            violations,
        },
        mstar,
        u1_norm,
        u2_norm,
        additivity_error,
        u1_mixed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::simulate_with_duhamel;
    use crate::grid::{make_grid, sample_potential, PotentialSpec};
    use crate::norms::admissible_pair;
    use crate::propagators::{PhysicsParams, Schedule};
    use crate::stochastic::sample_brownian;

    fn run(eps: f64, seed: u64) -> DuhamelRun {
        let g = make_grid(1, 64, 8.0).unwrap();
        let v = sample_potential(&PotentialSpec::gaussian(1.0, 1.0), &g).unwrap();
        let params = PhysicsParams::stochastic(eps, v, 1);
        let u0 = Field::from_fn(g, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
        let schedule = Schedule::uniform(0.5, 10, 0.005).unwrap();
        let path = sample_brownian(seed, 0, 0.005, schedule.total_steps()).unwrap();
        simulate_with_duhamel(&u0, &path, &schedule, &params).unwrap()
    }

    fn opts() -> MaximalOptions {
        MaximalOptions::new(admissible_pair(6.0, 1).unwrap())
    }

    #[test]
    fn vanishes_without_noise() {
        let r = run(0.0, 1);
        let p = maximal_profile(&r, &opts()).unwrap();
        assert!(p.raw.iter().chain(&p.running).all(|&x| x == 0.0));
        assert_eq!(m1_functional(&r, 0.5).unwrap(), 0.0);
        let d = decompose_u1_u2(&r, &opts(), DEFAULT_E_M, DEFAULT_PARTITION_CAP).unwrap();
        assert!(d.u2.iter().all(|f| f.max_abs() == 0.0));
        assert_eq!(d.partition.intervals(), 1);
    }

    #[test]
    fn running_value_is_monotone() {
        let r = run(0.3, 2);
        let p = maximal_profile(&r, &opts()).unwrap();
        assert_eq!(p.raw[0], 0.0);
        assert!(p.running.windows(2).all(|w| w[1] >= w[0]));
        assert!(p.raw.iter().zip(&p.running).all(|(r, m)| r <= m));
        assert!(p.raw[1..].iter().all(|&x| x > 0.0));
        let last = maximal_functional(&r, 0.5, &opts().pair).unwrap();
        assert_eq!(last, *p.running.last().unwrap());
        let (raw1, run1) = m1_profile(&r).unwrap();
        assert!(run1.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(raw1.len(), p.raw.len());
    }

    #[test]
    fn decomposition_identities() {
        let r = run(0.3, 3);
        let d = decompose_u1_u2(&r, &opts(), 0.01, DEFAULT_PARTITION_CAP).unwrap();
        assert!(d.additivity_error <= 1e-12);
        assert!(d.bound_excess() <= 1e-12);
        assert!(d.partition.intervals() > 1);
        let ends = &d.partition.endpoints;
        assert!(ends.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*ends.last().unwrap(), 0.5);
        assert!(matches!(
            decompose_u1_u2(&r, &opts(), 1e-6, 1),
            Err(Error::PartitionCap { cap: 1 })
        ));
        assert!(decompose_u1_u2(&r, &opts(), 0.0, 10).is_err());
    }
}
