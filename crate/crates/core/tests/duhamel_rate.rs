use num_complex::Complex64;

use snls_core::functionals::{duhamel_residual, maximal_profile, simulate_with_duhamel, MaximalOptions};
use snls_core::grid::sample_potential;
use snls_core::norms::admissible_pair;
use snls_core::oracle::fit_slope;
use snls_core::propagators::{PhysicsParams, Schedule};
use snls_core::stochastic::sample_brownian;
use snls_core::{make_grid, Field, PotentialSpec};

#[test]
fn residual_converges_under_refinement() {
    let grid = make_grid(1, 64, 8.0).unwrap();
    let v = sample_potential(&PotentialSpec::gaussian(1.0, 1.0), &grid).unwrap();
    let params = PhysicsParams::linear(0.3, v, 1);
    let u0 = Field::from_fn(grid, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
    let horizon = 0.5;
    let dt_coarse = 0.02;
    let levels = 5;
    let finest = 1usize << (levels - 1);
    let mut dts = Vec::new();
    let mut errs = vec![0.0; levels];
    for (l, e) in errs.iter_mut().enumerate() {
        let dt = dt_coarse / (1usize << l) as f64;
        dts.push(dt);
        for seed in 0..8 {
            let fine = sample_brownian(seed, 0, dt_coarse / finest as f64, 25 * finest).unwrap();
            let path = fine.coarsen(finest >> l).unwrap();
            let schedule = Schedule::uniform(horizon, 1, dt).unwrap();
            let run = simulate_with_duhamel(&u0, &path, &schedule, &params).unwrap();
            let r = duhamel_residual(&run).unwrap()[1];
            *e += r * r / 8.0;
        }
        *e = e.sqrt();
    }
    let slope = fit_slope(&dts, &errs).unwrap();
    assert!(slope >= 0.4, "slope {slope}, errors {errs:?}");
}

#[test]
fn every_functional_vanishes_without_noise() {
    let grid = make_grid(1, 64, 8.0).unwrap();
    let v = sample_potential(&PotentialSpec::gaussian(1.0, 1.0), &grid).unwrap();
    let u0 = Field::from_fn(grid, |x| Complex64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
    let schedule = Schedule::uniform(0.2, 4, 0.01).unwrap();
    let path = sample_brownian(1, 0, 0.01, schedule.total_steps()).unwrap();
    for params in [PhysicsParams::stochastic(0.0, v.clone(), 1), PhysicsParams::linear(0.0, v.clone(), 1)] {
        let run = simulate_with_duhamel(&u0, &path, &schedule, &params).unwrap();
        let p = maximal_profile(&run, &MaximalOptions::new(admissible_pair(6.0, 1).unwrap())).unwrap();
        assert!(p.raw.iter().chain(&p.weighted_alternate).all(|&x| x == 0.0));
        assert!(run.history.iter().all(|h| h.max_abs() == 0.0));
    }
}
