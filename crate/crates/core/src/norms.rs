//! Spatial, weighted Sobolev and mixed norms; admissible exponents.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::{Field, GridSpec};
use crate::propagators::Trajectory;
use crate::spectral::{apply_table_in_place, weight_profile, Symbol};
use crate::stochastic::{bootstrap, pairwise_mean, pairwise_sum};

const EXPONENT_TOL: f64 = 1e-12;

/// Strichartz pair `(alpha, beta)` with the auxiliary exponents built from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissiblePair {
    pub dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub s_alpha: f64,
    pub beta_tilde: f64,
    pub beta_prime: f64,
    pub beta_tilde_prime: f64,
    /// `d = 3` and `alpha` in `[7/3, 4)`.
    pub paper_main: bool,
    /// `d = 3`, `(alpha, beta) = (2, 6)`.
    pub endpoint: bool,
}

pub fn dual(q: f64) -> f64 {
    if q == 1.0 {
        f64::INFINITY
    } else if q.is_infinite() {
        1.0
    } else {
        q / (q - 1.0)
    }
}

fn recip(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        1.0 / x
    }
}

pub fn admissible_pair(alpha: f64, dim: usize) -> Result<AdmissiblePair> {
    if !(1..=3).contains(&dim) {
        return Err(invalid("dim", "must be 1, 2 or 3"));
    }
    if alpha.is_nan() {
        return Err(invalid("alpha", "NaN"));
    }
    let d = dim as f64;
    let endpoint = dim == 3 && alpha == 2.0;
    if alpha < 2.0 || (alpha == 2.0 && !endpoint) {
        return Err(invalid("alpha", format!("{alpha} <= 2 is not admissible in d = {dim}")));
    }
    // 2/alpha + d/beta = d/2
    let inv_beta = (d / 2.0 - 2.0 * recip(alpha)) / d;
    if inv_beta <= 0.0 {
        return Err(invalid(
            "alpha",
            format!("{alpha} gives beta = infinity or beyond in d = {dim} (need alpha > 4 when d = 1)"),
        ));
    }
    let beta = 1.0 / inv_beta;
    let s_alpha = recip(alpha);
    let beta_tilde = d / (d / 2.0 - s_alpha);
    let pair = AdmissiblePair {
        dim,
        alpha,
        beta,
        s_alpha,
        beta_tilde,
        beta_prime: dual(beta),
        beta_tilde_prime: dual(beta_tilde),
        paper_main: dim == 3 && alpha >= 7.0 / 3.0 && alpha < 4.0,
        endpoint,
    };
    pair.check()?;
    Ok(pair)
}

impl AdmissiblePair {
    fn check(&self) -> Result<()> {
        let d = self.dim as f64;
        let bad = |what: &str| Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("exponent identity failed: {what}"),
        });
        if (2.0 * recip(self.alpha) + d / self.beta - d / 2.0).abs() > EXPONENT_TOL {
            return bad("2/alpha + d/beta = d/2");
        }
        if (d / self.beta_tilde - (d / 2.0 - self.s_alpha)).abs() > EXPONENT_TOL {
            return bad("d/beta_tilde = d/2 - 1/alpha");
        }
        for (q, qp) in [(self.beta, self.beta_prime), (self.beta_tilde, self.beta_tilde_prime)] {
            if (recip(q) + recip(qp) - 1.0).abs() > EXPONENT_TOL {
                return bad("1/q + 1/q' = 1");
            }
        }
        if self.dim == 3
            && self.alpha > 2.0
            && self.alpha < 4.0
            && !(self.beta_tilde > 2.0 && self.beta_tilde < 3.0)
        {
            return bad("2 < beta_tilde < 3");
        }
        Ok(())
    }
}

/// Spatial norm families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NormSpec {
    Lebesgue { p: f64 },
    /// `||<grad>^s f||_p`.
    Sobolev { s: f64, p: f64 },
    /// `||<grad>^s (<x>^{-w} f)||_p`.
    X { s: f64, p: f64, w: f64 },
    /// `||f||_beta + X(s, p, w)`.
    XX { beta: f64, s: f64, p: f64, w: f64 },
    /// `||<x>^{-w} f||_{H^{1/2}}`.
    Z { w: f64 },
    /// `||<x>^{-w} f||_2`.
    W { w: f64 },
}

pub const X_WEIGHT: f64 = 100.0;
pub const Z_WEIGHT: f64 = 10.0;
pub const W_WEIGHT: f64 = 100.0;

impl NormSpec {
    /// X norm of the pair with integrability `beta_tilde'`.
    pub fn x_for(pair: &AdmissiblePair) -> Self {
        NormSpec::X {
            s: pair.s_alpha,
            p: pair.beta_tilde_prime,
            w: X_WEIGHT,
        }
    }

    pub fn xx_for(pair: &AdmissiblePair) -> Self {
        NormSpec::XX {
            beta: pair.beta,
            s: pair.s_alpha,
            p: pair.beta_tilde_prime,
            w: X_WEIGHT,
        }
    }

    pub fn z() -> Self {
        NormSpec::Z { w: Z_WEIGHT }
    }

    pub fn w() -> Self {
        NormSpec::W { w: W_WEIGHT }
    }

    pub fn validate(&self) -> Result<()> {
        let check_p = |p: f64| {
            if p.is_nan() || p < 1.0 {
                Err(invalid("p", format!("{p} < 1")))
            } else {
                Ok(())
            }
        };
        let check_w = |w: f64| {
            if !(w.is_finite() && w >= 0.0) {
                Err(invalid("w", "weight exponent must be >= 0"))
            } else {
                Ok(())
            }
        };
        let check_s = |s: f64| {
            if !s.is_finite() {
                Err(invalid("s", "must be finite"))
            } else {
                Ok(())
            }
        };
        match *self {
            NormSpec::Lebesgue { p } => check_p(p),
            NormSpec::Sobolev { s, p } => check_s(s).and(check_p(p)),
            NormSpec::X { s, p, w } => check_s(s).and(check_p(p)).and(check_w(w)),
            NormSpec::XX { beta, s, p, w } => check_p(beta)
                .and(check_s(s))
                .and(check_p(p))
                .and(check_w(w)),
            NormSpec::Z { w } | NormSpec::W { w } => check_w(w),
        }
    }

    /// Short identifier used in CSV output.
    pub fn label(&self) -> String {
        match *self {
            NormSpec::Lebesgue { p } => format!("L{p}"),
            NormSpec::Sobolev { s, p } => format!("W{s},{p}"),
            NormSpec::X { s, p, w } => format!("X(s={s},p={p},w={w})"),
            NormSpec::XX { beta, s, p, w } => format!("XX(beta={beta},s={s},p={p},w={w})"),
            NormSpec::Z { w } => format!("Z(w={w})"),
            NormSpec::W { w } => format!("W(w={w})"),
        }
    }
}

/// `(cell * sum |z|^p)^{1/p}`, grid max for `p = inf`.
pub fn lp_norm(data: &[Complex64], p: f64, cell: f64) -> f64 {
    if p.is_infinite() {
        return data.iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    if p == 2.0 {
        let sq: Vec<f64> = data.iter().map(|z| z.norm_sqr()).collect();
        return (cell * pairwise_sum(&sq)).sqrt();
    }
    let terms: Vec<f64> = data.iter().map(|z| z.norm().powf(p)).collect();
    (cell * pairwise_sum(&terms)).powf(1.0 / p)
}

/// One linear map `f -> <grad>^s (weight * f)` followed by an `L^p` norm.
#[derive(Debug, Clone)]
pub struct NormComponent {
    grid: GridSpec,
    weight: Option<Vec<f64>>,
    /// Bessel multiplier prescaled by `1/N^d`.
    bessel: Option<Vec<Complex64>>,
    pub p: f64,
}

impl NormComponent {
    fn new(grid: &GridSpec, s: f64, w: f64, p: f64) -> Result<Self> {
        let weight = (w != 0.0).then(|| weight_profile(grid, w));
        let bessel = if s == 0.0 {
            None
        } else {
            Some(Symbol::Bessel(s).table(grid)?)
        };
        Ok(Self {
            grid: *grid,
            weight,
            bessel,
            p,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.weight.is_none() && self.bessel.is_none()
    }

    pub fn apply(&self, data: &[Complex64]) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = match &self.weight {
            Some(w) => data.iter().zip(w).map(|(z, r)| z * r).collect(),
            None => data.to_vec(),
        };
        if let Some(table) = &self.bessel {
            apply_table_in_place(&self.grid, &mut out, table);
        }
        out
    }

    pub fn norm_of_applied(&self, applied: &[Complex64]) -> f64 {
        lp_norm(applied, self.p, self.grid.cell_volume())
    }

    pub fn eval(&self, data: &[Complex64]) -> f64 {
        if self.is_identity() {
            return self.norm_of_applied(data);
        }
        self.norm_of_applied(&self.apply(data))
    }
}

/// Precomputed evaluator; the norm is the sum of its components.
#[derive(Debug, Clone)]
pub struct NormEvaluator {
    spec: NormSpec,
    pub components: Vec<NormComponent>,
}

impl NormEvaluator {
    pub fn new(grid: &GridSpec, spec: NormSpec) -> Result<Self> {
        spec.validate()?;
        let components = match spec {
            NormSpec::Lebesgue { p } => vec![NormComponent::new(grid, 0.0, 0.0, p)?],
            NormSpec::Sobolev { s, p } => vec![NormComponent::new(grid, s, 0.0, p)?],
            NormSpec::X { s, p, w } => vec![NormComponent::new(grid, s, w, p)?],
            NormSpec::XX { beta, s, p, w } => vec![
                NormComponent::new(grid, 0.0, 0.0, beta)?,
                NormComponent::new(grid, s, w, p)?,
            ],
            NormSpec::Z { w } => vec![NormComponent::new(grid, 0.5, w, 2.0)?],
            NormSpec::W { w } => vec![NormComponent::new(grid, 0.0, w, 2.0)?],
        };
        Ok(Self { spec, components })
    }

    pub fn spec(&self) -> NormSpec {
        self.spec
    }

    pub fn eval(&self, data: &[Complex64]) -> f64 {
        self.components.iter().map(|c| c.eval(data)).sum()
    }
}

pub fn spatial_norm(field: &Field, spec: &NormSpec) -> Result<f64> {
    field.check_finite()?;
    Ok(NormEvaluator::new(field.grid(), *spec)?.eval(field.values()))
}

/// Trapezoidal weights on a nonuniform grid.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for j in 0..n.saturating_sub(1) {
        let h = times[j + 1] - times[j];
        w[j] += h / 2.0;
        w[j + 1] += h / 2.0;
    }
    w
}

/// `(sum_j w_j v_j^alpha)^{1/alpha}`; `alpha = inf` gives the max.
pub fn time_mixed_norm_values(times: &[f64], values: &[f64], alpha: f64) -> Result<f64> {
    if times.len() < 2 {
        return Err(invalid("trajectory", "needs at least two snapshots"));
    }
    if times.len() != values.len() {
        return Err(invalid("values", "length differs from times"));
    }
    if alpha.is_nan() || alpha < 1.0 {
        return Err(invalid("alpha", "must be >= 1"));
    }
    if alpha.is_infinite() {
        return Ok(values.iter().cloned().fold(0.0, f64::max));
    }
    let w = trapezoid_weights(times);
    let terms: Vec<f64> = w.iter().zip(values).map(|(w, v)| w * v.powf(alpha)).collect();
    Ok(pairwise_sum(&terms).powf(1.0 / alpha))
}

pub fn time_mixed_norm(traj: &Trajectory, alpha: f64, spec: &NormSpec) -> Result<f64> {
    if traj.len() < 2 {
        return Err(invalid("trajectory", "needs at least two snapshots"));
    }
    let eval = NormEvaluator::new(traj.grid(), *spec)?;
    let values: Vec<f64> = traj.snapshots.iter().map(|f| eval.eval(f.values())).collect();
    time_mixed_norm_values(&traj.times, &values, alpha)
}

/// `(n^{-1} sum x_i^alpha)^{1/alpha}` with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
}

pub fn omega_mixed_norm(values: &[f64], alpha: f64, seed: u64) -> Result<MomentEstimate> {
    if values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if alpha.is_nan() || alpha < 1.0 || alpha.is_infinite() {
        return Err(invalid("alpha", "must lie in [1, inf)"));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("ensemble", "values must be finite and nonnegative"));
    }
    let powered: Vec<f64> = values.iter().map(|v| v.powf(alpha)).collect();
    let b = bootstrap(values.len(), seed, |idx| {
        let pick: Vec<f64> = idx.iter().map(|&i| powered[i]).collect();
        pairwise_mean(&pick).powf(1.0 / alpha)
    })?;
    Ok(MomentEstimate {
        value: b.estimate,
        std_error: b.std_error,
        ci: b.ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn pair_alpha_four_in_3d() {
        let p = admissible_pair(4.0, 3).unwrap();
        assert!((p.beta - 3.0).abs() < 1e-12);
        assert!((p.s_alpha - 0.25).abs() < 1e-15);
        assert!((p.beta_tilde - 12.0 / 5.0).abs() < 1e-12);
        assert!((p.beta_tilde_prime - 12.0 / 7.0).abs() < 1e-12);
        assert!(!p.paper_main);
        assert!(admissible_pair(3.0, 3).unwrap().paper_main);
        assert!(admissible_pair(7.0 / 3.0, 3).unwrap().paper_main);
    }

    #[test]
    fn endpoint_and_infinity() {
        let p = admissible_pair(2.0, 3).unwrap();
        assert!((p.beta - 6.0).abs() < 1e-12);
        assert!(p.endpoint);
        let inf = admissible_pair(f64::INFINITY, 3).unwrap();
        assert!((inf.beta - 2.0).abs() < 1e-12);
        assert!(admissible_pair(1.9, 3).is_err());
        assert!(admissible_pair(2.0, 1).is_err());
        assert!(admissible_pair(3.0, 1).is_err());
        assert!(admissible_pair(2.0, 2).is_err());
        let d1 = admissible_pair(6.0, 1).unwrap();
        assert!((d1.beta - 6.0).abs() < 1e-12);
        assert!((d1.beta_tilde - 3.0).abs() < 1e-12);
    }

    #[test]
    fn plane_wave_norms() {
        let g = make_grid(2, 16, 2.0).unwrap();
        let k = g.dk() * 3.0;
        let f = Field::from_fn(g, |x| Complex64::from_polar(1.0, k * x[0]));
        let l2 = spatial_norm(&f, &NormSpec::Lebesgue { p: 2.0 }).unwrap();
        assert!((l2 - 4.0).abs() < 1e-12);
        let h = spatial_norm(&f, &NormSpec::Sobolev { s: 0.5, p: 2.0 }).unwrap();
        assert!((h - (1.0 + k * k).powf(0.25) * 4.0).abs() < 1e-11);
        let inf = spatial_norm(&f, &NormSpec::Lebesgue { p: f64::INFINITY }).unwrap();
        assert!((inf - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_x_is_lebesgue() {
        let g = make_grid(1, 64, 4.0).unwrap();
        let f = Field::from_fn(g, |x| Complex64::new((-x[0] * x[0]).exp(), x[0].sin()));
        let x = spatial_norm(&f, &NormSpec::X { s: 0.0, p: 12.0 / 7.0, w: 0.0 }).unwrap();
        let l = spatial_norm(&f, &NormSpec::Lebesgue { p: 12.0 / 7.0 }).unwrap();
        assert_eq!(x, l);
        assert_eq!(spatial_norm(&Field::zeros(g), &NormSpec::z()).unwrap(), 0.0);
        assert!(spatial_norm(&f, &NormSpec::Lebesgue { p: 0.5 }).is_err());
    }

    #[test]
    fn time_norm_examples() {
        assert!((time_mixed_norm_values(&[0.0, 1.0], &[1.0, 1.0], 2.0).unwrap() - 1.0).abs() < 1e-15);
        let t: Vec<f64> = (0..=10).map(|j| j as f64 * 0.3).collect();
        let v = vec![2.0; 11];
        let n = time_mixed_norm_values(&t, &v, 3.0).unwrap();
        assert!((n - 2.0 * 3.0f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!(time_mixed_norm_values(&[0.0], &[1.0], 2.0).is_err());
    }

    #[test]
    fn omega_norm_examples() {
        let e = omega_mixed_norm(&[0.7; 20], 3.0, 1).unwrap();
        assert!((e.value - 0.7).abs() < 1e-15);
        assert!((e.ci.1 - e.ci.0).abs() < 1e-15);
        let e = omega_mixed_norm(&[0.0, 2.0], 2.0, 1).unwrap();
        assert!((e.value - 2f64.sqrt()).abs() < 1e-15);
        assert!(omega_mixed_norm(&[], 2.0, 1).is_err());
    }
}
