//! Discrete Fourier transform contract, Fourier multipliers and spatial weights.
//!
//! Normalization: the forward transform approximates `int f(x) e^{-ik.x} dx`
//! (it carries the cell volume `h^d` and the phase of the box offset), the
//! inverse carries `(dk / 2pi)^d` so that
//! `sum_j |f_j|^2 h^d == (dk/2pi)^d sum_m |f^_m|^2` (Parseval).

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::grid::{Field, GridSpec};

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = plans.lock().expect("fft plan registry poisoned");
    guard
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// Unnormalized d-dimensional FFT in place (FFT order, no phase factors).
pub(crate) fn fft_nd(grid: &GridSpec, data: &mut [Complex64], inverse: bool) {
    let n = grid.n();
    let d = grid.dim();
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        if stride == 1 {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        let block = stride * n;
        let mut lines = vec![Complex64::new(0.0, 0.0); block];
        for chunk in data.chunks_mut(block) {
            for o in 0..stride {
                for j in 0..n {
                    lines[o * n + j] = chunk[o + j * stride];
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            for o in 0..stride {
                for j in 0..n {
                    chunk[o + j * stride] = lines[o * n + j];
                }
            }
        }
    }
}

/// Multiplies by a symbol table given in FFT order: `F^{-1} diag(table) F`.
pub(crate) fn apply_table_in_place(grid: &GridSpec, data: &mut [Complex64], table: &[Complex64]) {
    debug_assert_eq!(data.len(), table.len());
    fft_nd(grid, data, false);
    let norm = 1.0 / grid.len() as f64;
    for (z, s) in data.iter_mut().zip(table) {
        *z *= s * norm;
    }
    fft_nd(grid, data, true);
}

fn checkerboard_sign(grid: &GridSpec, flat: usize) -> f64 {
    let idx = grid.unravel(flat);
    let parity: usize = idx.iter().take(grid.dim()).sum();
    if parity % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Fourier coefficients with the continuum normalization, FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient at integer mode vector `m` (each component in `[-N/2, N/2)`).
    pub fn at_mode(&self, modes: &[i64]) -> Complex64 {
        let n = self.grid.n() as i64;
        let idx: Vec<usize> = modes
            .iter()
            .map(|&m| m.rem_euclid(n) as usize)
            .collect();
        self.coeffs[self.grid.ravel(&idx)]
    }

    /// `(dk/2pi)^d sum |f^|^2`, equal to the physical mass by Parseval.
    pub fn mass(&self) -> f64 {
        self.grid.spectral_cell() * self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

pub fn forward(field: &Field) -> Result<Spectrum> {
    field.check_finite()?;
    let grid = *field.grid();
    let mut coeffs = field.values().to_vec();
    fft_nd(&grid, &mut coeffs, false);
    let cell = grid.cell_volume();
    for (i, z) in coeffs.iter_mut().enumerate() {
        *z *= cell * checkerboard_sign(&grid, i);
    }
    Ok(Spectrum { grid, coeffs })
}

pub fn inverse(spectrum: &Spectrum) -> Result<Field> {
    let grid = spectrum.grid;
    if spectrum
        .coeffs
        .iter()
        .any(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        return Err(Error::NonFinite("spectrum"));
    }
    let weight = grid.spectral_cell();
    let mut data: Vec<Complex64> = spectrum
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, z)| z * weight * checkerboard_sign(&grid, i))
        .collect();
    fft_nd(&grid, &mut data, true);
    Ok(Field::from_raw(grid, data))
}

/// Round trip helper used where only the direction is known at runtime.
pub fn transform(field: &Field, direction: Direction) -> Result<Field> {
    match direction {
        Direction::Forward => {
            let s = forward(field)?;
            Ok(Field::from_raw(s.grid, s.coeffs))
        }
        Direction::Inverse => inverse(&Spectrum {
            grid: *field.grid(),
            coeffs: field.values().to_vec(),
        }),
    }
}

/// Scalar function of the wavevector applied as a Fourier multiplier.
#[derive(Clone)]
pub enum Symbol {
    /// `(1 + |k|^2)^{s/2}`
    Bessel(f64),
    /// `|k|^s`, zero mode mapped to 0.
    Riesz(f64),
    /// `exp(-i |k|^2 t)`, the free Schrodinger flow for time `t`.
    Free(f64),
    /// `i k_axis`
    Gradient(usize),
    /// `-|k|^2`
    Laplacian,
    Custom(Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>),
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Bessel(s) => write!(f, "Bessel({s})"),
            Symbol::Riesz(s) => write!(f, "Riesz({s})"),
            Symbol::Free(t) => write!(f, "Free({t})"),
            Symbol::Gradient(a) => write!(f, "Gradient({a})"),
            Symbol::Laplacian => write!(f, "Laplacian"),
            Symbol::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Symbol {
    pub fn eval(&self, k: &[f64]) -> Complex64 {
        let k2: f64 = k.iter().map(|c| c * c).sum();
        match self {
            Symbol::Bessel(s) => Complex64::new((1.0 + k2).powf(s / 2.0), 0.0),
            Symbol::Riesz(s) => {
                if k2 == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(k2.powf(s / 2.0), 0.0)
                }
            }
            Symbol::Free(t) => Complex64::from_polar(1.0, -k2 * t),
            Symbol::Gradient(axis) => Complex64::new(0.0, k.get(*axis).copied().unwrap_or(0.0)),
            Symbol::Laplacian => Complex64::new(-k2, 0.0),
            Symbol::Custom(f) => f(k),
        }
    }

    /// Symbol sampled on the grid spectrum, FFT order.
    pub fn table(&self, grid: &GridSpec) -> Result<Vec<Complex64>> {
        if let Symbol::Gradient(axis) = self {
            if *axis >= grid.dim() {
                return Err(invalid("axis", format!("{axis} >= dimension {}", grid.dim())));
            }
        }
        let d = grid.dim();
        let table: Vec<Complex64> = (0..grid.len())
            .map(|i| self.eval(&grid.wavevector(i)[..d]))
            .collect();
        if table.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("symbol"));
        }
        Ok(table)
    }
}

pub fn apply_multiplier(field: &Field, symbol: &Symbol) -> Result<Field> {
    let table = symbol.table(field.grid())?;
    apply_table(field, &table)
}

/// Applies a precomputed symbol table (FFT order).
pub fn apply_table(field: &Field, table: &[Complex64]) -> Result<Field> {
    field.check_finite()?;
    if table.len() != field.grid().len() {
        return Err(Error::GridMismatch("symbol table length".into()));
    }
    let grid = *field.grid();
    let mut data = field.values().to_vec();
    apply_table_in_place(&grid, &mut data, table);
    Ok(Field::from_raw(grid, data))
}

/// `<x>^{-w} = (1 + |x|^2)^{-w/2}` per grid point. Far from the origin large
/// `w` underflows towards subnormals or zero; that is accepted.
pub fn weight_profile(grid: &GridSpec, w: f64) -> Vec<f64> {
    grid.radius_squared()
        .into_iter()
        .map(|r2| (1.0 + r2).powf(-w / 2.0))
        .collect()
}

pub fn apply_weight(field: &Field, w: f64) -> Result<Field> {
    if !(w.is_finite() && w >= 0.0) {
        return Err(invalid("w", "weight exponent must be >= 0"));
    }
    field.check_finite()?;
    Ok(field.mul_real(&weight_profile(field.grid(), w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use std::f64::consts::PI;

    fn plane_wave(grid: GridSpec, modes: &[i64]) -> Field {
        let dk = grid.dk();
        Field::from_fn(grid, |x| {
            let phase: f64 = x.iter().zip(modes).map(|(xi, &m)| xi * m as f64 * dk).sum();
            Complex64::from_polar(1.0, phase)
        })
    }

    #[test]
    fn plane_wave_has_single_coefficient() {
        let g = make_grid(2, 16, 3.0).unwrap();
        let f = plane_wave(g, &[3, -2]);
        let s = forward(&f).unwrap();
        let peak = s.at_mode(&[3, -2]).norm();
        let expected = (2.0 * g.half_length()).powi(2);
        assert!((peak - expected).abs() < 1e-10 * expected);
        let rest: f64 = s.coefficients().iter().map(|z| z.norm()).sum::<f64>() - peak;
        assert!(rest < 1e-10 * expected);
    }

    #[test]
    fn roundtrip_is_identity() {
        let g = make_grid(3, 8, 2.0).unwrap();
        let f = Field::from_fn(g, |x| Complex64::new(x[0] - x[2] * x[1], (x[1] * 3.0).sin()));
        let back = inverse(&forward(&f).unwrap()).unwrap();
        assert!(back.relative_l2_distance(&f) < 1e-13);
    }

    #[test]
    fn riesz_kills_constants() {
        let g = make_grid(1, 32, 4.0).unwrap();
        let f = Field::from_fn(g, |_| Complex64::new(2.5, -1.0));
        let out = apply_multiplier(&f, &Symbol::Riesz(0.5)).unwrap();
        assert!(out.max_abs() < 1e-14);
    }

    #[test]
    fn bessel_group_law() {
        let g = make_grid(1, 64, 4.0).unwrap();
        let f = Field::from_fn(g, |x| Complex64::new((-x[0] * x[0]).exp(), x[0].sin() * 0.1));
        let there = apply_multiplier(&f, &Symbol::Bessel(0.25)).unwrap();
        let back = apply_multiplier(&there, &Symbol::Bessel(-0.25)).unwrap();
        assert!(back.relative_l2_distance(&f) < 1e-12);
    }

    #[test]
    fn bessel_on_plane_wave_is_eigenvalue() {
        let g = make_grid(1, 32, PI).unwrap();
        let f = plane_wave(g, &[5]);
        let out = apply_multiplier(&f, &Symbol::Bessel(0.7)).unwrap();
        let expected = f.scale(Complex64::new(26f64.powf(0.35), 0.0));
        assert!(out.relative_l2_distance(&expected) < 1e-12);
    }

    #[test]
    fn non_finite_symbol_rejected() {
        let g = make_grid(1, 16, 1.0).unwrap();
        let f = Field::zeros(g);
        let bad = Symbol::Custom(Arc::new(|_| Complex64::new(f64::INFINITY, 0.0)));
        assert!(apply_multiplier(&f, &bad).is_err());
    }

    #[test]
    fn weight_basics() {
        let g = make_grid(1, 64, 32.0).unwrap();
        let f = Field::from_fn(g, |x| Complex64::new(1.0 + x[0].cos(), 0.0));
        assert_eq!(apply_weight(&f, 0.0).unwrap(), f);
        let centre = g.n() / 2;
        let out = apply_weight(&f, 7.0).unwrap();
        assert_eq!(out.values()[centre], f.values()[centre]);
        assert!(apply_weight(&f, -1.0).is_err());
    }

    #[test]
    fn heavy_weight_stays_representable() {
        // 401^{-50} evaluated with 40-digit arithmetic (mpmath).
        let g = make_grid(1, 64, 32.0).unwrap();
        let f = Field::from_fn(g, |_| Complex64::new(1.0, 0.0));
        let out = apply_weight(&f, 100.0).unwrap();
        let idx = g.axis_coordinates().iter().position(|&x| x == -20.0).unwrap();
        let got = out.values()[idx].re;
        let expected = 6.962_759_090_850_998e-131;
        assert!(got.is_normal());
        assert!((got - expected).abs() < 1e-13 * expected);
    }
}
