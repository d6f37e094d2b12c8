//! Periodic uniform grids on `[-L, L)^d` and complex fields sampled on them.
//!
//! Layout is row-major with the last axis contiguous. Spectral tables are
//! stored in FFT order: index `i` on an axis carries the integer mode
//! `m = i` for `i < N/2` and `m = i - N` otherwise, with wavenumber
//! `k = (pi/L) m`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    half_length: f64,
}

/// Validating constructor.
pub fn make_grid(dim: usize, n: usize, half_length: f64) -> Result<GridSpec> {
    GridSpec::new(dim, n, half_length)
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, half_length: f64) -> Result<Self> {
        let mut problems = Vec::new();
        if !(1..=3).contains(&dim) {
            problems.push(format!("dimension {dim} not in {{1,2,3}}"));
        }
        if n < 8 || !n.is_power_of_two() {
            problems.push(format!("N = {n} must be a power of two >= 8"));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            problems.push(format!("half-length L = {half_length} must be positive"));
        }
        if problems.is_empty() {
            Ok(Self {
                dim,
                n,
                half_length,
            })
        } else {
            Err(Error::InvalidGrid(problems.join("; ")))
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    /// Total number of grid points, `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Spectral spacing `pi/L`.
    pub fn dk(&self) -> f64 {
        PI / self.half_length
    }

    pub fn k_max(&self) -> f64 {
        self.dk() * (self.n / 2) as f64
    }

    /// Weight turning a plain sum over modes into the continuum `dk/(2 pi)` measure.
    pub fn spectral_cell(&self) -> f64 {
        (self.dk() / (2.0 * PI)).powi(self.dim as i32)
    }

    /// Grid coordinates along one axis, `x_j = -L + j h`.
    pub fn axis_coordinates(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n)
            .map(|j| -self.half_length + j as f64 * h)
            .collect()
    }

    /// Integer modes along one axis in natural order `[-N/2, N/2)`.
    pub fn axis_modes(&self) -> Vec<i64> {
        let half = (self.n / 2) as i64;
        (-half..half).collect()
    }

    /// Wavenumbers along one axis in natural order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let dk = self.dk();
        self.axis_modes().into_iter().map(|m| m as f64 * dk).collect()
    }

    /// Wavenumbers along one axis in FFT order.
    pub fn fft_wavenumbers(&self) -> Vec<f64> {
        let dk = self.dk();
        (0..self.n).map(|i| fft_mode(i, self.n) as f64 * dk).collect()
    }

    /// Splits a flat index into per-axis indices (first `dim` entries used).
    pub fn unravel(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for axis in (0..self.dim).rev() {
            idx[axis] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().take(self.dim).fold(0, |acc, &i| acc * self.n + i)
    }

    /// Position of a flat index.
    pub fn position(&self, flat: usize) -> [f64; 3] {
        let idx = self.unravel(flat);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = -self.half_length + idx[axis] as f64 * h;
        }
        x
    }

    /// Wavevector of a flat index interpreted in FFT order.
    pub fn wavevector(&self, flat: usize) -> [f64; 3] {
        let idx = self.unravel(flat);
        let dk = self.dk();
        let mut k = [0.0; 3];
        for axis in 0..self.dim {
            k[axis] = fft_mode(idx[axis], self.n) as f64 * dk;
        }
        k
    }

    /// `|x|^2` per grid point.
    pub fn radius_squared(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.position(i).iter().map(|c| c * c).sum())
            .collect()
    }

    /// `|k|^2` per mode, FFT order.
    pub fn k_squared(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.wavevector(i).iter().map(|c| c * c).sum())
            .collect()
    }
}

pub(crate) fn fft_mode(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Complex amplitude sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    data: Vec<Complex64>,
}

impl Field {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            data: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_vec(grid: GridSpec, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                data.len(),
                grid.len()
            )));
        }
        let field = Self { grid, data };
        field.check_finite()?;
        Ok(field)
    }

    /// Samples `f(x)` at every grid point.
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let data = (0..grid.len())
            .map(|i| f(&grid.position(i)[..grid.dim()]))
            .collect();
        Self { grid, data }
    }

    pub(crate) fn from_raw(grid: GridSpec, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self { grid, data }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("field"))
        }
    }

    pub fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )))
        }
    }

    /// `h^d * sum |u|^2`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.data.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    /// Cell-volume-weighted L2 norm.
    pub fn l2_norm(&self) -> f64 {
        self.mass().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, c: Complex64) -> Field {
        self.map(|z| z * c)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Field {
        Field::from_raw(self.grid, self.data.iter().map(|&z| f(z)).collect())
    }

    /// Pointwise `self + other`.
    pub fn add(&self, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Field::from_raw(
            self.grid,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// Pointwise `self - other`.
    pub fn sub(&self, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        Field::from_raw(
            self.grid,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// Pointwise product with a real profile.
    pub fn mul_real(&self, profile: &[f64]) -> Field {
        assert_eq!(profile.len(), self.data.len());
        Field::from_raw(
            self.grid,
            self.data.iter().zip(profile).map(|(z, r)| z * r).collect(),
        )
    }

    /// L2 distance relative to the norm of `reference`.
    pub fn relative_l2_distance(&self, reference: &Field) -> f64 {
        let diff = self.sub(reference).l2_norm();
        let scale = reference.l2_norm();
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

/// Real potential profile. Only the Gaussian `A exp(-|x-c|^2 / (2 sigma^2))` is provided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub amplitude: f64,
    pub width: f64,
    #[serde(default)]
    pub center: [f64; 3],
}

/// Largest admissible `|V|` on the box boundary relative to `max |V|`.
pub const POTENTIAL_BOUNDARY_DECAY: f64 = 1e-12;

impl PotentialSpec {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        Self {
            amplitude,
            width,
            center: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(invalid("amplitude", "must be finite"));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(invalid("width", "must be positive"));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(invalid("center", "must be finite"));
        }
        Ok(())
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(xi, ci)| (xi - ci).powi(2))
            .sum();
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }

    /// Profile value at the nearest point of the box boundary, relative to the peak.
    pub fn boundary_ratio(&self, grid: &GridSpec) -> f64 {
        let dist = (0..grid.dim())
            .map(|a| grid.half_length() - self.center[a].abs())
            .fold(f64::INFINITY, f64::min);
        if dist <= 0.0 {
            return 1.0;
        }
        (-dist * dist / (2.0 * self.width * self.width)).exp()
    }
}

/// Samples the potential as a real profile, rejecting boxes too small for its width.
pub fn sample_potential(spec: &PotentialSpec, grid: &GridSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.amplitude != 0.0 {
        let ratio = spec.boundary_ratio(grid);
        if ratio > POTENTIAL_BOUNDARY_DECAY {
            return Err(Error::PotentialNotDecayed {
                ratio,
                limit: POTENTIAL_BOUNDARY_DECAY,
            });
        }
    }
    let d = grid.dim();
    Ok((0..grid.len())
        .map(|i| spec.value_at(&grid.position(i)[..d]))
        .collect())
}

/// The potential as a [`Field`] with exactly zero imaginary part.
pub fn potential_field(spec: &PotentialSpec, grid: &GridSpec) -> Result<Field> {
    let values = sample_potential(spec, grid)?;
    Ok(Field::from_raw(
        *grid,
        values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_grid_tables() {
        let g = make_grid(1, 8, PI).unwrap();
        let k = g.wavenumbers();
        assert_eq!(k, vec![-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0]);
        assert!((g.cell_volume() - 2.0 * PI / 8.0).abs() < 1e-15);
        assert_eq!(g.fft_wavenumbers()[4], -4.0);
    }

    #[test]
    fn three_dimensional_unit_cells() {
        let g = make_grid(3, 32, 16.0).unwrap();
        assert_eq!(g.len(), 32 * 32 * 32);
        assert_eq!(g.cell_volume(), 1.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(make_grid(1, 7, 1.0).is_err());
        assert!(make_grid(4, 8, 1.0).is_err());
        assert!(make_grid(1, 8, 0.0).is_err());
        assert!(make_grid(1, 4, 1.0).is_err());
    }

    #[test]
    fn ravel_roundtrip() {
        let g = make_grid(3, 8, 1.0).unwrap();
        for flat in [0, 7, 8, 63, 64, 511] {
            assert_eq!(g.ravel(&g.unravel(flat)), flat);
        }
    }

    #[test]
    fn gaussian_potential_on_large_box() {
        let g = make_grid(1, 1024, 64.0).unwrap();
        let v = sample_potential(&PotentialSpec::gaussian(1.0, 1.0), &g).unwrap();
        let max = v.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        assert!(PotentialSpec::gaussian(1.0, 1.0).value_at(&[64.0]) < 1e-300);
        assert!(PotentialSpec::gaussian(1.0, 1.0).value_at(&[-64.0]) < 1e-300);
        let field = potential_field(&PotentialSpec::gaussian(1.0, 1.0), &g).unwrap();
        assert!(field.values().iter().all(|z| z.im == 0.0));
    }

    #[test]
    fn zero_amplitude_potential() {
        let g = make_grid(1, 64, 4.0).unwrap();
        let v = sample_potential(&PotentialSpec::gaussian(0.0, 1.0), &g).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn too_wide_potential_rejected() {
        let g = make_grid(1, 64, 8.0).unwrap();
        let err = sample_potential(&PotentialSpec::gaussian(1.0, 8.0), &g).unwrap_err();
        assert!(matches!(err, Error::PotentialNotDecayed { .. }));
    }

    #[test]
    fn from_vec_rejects_nan() {
        let g = make_grid(1, 8, 1.0).unwrap();
        let mut data = vec![Complex64::new(1.0, 0.0); 8];
        data[3] = Complex64::new(f64::NAN, 0.0);
        assert!(Field::from_vec(g, data).is_err());
    }
}
