//! Gaussian grid, triangular truncation and the grid/spectral field containers.
//!
//! Conventions (chosen here, not inherited from any reference model):
//!
//! * latitudes sit at the Gauss-Legendre nodes `mu = cos(theta)`, ordered
//!   north to south (descending `mu`);
//! * every ring carries the same number of longitudes, `lambda_k = 2 pi k / nlon`;
//! * truncation is triangular, `n_max(m) = M`;
//! * spectral storage keeps the `m >= 0` half-spectrum only; negative `m` follows
//!   from reality, `zeta^{-m}_n = conj(zeta^m_n)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Triangular spectral truncation with maximum zonal wavenumber `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    m_max: usize,
}

impl Truncation {
    pub fn new(m_max: usize) -> Self {
        Self { m_max }
    }

    /// Maximum zonal wavenumber `M`.
    pub fn m_max(&self) -> usize {
        self.m_max
    }

    /// Maximum total wavenumber retained for zonal wavenumber `m`.
    pub fn n_max(&self, _m: usize) -> usize {
        self.m_max
    }

    /// Number of `(m, n)` pairs in the `m >= 0` half-spectrum.
    pub fn coeff_count(&self) -> usize {
        (self.m_max + 1) * (self.m_max + 2) / 2
    }

    /// Offset of the first coefficient of zonal wavenumber `m` in packed storage.
    pub(crate) fn offset(&self, m: usize) -> usize {
        m * (self.m_max + 1) - m * m.saturating_sub(1) / 2
    }

    /// Packed index of `(m, n)`; requires `m <= n <= M`.
    pub fn index(&self, m: usize, n: usize) -> usize {
        debug_assert!(m <= n && n <= self.m_max);
        self.offset(m) + (n - m)
    }

    pub fn contains(&self, m: usize, n: usize) -> bool {
        m <= n && n <= self.m_max
    }

    /// Iterates `(m, n)` in packed order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..=self.m_max).flat_map(move |m| (m..=self.m_max).map(move |n| (m, n)))
    }
}

/// Full Gaussian grid on the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalGrid {
    pub nlat: usize,
    pub nlon: usize,
    /// Gauss-Legendre nodes `cos(theta_j)`, north to south.
    pub mu: Vec<f64>,
    /// Gauss-Legendre weights; they sum to 2.
    pub weights: Vec<f64>,
    /// Longitudes in radians.
    pub lambda: Vec<f64>,
}

impl SphericalGrid {
    /// Checks the exactness conditions `nlat >= M + 1` and `nlon >= 2M + 1`.
    pub fn supports(&self, trunc: &Truncation) -> Result<()> {
        let m = trunc.m_max();
        if self.nlat < m + 1 {
            return Err(crate::Error::InsufficientResolution {
                nlat: self.nlat,
                m_max: m,
            });
        }
        if self.nlon < 2 * m + 1 {
            return Err(invalid(format!(
                "nlon = {} cannot resolve M = {m} (need nlon >= 2M + 1)",
                self.nlon
            )));
        }
        Ok(())
    }

    /// Longitude count of every ring, north to south.
    pub fn ring_lengths(&self) -> Vec<usize> {
        vec![self.nlon; self.nlat]
    }
}

/// Builds the Gauss-Legendre nodes and weights of order `nlat` together with
/// `nlon` equally spaced longitudes.
pub fn build_gaussian_grid(nlat: usize, nlon: usize) -> Result<SphericalGrid> {
    if nlat == 0 || nlon == 0 {
        return Err(invalid(format!(
            "grid sizes must be positive (nlat = {nlat}, nlon = {nlon})"
        )));
    }
    let (mu, weights) = gauss_legendre(nlat);
    let lambda = (0..nlon)
        .map(|k| 2.0 * PI * k as f64 / nlon as f64)
        .collect();
    Ok(SphericalGrid {
        nlat,
        nlon,
        mu,
        weights,
        lambda,
    })
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Nodes (descending) and weights of the `n`-point Gauss-Legendre rule.
///
/// Only the northern half is solved; the southern half is its exact mirror.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mu = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for j in 0..n.div_ceil(2) {
        let mut x = (PI * (4.0 * j as f64 + 3.0) / (4.0 * nf + 2.0)).cos();
        if n % 2 == 1 && j == n / 2 {
            x = 0.0;
        } else {
            for _ in 0..NEWTON_MAX_ITER {
                let (p, dp) = legendre_with_derivative(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < NEWTON_TOL {
                    break;
                }
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let weight = 2.0 / ((1.0 - x * x) * dp * dp);
        mu[j] = x;
        w[j] = weight;
        mu[n - 1 - j] = -x;
        w[n - 1 - j] = weight;
    }
    (mu, w)
}

/// Real grid-point values `zeta_l(theta_j, lambda_k)`, stored `[l][j][k]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub nlat: usize,
    pub nlon: usize,
    pub nlev: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(nlat: usize, nlon: usize, nlev: usize) -> Self {
        Self {
            nlat,
            nlon,
            nlev,
            values: vec![0.0; nlat * nlon * nlev],
        }
    }

    pub fn from_values(nlat: usize, nlon: usize, nlev: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nlat * nlon * nlev {
            return Err(shape(format!(
                "grid field expects {} values, got {}",
                nlat * nlon * nlev,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid field contains non-finite values"));
        }
        Ok(Self {
            nlat,
            nlon,
            nlev,
            values,
        })
    }

    #[inline]
    pub fn idx(&self, l: usize, j: usize, k: usize) -> usize {
        (l * self.nlat + j) * self.nlon + k
    }

    #[inline]
    pub fn get(&self, l: usize, j: usize, k: usize) -> f64 {
        self.values[self.idx(l, j, k)]
    }

    /// Values of one level, `[j][k]` row-major.
    pub fn level(&self, l: usize) -> &[f64] {
        let len = self.nlat * self.nlon;
        &self.values[l * len..(l + 1) * len]
    }

    pub fn level_mut(&mut self, l: usize) -> &mut [f64] {
        let len = self.nlat * self.nlon;
        &mut self.values[l * len..(l + 1) * len]
    }

    pub(crate) fn check_grid(&self, grid: &SphericalGrid) -> Result<()> {
        if self.nlat != grid.nlat || self.nlon != grid.nlon {
            return Err(shape(format!(
                "field is {}x{} but grid is {}x{}",
                self.nlat, self.nlon, grid.nlat, grid.nlon
            )));
        }
        Ok(())
    }
}

/// Complex spectral coefficients `zeta^m_{n,l}` on the triangular half-spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    pub trunc: Truncation,
    pub nlev: usize,
    /// `[l][packed(m, n)]`, see [`Truncation::index`].
    pub coeff: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(trunc: Truncation, nlev: usize) -> Self {
        Self {
            trunc,
            nlev,
            coeff: vec![Complex64::new(0.0, 0.0); trunc.coeff_count() * nlev],
        }
    }

    pub fn from_coeffs(trunc: Truncation, nlev: usize, coeff: Vec<Complex64>) -> Result<Self> {
        if coeff.len() != trunc.coeff_count() * nlev {
            return Err(shape(format!(
                "spectral field expects {} coefficients, got {}",
                trunc.coeff_count() * nlev,
                coeff.len()
            )));
        }
        Ok(Self { trunc, nlev, coeff })
    }

    #[inline]
    pub fn idx(&self, l: usize, m: usize, n: usize) -> usize {
        l * self.trunc.coeff_count() + self.trunc.index(m, n)
    }

    #[inline]
    pub fn get(&self, l: usize, m: usize, n: usize) -> Complex64 {
        self.coeff[self.idx(l, m, n)]
    }

    #[inline]
    pub fn set(&mut self, l: usize, m: usize, n: usize, value: Complex64) {
        let i = self.idx(l, m, n);
        self.coeff[i] = value;
    }

    /// Largest coefficient-wise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &SpectralField) -> Result<f64> {
        if self.trunc != other.trunc || self.nlev != other.nlev {
            return Err(shape("spectral fields differ in truncation or level count"));
        }
        Ok(self
            .coeff
            .iter()
            .zip(&other.coeff)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }
}

/// Deterministic random spectrum: moduli uniform in `[0, 1]`, phases uniform,
/// and real `m = 0` coefficients (with a random sign).
pub fn random_spectral_field(trunc: Truncation, nlev: usize, seed: u64) -> Result<SpectralField> {
    if nlev == 0 {
        return Err(invalid("nlev must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = SpectralField::zeros(trunc, nlev);
    for l in 0..nlev {
        for (m, n) in trunc.pairs() {
            let modulus: f64 = rng.random();
            let value = if m == 0 {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Complex64::new(sign * modulus, 0.0)
            } else {
                let phase = 2.0 * PI * rng.random::<f64>();
                Complex64::from_polar(modulus, phase)
            };
            field.set(l, m, n, value);
        }
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_one_rule() {
        let g = build_gaussian_grid(1, 4).unwrap();
        assert_eq!(g.mu, vec![0.0]);
        assert!((g.weights[0] - 2.0).abs() < 1e-15);
        let expected = [0.0, PI / 2.0, PI, 3.0 * PI / 2.0];
        for (a, b) in g.lambda.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn order_two_rule_reproduces_second_moment() {
        let g = build_gaussian_grid(2, 4).unwrap();
        let root = 1.0 / 3f64.sqrt();
        assert!((g.mu[0] - root).abs() < 1e-15);
        assert!((g.mu[1] + root).abs() < 1e-15);
        assert!((g.weights[0] - 1.0).abs() < 1e-14);
        assert!((g.weights[1] - 1.0).abs() < 1e-14);
        let second: f64 = g.mu.iter().zip(&g.weights).map(|(x, w)| w * x * x).sum();
        assert!((second - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weights_and_symmetry_at_32() {
        let g = build_gaussian_grid(32, 64).unwrap();
        let total: f64 = g.weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
        let first: f64 = g.mu.iter().zip(&g.weights).map(|(x, w)| w * x).sum();
        assert!(first.abs() < 1e-13);
        for j in 0..32 {
            assert!(g.mu[j] > -1.0 && g.mu[j] < 1.0);
            assert!((g.mu[j] + g.mu[31 - j]).abs() < 1e-13);
            if j > 0 {
                assert!(g.mu[j] < g.mu[j - 1]);
            }
        }
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(build_gaussian_grid(0, 4).is_err());
        assert!(build_gaussian_grid(4, 0).is_err());
    }

    #[test]
    fn packed_indexing_is_dense() {
        let t = Truncation::new(5);
        let idx: Vec<usize> = t.pairs().map(|(m, n)| t.index(m, n)).collect();
        assert_eq!(idx, (0..t.coeff_count()).collect::<Vec<_>>());
        assert_eq!(t.coeff_count(), 21);
    }

    #[test]
    fn random_field_properties() {
        let t = Truncation::new(6);
        let a = random_spectral_field(t, 2, 1).unwrap();
        let b = random_spectral_field(t, 2, 1).unwrap();
        let c = random_spectral_field(t, 2, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in 0..2 {
            for n in 0..=6 {
                assert_eq!(a.get(l, 0, n).im, 0.0);
            }
        }
        assert!(a.coeff.iter().all(|z| z.norm() <= 1.0 + 1e-15));
        assert!(random_spectral_field(t, 0, 1).is_err());
    }

    #[test]
    fn exactness_conditions() {
        let g = build_gaussian_grid(8, 16).unwrap();
        assert!(g.supports(&Truncation::new(7)).is_ok());
        assert!(g.supports(&Truncation::new(8)).is_err());
        let narrow = build_gaussian_grid(8, 10).unwrap();
        assert!(narrow.supports(&Truncation::new(5)).is_err());
    }
}
