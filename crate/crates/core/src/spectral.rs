//! Forward and inverse spherical-harmonics transforms.
//!
//! Synthesis:
//!
//! ```text
//! F^m_l(mu_j)           = sum_{n=m}^{M} zeta^m_{n,l} Pbar_n^m(mu_j)
//! zeta_l(theta_j, lam_k) = Re( F^0 + 2 sum_{m=1}^{M} F^m e^{i m lam_k} )
//! ```
//!
//! Analysis applies `1/nlon` in the Fourier stage and `(1/2) sum_j w_j` in the
//! Legendre stage, which makes analysis the exact inverse of synthesis on
//! band-limited fields.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::batch_gemm::{pad_batch, Layout, Matrix};
use crate::error::{invalid, Result};
use crate::legendre::{legendre_matrix, LegendreTable};
use crate::sphere_grid::{GridField, SphericalGrid, SpectralField, Truncation};

/// `e^{-i m lambda_k}` for `m = 0..=M`, `k = 0..nlon`, stored `[m][k]`.
struct Twiddles {
    nlon: usize,
    values: Vec<Complex64>,
}

impl Twiddles {
    fn new(m_max: usize, nlon: usize) -> Self {
        let mut values = Vec::with_capacity((m_max + 1) * nlon);
        for m in 0..=m_max {
            for k in 0..nlon {
                // Reduce the phase index first so large m*k keeps full accuracy.
                let phase = 2.0 * PI * ((m * k) % nlon) as f64 / nlon as f64;
                values.push(Complex64::new(phase.cos(), -phase.sin()));
            }
        }
        Self { nlon, values }
    }

    #[inline]
    fn row(&self, m: usize) -> &[Complex64] {
        &self.values[m * self.nlon..(m + 1) * self.nlon]
    }
}

fn check_inputs(trunc: &Truncation, grid: &SphericalGrid, table: &LegendreTable) -> Result<()> {
    grid.supports(trunc)?;
    table.check(trunc, grid)
}

/// Spectral to grid-point synthesis.
pub fn inverse_transform(
    spec: &SpectralField,
    grid: &SphericalGrid,
    table: &LegendreTable,
) -> Result<GridField> {
    let trunc = spec.trunc;
    check_inputs(&trunc, grid, table)?;
    let m_max = trunc.m_max();
    let (nlat, nlon) = (grid.nlat, grid.nlon);
    let tw = Twiddles::new(m_max, nlon);

    let levels: Vec<Vec<f64>> = (0..spec.nlev)
        .into_par_iter()
        .map(|l| {
            let mut out = vec![0.0; nlat * nlon];
            let mut fourier = vec![Complex64::new(0.0, 0.0); m_max + 1];
            for j in 0..nlat {
                for (m, f) in fourier.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for n in m..=m_max {
                        acc += spec.get(l, m, n) * table.get(m, n, j);
                    }
                    *f = acc;
                }
                let ring = &mut out[j * nlon..(j + 1) * nlon];
                for (k, value) in ring.iter_mut().enumerate() {
                    let mut sum = fourier[0].re;
                    for (m, f) in fourier.iter().enumerate().skip(1) {
                        // e^{+i m lambda} is the conjugate of the stored twiddle.
                        let e = tw.row(m)[k].conj();
                        sum += 2.0 * (f.re * e.re - f.im * e.im);
                    }
                    *value = sum;
                }
            }
            out
        })
        .collect();

    GridField::from_values(nlat, nlon, spec.nlev, levels.concat())
}

/// Quadrature-weighted Fourier coefficients `(w_j / 2) F^m_l(mu_j)`, stored `[l][m][j]`.
fn weighted_fourier(field: &GridField, grid: &SphericalGrid, m_max: usize) -> Vec<Complex64> {
    let (nlat, nlon) = (grid.nlat, grid.nlon);
    let tw = Twiddles::new(m_max, nlon);
    let inv_nlon = 1.0 / nlon as f64;
    let per_level: Vec<Vec<Complex64>> = (0..field.nlev)
        .into_par_iter()
        .map(|l| {
            let level = field.level(l);
            let mut out = vec![Complex64::new(0.0, 0.0); (m_max + 1) * nlat];
            for j in 0..nlat {
                let ring = &level[j * nlon..(j + 1) * nlon];
                let half_w = 0.5 * grid.weights[j];
                for m in 0..=m_max {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (v, e) in ring.iter().zip(tw.row(m)) {
                        acc += e * *v;
                    }
                    out[m * nlat + j] = acc * inv_nlon * half_w;
                }
            }
            out
        })
        .collect();
    per_level.concat()
}

/// Grid-point to spectral analysis, Legendre stage evaluated coefficient by coefficient.
pub fn forward_transform(
    field: &GridField,
    grid: &SphericalGrid,
    table: &LegendreTable,
) -> Result<SpectralField> {
    let trunc = table.trunc();
    check_inputs(&trunc, grid, table)?;
    field.check_grid(grid)?;
    let m_max = trunc.m_max();
    let nlat = grid.nlat;
    let weighted = weighted_fourier(field, grid, m_max);

    let mut spec = SpectralField::zeros(trunc, field.nlev);
    for l in 0..field.nlev {
        for (m, n) in trunc.pairs() {
            let p = table.column(m, n);
            let g = &weighted[(l * (m_max + 1) + m) * nlat..(l * (m_max + 1) + m + 1) * nlat];
            let (mut re, mut im) = (0.0, 0.0);
            for (pj, gj) in p.iter().zip(g) {
                re += pj * gj.re;
                im += pj * gj.im;
            }
            spec.set(l, m, n, Complex64::new(re, im));
        }
    }
    Ok(spec)
}

/// Grid-point to spectral analysis with the Legendre stage run as one padded
/// batch of per-`m` matrix products `Pbar_m (nlat x 2 nlev)`.
pub fn forward_transform_gemm(
    field: &GridField,
    grid: &SphericalGrid,
    table: &LegendreTable,
    layout: Layout,
) -> Result<SpectralField> {
    let members = legendre_batch_members(field, grid, table)?;
    let trunc = table.trunc();
    let nlev = field.nlev;
    let products = pad_batch(&members)?.batched_multiply(layout);

    let mut spec = SpectralField::zeros(trunc, nlev);
    for (m, c) in products.iter().enumerate() {
        for r in 0..c.rows() {
            for l in 0..nlev {
                spec.set(l, m, m + r, Complex64::new(c.get(r, 2 * l), c.get(r, 2 * l + 1)));
            }
        }
    }
    Ok(spec)
}

/// Legendre-stage matrices of a transform, one `(Pbar_m, weighted Fourier data)`
/// pair per zonal wavenumber. Used by benchmarks of the padded batch.
pub fn legendre_batch_members(
    field: &GridField,
    grid: &SphericalGrid,
    table: &LegendreTable,
) -> Result<Vec<(Matrix, Matrix)>> {
    let trunc = table.trunc();
    check_inputs(&trunc, grid, table)?;
    field.check_grid(grid)?;
    let m_max = trunc.m_max();
    let (nlat, nlev) = (grid.nlat, field.nlev);
    let weighted = weighted_fourier(field, grid, m_max);
    (0..=m_max)
        .map(|m| {
            let a = legendre_matrix(table, m)?;
            let mut b = Matrix::zeros(nlat, 2 * nlev);
            for l in 0..nlev {
                for j in 0..nlat {
                    let g = weighted[(l * (m_max + 1) + m) * nlat + j];
                    b.set(j, 2 * l, g.re);
                    b.set(j, 2 * l + 1, g.im);
                }
            }
            Ok((a, b))
        })
        .collect()
}

/// Rings grouped by length so each group can be handed to one uniform batched FFT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingBatchPlan {
    /// `(ring length, ring indices)` in order of first appearance.
    pub groups: Vec<(usize, Vec<usize>)>,
}

impl RingBatchPlan {
    pub fn batch_count(&self) -> usize {
        self.groups.len()
    }
}

pub fn plan_ring_fft_batches(ring_lengths: &[usize]) -> Result<RingBatchPlan> {
    if ring_lengths.is_empty() {
        return Err(invalid("ring list is empty"));
    }
    if ring_lengths.contains(&0) {
        return Err(invalid("ring lengths must be positive"));
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, &len) in ring_lengths.iter().enumerate() {
        match groups.iter_mut().find(|(l, _)| *l == len) {
            Some((_, members)) => members.push(i),
            None => groups.push((len, vec![i])),
        }
    }
    Ok(RingBatchPlan { groups })
}

/// Quadrature form of the mean square of a real field,
/// `(1 / (2 nlon)) sum_{j,k} w_j f_{jk}^2`, per level.
pub fn grid_mean_square(field: &GridField, grid: &SphericalGrid) -> Result<Vec<f64>> {
    field.check_grid(grid)?;
    Ok((0..field.nlev)
        .map(|l| {
            let level = field.level(l);
            let mut total = 0.0;
            for j in 0..grid.nlat {
                let ring: f64 = level[j * grid.nlon..(j + 1) * grid.nlon]
                    .iter()
                    .map(|v| v * v)
                    .sum();
                total += grid.weights[j] * ring;
            }
            total / (2.0 * grid.nlon as f64)
        })
        .collect())
}

/// Spectral energy `sum_n |c^0_n|^2 + 2 sum_{m>=1} sum_n |c^m_n|^2`, per level.
pub fn spectral_energy(spec: &SpectralField) -> Vec<f64> {
    (0..spec.nlev)
        .map(|l| {
            spec.trunc
                .pairs()
                .map(|(m, n)| {
                    let e = spec.get(l, m, n).norm_sqr();
                    if m == 0 {
                        e
                    } else {
                        2.0 * e
                    }
                })
                .sum()
        })
        .collect()
}
