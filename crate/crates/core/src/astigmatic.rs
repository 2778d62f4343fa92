//! Multichannel astigmatic processor: a 1D Fourier transform along longitude
//! followed by parallel 1D Legendre projections along latitude, read out on
//! the central output row.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::legendre::LegendreTable;
use crate::optics::{centered_fft1, ComplexField};
use crate::sphere_grid::SphericalGrid;

/// Per latitude row, the centered unitary DFT over longitude.
pub fn stage1_rowwise_ft(field: &ComplexField) -> ComplexField {
    let (h, w) = (field.height(), field.width());
    let mut planner = FftPlanner::new();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend(centered_fft1(
            &field.samples()[y * w..(y + 1) * w],
            &mut planner,
            FftDirection::Forward,
        ));
    }
    ComplexField::from_samples(h, w, out).expect("same shape as input")
}

/// Latitude kernels of the second stage.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionKernels {
    /// One kernel for every column: a filter uniform along the preserved axis.
    Shared(Vec<f64>),
    /// Column `c` correlates with `kernels[c]`.
    PerColumn(Vec<Vec<f64>>),
}

impl ProjectionKernels {
    fn kernel(&self, column: usize) -> &[f64] {
        match self {
            ProjectionKernels::Shared(k) => k,
            ProjectionKernels::PerColumn(ks) => &ks[column],
        }
    }

    fn check(&self, nlat: usize, width: usize) -> Result<()> {
        let bad = |len: usize| len != nlat;
        match self {
            ProjectionKernels::Shared(k) if bad(k.len()) => {
                Err(shape(format!("kernel has {} taps, field has {nlat} rows", k.len())))
            }
            ProjectionKernels::PerColumn(ks) if ks.len() != width => {
                Err(shape(format!("{} kernels for {width} columns", ks.len())))
            }
            ProjectionKernels::PerColumn(ks) => match ks.iter().find(|k| bad(k.len())) {
                Some(k) => Err(shape(format!("kernel has {} taps, field has {nlat} rows", k.len()))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// Columnwise 1D correlation with the kernels, sampled at the central row:
/// `coefficients[c] = sum_j mixed[j][c] p_c(j)`.
pub fn stage2_parallel_projection(mixed: &ComplexField, kernels: &ProjectionKernels) -> Result<Vec<Complex64>> {
    let (h, w) = (mixed.height(), mixed.width());
    kernels.check(h, w)?;
    let mut planner = FftPlanner::new();
    let root_h = (h as f64).sqrt();
    let filter_of = |planner: &mut FftPlanner<f64>, k: &[f64]| -> Vec<Complex64> {
        let taps: Vec<Complex64> = k.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        centered_fft1(&taps, planner, FftDirection::Forward)
            .iter()
            .map(|z| z.conj() * root_h)
            .collect()
    };
    let shared = match kernels {
        ProjectionKernels::Shared(k) => Some(filter_of(&mut planner, k)),
        ProjectionKernels::PerColumn(_) => None,
    };

    let mut column = vec![Complex64::new(0.0, 0.0); h];
    let mut out = Vec::with_capacity(w);
    for c in 0..w {
        for (j, v) in column.iter_mut().enumerate() {
            *v = mixed.get(j, c);
        }
        let own;
        let filter = match &shared {
            Some(f) => f,
            None => {
                own = filter_of(&mut planner, kernels.kernel(c));
                &own
            }
        };
        let mut spectrum = centered_fft1(&column, &mut planner, FftDirection::Forward);
        for (s, f) in spectrum.iter_mut().zip(filter) {
            *s *= f;
        }
        let result = centered_fft1(&spectrum, &mut planner, FftDirection::Inverse);
        out.push(result[h / 2]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    /// Every column uses the `m = 0` kernel of its `n`.
    Shared,
    /// Column `m` uses the kernel of its own `(m, n)`.
    Exact,
}

impl std::str::FromStr for KernelMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(KernelMode::Shared),
            "exact" => Ok(KernelMode::Exact),
            _ => Err(invalid(format!("mode must be 'shared' or 'exact', got '{s}'"))),
        }
    }
}

/// Coefficients `zeta^m_n` for `m = 0..=n` from one filter frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AstigmaticRow {
    pub n: usize,
    pub coeffs: Vec<Complex64>,
}

fn check_inputs(level: &[f64], grid: &SphericalGrid, table: &LegendreTable) -> Result<()> {
    if level.len() != grid.nlat * grid.nlon {
        return Err(shape(format!(
            "level slice has {} values, grid has {}x{}",
            level.len(),
            grid.nlat,
            grid.nlon
        )));
    }
    if table.nlat() != grid.nlat {
        return Err(shape("Legendre table and grid disagree on nlat"));
    }
    if grid.nlon / 2 + table.trunc().m_max() >= grid.nlon {
        return Err(invalid(format!(
            "nlon = {} cannot hold wavenumbers up to {} right of center",
            grid.nlon,
            table.trunc().m_max()
        )));
    }
    Ok(())
}

fn row_from_mixed(
    mixed: &ComplexField,
    grid: &SphericalGrid,
    table: &LegendreTable,
    n: usize,
    mode: KernelMode,
) -> Result<AstigmaticRow> {
    let (nlat, nlon) = (grid.nlat, grid.nlon);
    let center = nlon / 2;
    let kernel = |m: usize| -> Vec<f64> {
        table
            .column(m, n)
            .iter()
            .zip(&grid.weights)
            .map(|(p, w)| 0.5 * w * p)
            .collect()
    };
    let kernels = match mode {
        KernelMode::Shared => ProjectionKernels::Shared(kernel(0)),
        KernelMode::Exact => ProjectionKernels::PerColumn(
            (0..nlon)
                .map(|c| match c.checked_sub(center) {
                    Some(m) if m <= n => kernel(m),
                    _ => vec![0.0; nlat],
                })
                .collect(),
        ),
    };
    let projected = stage2_parallel_projection(mixed, &kernels)?;
    // Undo the centering phase and the unitary scale of the first stage.
    let scale = 1.0 / (nlon as f64).sqrt();
    let coeffs = (0..=n)
        .map(|m| {
            let phase = -2.0 * PI * ((m * center) % nlon) as f64 / nlon as f64;
            projected[center + m] * Complex64::from_polar(scale, phase)
        })
        .collect();
    Ok(AstigmaticRow { n, coeffs })
}

/// Row `n` of the spectrum of one level slice (`nlat x nlon`, row-major).
pub fn astigmatic_forward(
    level: &[f64],
    grid: &SphericalGrid,
    table: &LegendreTable,
    n: usize,
    mode: KernelMode,
) -> Result<AstigmaticRow> {
    check_inputs(level, grid, table)?;
    let m_max = table.trunc().m_max();
    if n > m_max {
        return Err(invalid(format!("n = {n} exceeds truncation M = {m_max}")));
    }
    let mixed = stage1_rowwise_ft(&ComplexField::from_real(grid.nlat, grid.nlon, level)?);
    row_from_mixed(&mixed, grid, table, n, mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AstigmaticSweep {
    pub mode: KernelMode,
    /// Rows for `n = 0..=M`.
    pub rows: Vec<AstigmaticRow>,
    /// Distinct filters displayed during the sweep.
    pub filter_frames: usize,
}

impl AstigmaticSweep {
    pub fn coeff(&self, m: usize, n: usize) -> Complex64 {
        self.rows[n].coeffs[m]
    }
}

/// Every row of the spectrum, one filter frame per `n`.
pub fn astigmatic_sweep(
    level: &[f64],
    grid: &SphericalGrid,
    table: &LegendreTable,
    mode: KernelMode,
) -> Result<AstigmaticSweep> {
    check_inputs(level, grid, table)?;
    let mixed = stage1_rowwise_ft(&ComplexField::from_real(grid.nlat, grid.nlon, level)?);
    let rows = (0..=table.trunc().m_max())
        .into_par_iter()
        .map(|n| row_from_mixed(&mixed, grid, table, n, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(AstigmaticSweep {
        mode,
        filter_frames: rows.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRow {
    pub n: usize,
    pub m: usize,
    pub exact_re: f64,
    pub exact_im: f64,
    pub shared_re: f64,
    pub shared_im: f64,
    pub abs_deviation: f64,
}

/// Shared-kernel error against the exact pipeline for every `(m, n)`.
pub fn deviation_table(exact: &AstigmaticSweep, shared: &AstigmaticSweep) -> Result<Vec<DeviationRow>> {
    if exact.rows.len() != shared.rows.len() {
        return Err(shape("sweeps cover different truncations"));
    }
    let mut out = Vec::new();
    for (e, s) in exact.rows.iter().zip(&shared.rows) {
        for (m, (a, b)) in e.coeffs.iter().zip(&s.coeffs).enumerate() {
            out.push(DeviationRow {
                n: e.n,
                m,
                exact_re: a.re,
                exact_im: a.im,
                shared_re: b.re,
                shared_im: b.im,
                abs_deviation: (a - b).norm(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legendre::build_legendre_table;
    use crate::sphere_grid::{build_gaussian_grid, Truncation};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn constant_rows_focus_to_center() {
        let f = ComplexField::from_fn(3, 8, |y, _| c(y as f64 + 1.0, 0.0)).unwrap();
        let g = stage1_rowwise_ft(&f);
        for y in 0..3 {
            for x in 0..8 {
                let expect = if x == 4 { (y as f64 + 1.0) * 8f64.sqrt() } else { 0.0 };
                assert!((g.get(y, x) - c(expect, 0.0)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn pure_tone_lands_in_its_column() {
        let (nlat, nlon, m0) = (4, 16, 3);
        let f = ComplexField::from_fn(nlat, nlon, |_, k| {
            Complex64::from_polar(1.0, 2.0 * PI * (m0 * k) as f64 / nlon as f64)
        })
        .unwrap();
        let g = stage1_rowwise_ft(&f);
        for y in 0..nlat {
            let total: f64 = (0..nlon).map(|x| g.get(y, x).norm_sqr()).sum();
            let peak = g.get(y, nlon / 2 + m0).norm_sqr();
            assert!(peak >= (1.0 - 1e-12) * total);
            assert!((total - nlon as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_of_single_column() {
        let p = [0.3, -1.0, 2.0, 0.5, 0.1];
        let m0 = 2;
        let mixed = ComplexField::from_fn(5, 6, |j, col| c(if col == m0 { p[j] } else { 0.0 }, 0.0)).unwrap();
        let out = stage2_parallel_projection(&mixed, &ProjectionKernels::Shared(p.to_vec())).unwrap();
        let sum_sq: f64 = p.iter().map(|v| v * v).sum();
        for (col, v) in out.iter().enumerate() {
            let expect = if col == m0 { sum_sq } else { 0.0 };
            assert!((v - c(expect, 0.0)).norm() < 1e-10);
        }
        let per = ProjectionKernels::PerColumn(vec![p.to_vec(); 6]);
        let out2 = stage2_parallel_projection(&mixed, &per).unwrap();
        for (a, b) in out.iter().zip(&out2) {
            assert!((a - b).norm() < 1e-14);
        }
        assert!(stage2_parallel_projection(&mixed, &ProjectionKernels::Shared(vec![1.0; 4])).is_err());
    }

    #[test]
    fn zero_field_and_range() {
        let grid = build_gaussian_grid(8, 16).unwrap();
        let table = build_legendre_table(Truncation::new(5), &grid).unwrap();
        let zero = vec![0.0; 8 * 16];
        let row = astigmatic_forward(&zero, &grid, &table, 3, KernelMode::Exact).unwrap();
        assert!(row.coeffs.iter().all(|z| z.norm() == 0.0));
        assert_eq!(row.coeffs.len(), 4);
        assert!(astigmatic_forward(&zero, &grid, &table, 6, KernelMode::Exact).is_err());
        assert!("other".parse::<KernelMode>().is_err());
    }
}
