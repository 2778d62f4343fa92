//! Normalized associated Legendre functions on the Gaussian latitudes.
//!
//! Normalization: `(1/2) * integral_{-1}^{1} Pbar_n^m(mu)^2 dmu = 1`, with no
//! Condon-Shortley phase, so every sectoral value `Pbar_m^m` is non-negative.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::batch_gemm::Matrix;
use crate::error::{invalid, Error, Result};
use crate::format::{self, Header, KIND_LEGENDRE};
use crate::sphere_grid::{SphericalGrid, Truncation};

/// Bumped whenever the normalization or recurrence changes so stale caches miss.
pub const NORMALIZATION_VERSION: u32 = 1;

/// `Pbar_n^m(mu_j)` for `0 <= m <= n <= M` and every latitude.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreTable {
    trunc: Truncation,
    nlat: usize,
    /// `[packed(m, n)][j]`.
    values: Vec<f64>,
}

impl LegendreTable {
    pub fn trunc(&self) -> Truncation {
        self.trunc
    }

    pub fn nlat(&self) -> usize {
        self.nlat
    }

    /// Values of `Pbar_n^m` at every latitude.
    pub fn column(&self, m: usize, n: usize) -> &[f64] {
        let start = self.trunc.index(m, n) * self.nlat;
        &self.values[start..start + self.nlat]
    }

    pub fn get(&self, m: usize, n: usize, j: usize) -> f64 {
        self.values[self.trunc.index(m, n) * self.nlat + j]
    }

    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    /// Fails unless the table was built for this grid and truncation.
    pub fn check(&self, trunc: &Truncation, grid: &SphericalGrid) -> Result<()> {
        if self.trunc != *trunc || self.nlat != grid.nlat {
            return Err(Error::Shape(format!(
                "Legendre table (M = {}, nlat = {}) does not match M = {}, nlat = {}",
                self.trunc.m_max(),
                self.nlat,
                trunc.m_max(),
                grid.nlat
            )));
        }
        Ok(())
    }
}

/// Builds the table with the three-term recurrence in `n`, seeded by the
/// closed-form sectoral values.
pub fn build_legendre_table(trunc: Truncation, grid: &SphericalGrid) -> Result<LegendreTable> {
    let m_max = trunc.m_max();
    if grid.nlat < m_max + 1 {
        return Err(Error::InsufficientResolution {
            nlat: grid.nlat,
            m_max,
        });
    }
    let nlat = grid.nlat;
    let sin_theta: Vec<f64> = grid.mu.iter().map(|&x| (1.0 - x * x).sqrt()).collect();

    // Sectoral seeds Pbar_m^m, built sequentially since each depends on the previous.
    let mut sectoral = vec![vec![1.0; nlat]; m_max + 1];
    for m in 1..=m_max {
        let factor = ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
        let (done, rest) = sectoral.split_at_mut(m);
        for ((out, prev), s) in rest[0].iter_mut().zip(&done[m - 1]).zip(&sin_theta) {
            *out = factor * s * prev;
        }
    }

    let per_m: Vec<Vec<f64>> = (0..=m_max)
        .into_par_iter()
        .map(|m| {
            let rows = m_max - m + 1;
            let mut block = vec![0.0; rows * nlat];
            block[..nlat].copy_from_slice(&sectoral[m]);
            if rows > 1 {
                let c = ((2 * m + 3) as f64).sqrt();
                for j in 0..nlat {
                    block[nlat + j] = c * grid.mu[j] * block[j];
                }
            }
            for n in m + 2..=m_max {
                let nf = n as f64;
                let mf = m as f64;
                let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
                let b = (((nf - 1.0) * (nf - 1.0) - mf * mf)
                    / (4.0 * (nf - 1.0) * (nf - 1.0) - 1.0))
                    .sqrt();
                let r = n - m;
                for j in 0..nlat {
                    block[r * nlat + j] =
                        a * (grid.mu[j] * block[(r - 1) * nlat + j] - b * block[(r - 2) * nlat + j]);
                }
            }
            block
        })
        .collect();

    Ok(LegendreTable {
        trunc,
        nlat,
        values: per_m.concat(),
    })
}

/// The `(M - m + 1) x nlat` matrix whose row `r` holds `Pbar_{m+r}^m` at every latitude.
pub fn legendre_matrix(table: &LegendreTable, m: usize) -> Result<Matrix> {
    let m_max = table.trunc.m_max();
    if m > m_max {
        return Err(invalid(format!("m = {m} exceeds truncation M = {m_max}")));
    }
    let rows = m_max - m + 1;
    let start = table.trunc.offset(m) * table.nlat;
    Matrix::from_vec(
        rows,
        table.nlat,
        table.values[start..start + rows * table.nlat].to_vec(),
    )
}

fn cache_base(dir: &Path, trunc: &Truncation, nlat: usize) -> PathBuf {
    dir.join(format!(
        "legendre_M{}_nlat{}_v{}",
        trunc.m_max(),
        nlat,
        NORMALIZATION_VERSION
    ))
}

fn read_cached(base: &Path, trunc: &Truncation, nlat: usize) -> Result<LegendreTable> {
    let (header, values) = format::read_raw(base)?;
    let matches = header.kind == KIND_LEGENDRE
        && header.m_max == Some(trunc.m_max())
        && header.nlat == Some(nlat)
        && header.normalization_version == Some(NORMALIZATION_VERSION)
        && values.len() == trunc.coeff_count() * nlat;
    if !matches {
        return Err(Error::Format(format!(
            "cached table at {} does not match the request",
            base.display()
        )));
    }
    Ok(LegendreTable {
        trunc: *trunc,
        nlat,
        values,
    })
}

/// Returns the table from `cache_dir` when present, otherwise builds and stores it.
///
/// A cache hit is bit-identical to a fresh build. Unreadable or mismatched
/// cache entries are rebuilt and overwritten.
pub fn load_or_build(
    trunc: Truncation,
    grid: &SphericalGrid,
    cache_dir: &Path,
) -> Result<LegendreTable> {
    let base = cache_base(cache_dir, &trunc, grid.nlat);
    match read_cached(&base, &trunc, grid.nlat) {
        Ok(table) => {
            log::debug!("Legendre cache hit: {}", base.display());
            return Ok(table);
        }
        Err(Error::Io(_)) => {}
        Err(e) => log::warn!("ignoring Legendre cache entry: {e}"),
    }
    let table = build_legendre_table(trunc, grid)?;
    fs::create_dir_all(cache_dir)?;
    let header = Header {
        kind: KIND_LEGENDRE.to_string(),
        nlat: Some(grid.nlat),
        m_max: Some(trunc.m_max()),
        normalization_version: Some(NORMALIZATION_VERSION),
        layout_version: format::LAYOUT_VERSION,
        ..Default::default()
    };
    format::write_raw(&base, &header, &table.values)?;
    Ok(table)
}
