//! Binary field files with a JSON sidecar header.
//!
//! A field stored under the base path `p` occupies two files:
//!
//! * `p.bin`: little-endian `f64` values, row-major in the declared index
//!   order; complex values are interleaved `(re, im)` pairs.
//! * `p.json`: a [`Header`] naming the kind and the extents.
//!
//! Reading back a file yields bit-identical values.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{FluxFields, UnstructuredColumnMesh};
use crate::optics::ComplexField;
use crate::sphere_grid::{GridField, SpectralField, Truncation};

pub const LAYOUT_VERSION: u32 = 1;

pub const KIND_GRID: &str = "grid_field";
pub const KIND_SPECTRAL: &str = "spectral_field";
pub const KIND_COMPLEX: &str = "complex_field";
pub const KIND_LEGENDRE: &str = "legendre_table";
pub const KIND_MESH: &str = "column_mesh";
pub const KIND_FLUX: &str = "flux_fields";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlat: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlon: Option<usize>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlev: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nb_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nb_levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nb_edges: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization_version: Option<u32>,
    pub layout_version: u32,
}

impl Header {
    fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            layout_version: LAYOUT_VERSION,
            ..Default::default()
        }
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a '{kind}' file, found '{}'",
                self.kind
            )));
        }
        if self.layout_version != LAYOUT_VERSION {
            return Err(Error::Format(format!(
                "unsupported layout version {}",
                self.layout_version
            )));
        }
        Ok(())
    }
}

fn require(value: Option<usize>, name: &str) -> Result<usize> {
    value.ok_or_else(|| Error::Format(format!("header is missing '{name}'")))
}

pub fn bin_path(base: &Path) -> PathBuf {
    with_suffix(base, "bin")
}

pub fn header_path(base: &Path) -> PathBuf {
    with_suffix(base, "json")
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!(
            "binary payload of {} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn flatten_complex(values: &[Complex64]) -> Vec<f64> {
    values.iter().flat_map(|z| [z.re, z.im]).collect()
}

fn pair_complex(values: &[f64]) -> Vec<Complex64> {
    values
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect()
}

pub fn write_raw(base: &Path, header: &Header, values: &[f64]) -> Result<()> {
    if let Some(parent) = base.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(bin_path(base), encode_f64(values))?;
    let mut json = serde_json::to_string_pretty(header)?;
    json.push('\n');
    fs::write(header_path(base), json)?;
    Ok(())
}

pub fn read_raw(base: &Path) -> Result<(Header, Vec<f64>)> {
    let header: Header = serde_json::from_slice(&fs::read(header_path(base))?)?;
    let values = decode_f64(&fs::read(bin_path(base))?)?;
    Ok((header, values))
}

/// Reads only the header of a stored field.
pub fn read_header(base: &Path) -> Result<Header> {
    Ok(serde_json::from_slice(&fs::read(header_path(base))?)?)
}

pub fn write_grid_field(base: &Path, field: &GridField) -> Result<()> {
    let mut h = Header::new(KIND_GRID);
    h.nlat = Some(field.nlat);
    h.nlon = Some(field.nlon);
    h.nlev = Some(field.nlev);
    write_raw(base, &h, &field.values)
}

pub fn read_grid_field(base: &Path) -> Result<GridField> {
    let (h, values) = read_raw(base)?;
    h.expect_kind(KIND_GRID)?;
    GridField::from_values(
        require(h.nlat, "nlat")?,
        require(h.nlon, "nlon")?,
        require(h.nlev, "nlev")?,
        values,
    )
}

pub fn write_spectral_field(base: &Path, field: &SpectralField) -> Result<()> {
    let mut h = Header::new(KIND_SPECTRAL);
    h.m_max = Some(field.trunc.m_max());
    h.nlev = Some(field.nlev);
    write_raw(base, &h, &flatten_complex(&field.coeff))
}

pub fn read_spectral_field(base: &Path) -> Result<SpectralField> {
    let (h, values) = read_raw(base)?;
    h.expect_kind(KIND_SPECTRAL)?;
    let trunc = Truncation::new(require(h.m_max, "M")?);
    SpectralField::from_coeffs(trunc, require(h.nlev, "nlev")?, pair_complex(&values))
}

pub fn write_complex_field(base: &Path, field: &ComplexField) -> Result<()> {
    let mut h = Header::new(KIND_COMPLEX);
    h.height = Some(field.height());
    h.width = Some(field.width());
    write_raw(base, &h, &flatten_complex(field.samples()))
}

pub fn read_complex_field(base: &Path) -> Result<ComplexField> {
    let (h, values) = read_raw(base)?;
    h.expect_kind(KIND_COMPLEX)?;
    ComplexField::from_samples(
        require(h.height, "height")?,
        require(h.width, "width")?,
        pair_complex(&values),
    )
}

/// Mesh payload: `pvol[nb_nodes]`, `dz`, then per node its degree followed by
/// `(edge id, sign)` pairs.
pub fn write_mesh(base: &Path, mesh: &UnstructuredColumnMesh) -> Result<()> {
    let mut h = Header::new(KIND_MESH);
    h.nb_nodes = Some(mesh.nb_nodes);
    h.nb_levels = Some(mesh.nb_levels);
    h.nb_edges = Some(mesh.nb_edges);
    let mut values = mesh.pvol.clone();
    values.push(mesh.dz);
    for (edges, signs) in mesh.node2edges.iter().zip(&mesh.node2edge_sign) {
        values.push(edges.len() as f64);
        for (&e, &s) in edges.iter().zip(signs) {
            values.push(e as f64);
            values.push(s);
        }
    }
    write_raw(base, &h, &values)
}

pub fn read_mesh(base: &Path) -> Result<UnstructuredColumnMesh> {
    let (h, values) = read_raw(base)?;
    h.expect_kind(KIND_MESH)?;
    let nb_nodes = require(h.nb_nodes, "nb_nodes")?;
    let truncated = || Error::Format("mesh payload is truncated".into());
    let pvol = values.get(..nb_nodes).ok_or_else(truncated)?.to_vec();
    let dz = *values.get(nb_nodes).ok_or_else(truncated)?;
    let mut cursor = nb_nodes + 1;
    let mut node2edges = Vec::with_capacity(nb_nodes);
    let mut node2edge_sign = Vec::with_capacity(nb_nodes);
    for _ in 0..nb_nodes {
        let deg = *values.get(cursor).ok_or_else(truncated)? as usize;
        cursor += 1;
        let pairs = values.get(cursor..cursor + 2 * deg).ok_or_else(truncated)?;
        node2edges.push(pairs.iter().step_by(2).map(|&e| e as usize).collect());
        node2edge_sign.push(pairs.iter().skip(1).step_by(2).copied().collect());
        cursor += 2 * deg;
    }
    UnstructuredColumnMesh::new(
        require(h.nb_levels, "nb_levels")?,
        require(h.nb_edges, "nb_edges")?,
        node2edges,
        node2edge_sign,
        pvol,
        dz,
    )
}

/// Flux payload: `pFx[jlev][iedge]` followed by `pFz[jlev][jnode]`.
pub fn write_flux(base: &Path, mesh: &UnstructuredColumnMesh, flux: &FluxFields) -> Result<()> {
    let mut h = Header::new(KIND_FLUX);
    h.nb_nodes = Some(mesh.nb_nodes);
    h.nb_levels = Some(mesh.nb_levels);
    h.nb_edges = Some(mesh.nb_edges);
    let mut values = flux.pfx.clone();
    values.extend_from_slice(&flux.pfz);
    write_raw(base, &h, &values)
}

pub fn read_flux(base: &Path) -> Result<FluxFields> {
    let (h, values) = read_raw(base)?;
    h.expect_kind(KIND_FLUX)?;
    let nodes = require(h.nb_nodes, "nb_nodes")?;
    let levels = require(h.nb_levels, "nb_levels")?;
    let edges = require(h.nb_edges, "nb_edges")?;
    let nfx = levels * edges;
    if values.len() != nfx + (levels + 1) * nodes {
        return Err(Error::Format("flux payload has the wrong length".into()));
    }
    Ok(FluxFields {
        pfx: values[..nfx].to_vec(),
        pfz: values[nfx..].to_vec(),
    })
}
