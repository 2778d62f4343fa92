//! Numerical model of the coherent 4f correlator: thin-lens Fourier transforms,
//! SLM encoding onto an operating curve, filter realization, coefficient
//! extraction at the correlation origin, tiling and phase retrieval.
//!
//! Transforms are centered: the zero frequency, and the origin of every
//! correlation, sits at index `(height / 2, width / 2)`.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::legendre::LegendreTable;
use crate::sphere_grid::SphericalGrid;

/// Sampled complex amplitude over a `height x width` aperture, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    height: usize,
    width: usize,
    samples: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::from_samples(height, width, vec![Complex64::new(0.0, 0.0); height * width])
    }

    pub fn from_samples(height: usize, width: usize, samples: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("field dimensions must be positive, got {height}x{width}")));
        }
        if samples.len() != height * width {
            return Err(shape(format!(
                "{} samples for a {height}x{width} field",
                samples.len()
            )));
        }
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("field samples must be finite"));
        }
        Ok(Self {
            height,
            width,
            samples,
        })
    }

    pub fn from_real(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        Self::from_samples(
            height,
            width,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> Complex64) -> Result<Self> {
        let mut samples = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(y, x));
            }
        }
        Self::from_samples(height, width, samples)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn get(&self, y: usize, x: usize) -> Complex64 {
        self.samples[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: Complex64) {
        self.samples[y * self.width + x] = v;
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `sum conj(self) * other`.
    pub fn inner(&self, other: &ComplexField) -> Complex64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: Complex64) -> ComplexField {
        self.map(|z| z * s)
    }

    pub fn conj(&self) -> ComplexField {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexField {
        ComplexField {
            height: self.height,
            width: self.width,
            samples: self.samples.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn same_shape(&self, other: &ComplexField) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Pads into a `height x width` frame with the tile's own center on the
    /// frame center: the tile's top-left lands at `(H/2 - h/2, W/2 - w/2)`.
    pub fn embed_centered(&self, height: usize, width: usize) -> Result<ComplexField> {
        if self.height > height || self.width > width {
            return Err(shape(format!(
                "{}x{} field does not fit a {height}x{width} frame",
                self.height, self.width
            )));
        }
        let mut out = ComplexField::zeros(height, width)?;
        out.paste(self, height / 2 - self.height / 2, width / 2 - self.width / 2);
        Ok(out)
    }

    fn paste(&mut self, tile: &ComplexField, top: usize, left: usize) {
        for y in 0..tile.height {
            let dst = (top + y) * self.width + left;
            self.samples[dst..dst + tile.width]
                .copy_from_slice(&tile.samples[y * tile.width..(y + 1) * tile.width]);
        }
    }
}

fn shift_axis(src: &[Complex64], dst: &mut [Complex64], offset: usize) {
    let n = src.len();
    for (i, d) in dst.iter_mut().enumerate() {
        *d = src[(i + offset) % n];
    }
}

/// Centered 2D DFT scaled by `1/sqrt(N)`.
fn centered_fft2(field: &ComplexField, direction: FftDirection) -> ComplexField {
    let (h, w) = (field.height, field.width);
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(w, direction);
    let col_fft = planner.plan_fft(h, direction);

    // ifftshift along x, transform, fftshift along x.
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        shift_axis(&field.samples[y * w..(y + 1) * w], &mut rows[y * w..(y + 1) * w], w / 2);
    }
    row_fft.process(&mut rows);
    let mut tmp = vec![Complex64::new(0.0, 0.0); w];
    for y in 0..h {
        tmp.copy_from_slice(&rows[y * w..(y + 1) * w]);
        shift_axis(&tmp, &mut rows[y * w..(y + 1) * w], w - w / 2);
    }

    let mut cols = vec![Complex64::new(0.0, 0.0); h * w];
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        shift_axis(&col, &mut cols[x * h..(x + 1) * h], h / 2);
    }
    col_fft.process(&mut cols);

    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for x in 0..w {
        shift_axis(&cols[x * h..(x + 1) * h], &mut col, h - h / 2);
        for y in 0..h {
            out[y * w + x] = col[y] * scale;
        }
    }
    ComplexField {
        height: h,
        width: w,
        samples: out,
    }
}

/// Field in the back focal plane of a thin lens: the centered unitary 2D DFT.
pub fn lens_ft(field: &ComplexField) -> ComplexField {
    centered_fft2(field, FftDirection::Forward)
}

/// Inverse of [`lens_ft`].
pub fn lens_ift(field: &ComplexField) -> ComplexField {
    centered_fft2(field, FftDirection::Inverse)
}

/// Centered unitary 1D DFT of one line of samples.
pub(crate) fn centered_fft1(
    line: &[Complex64],
    planner: &mut FftPlanner<f64>,
    direction: FftDirection,
) -> Vec<Complex64> {
    let n = line.len();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    shift_axis(line, &mut buf, n / 2);
    planner.plan_fft(n, direction).process(&mut buf);
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    shift_axis(&buf, &mut out, n - n / 2);
    let scale = 1.0 / (n as f64).sqrt();
    out.iter_mut().for_each(|z| *z *= scale);
    out
}

/// Number of modulation states of an SLM pixel.
pub const SLM_LEVELS: usize = 256;

/// Static 2D tree over the curve levels for exact nearest-level queries.
#[derive(Debug, Clone)]
struct LevelTree {
    /// Level indices in tree order; the node of range `[lo, hi)` is at `(lo + hi) / 2`.
    order: Vec<usize>,
    split_on_re: Vec<bool>,
    /// Bounding box of each node's range: `[re_min, re_max, im_min, im_max]`.
    bbox: Vec<[f64; 4]>,
}

impl LevelTree {
    fn build(levels: &[Complex64]) -> Self {
        let n = levels.len();
        let mut tree = LevelTree {
            order: (0..n).collect(),
            split_on_re: vec![true; n],
            bbox: vec![[0.0; 4]; n],
        };
        tree.build_range(levels, 0, n, 0);
        tree
    }

    fn build_range(&mut self, levels: &[Complex64], lo: usize, hi: usize, depth: usize) {
        if lo >= hi {
            return;
        }
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for &i in &self.order[lo..hi] {
            let z = levels[i];
            b = [b[0].min(z.re), b[1].max(z.re), b[2].min(z.im), b[3].max(z.im)];
        }
        let on_re = if depth == 0 {
            b[1] - b[0] >= b[3] - b[2]
        } else {
            depth.is_multiple_of(2)
        };
        let key = |i: &usize| {
            let z = levels[*i];
            (if on_re { z.re } else { z.im }, *i)
        };
        self.order[lo..hi].sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        let mid = (lo + hi) / 2;
        self.split_on_re[mid] = on_re;
        self.bbox[mid] = b;
        self.build_range(levels, lo, mid, depth + 1);
        self.build_range(levels, mid + 1, hi, depth + 1);
    }

    fn nearest(&self, levels: &[Complex64], v: Complex64) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(levels, v, 0, self.order.len(), &mut best);
        best.1
    }

    fn search(&self, levels: &[Complex64], v: Complex64, lo: usize, hi: usize, best: &mut (f64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let b = self.bbox[mid];
        let dx = (b[0] - v.re).max(0.0).max(v.re - b[1]);
        let dy = (b[2] - v.im).max(0.0).max(v.im - b[3]);
        if dx * dx + dy * dy > best.0 {
            return;
        }
        let i = self.order[mid];
        let d = (v - levels[i]).norm_sqr();
        if d < best.0 || (d == best.0 && i < best.1) {
            *best = (d, i);
        }
        let p = levels[i];
        let below = if self.split_on_re[mid] { v.re < p.re } else { v.im < p.im };
        if below {
            self.search(levels, v, lo, mid, best);
            self.search(levels, v, mid + 1, hi, best);
        } else {
            self.search(levels, v, mid + 1, hi, best);
            self.search(levels, v, lo, mid, best);
        }
    }
}

/// The 256 complex modulation states reachable by an SLM.
#[derive(Debug, Clone)]
pub struct OperatingCurve {
    levels: Vec<Complex64>,
    tree: LevelTree,
}

#[derive(Serialize, Deserialize)]
struct CurveFile {
    levels: Vec<[f64; 2]>,
}

impl PartialEq for OperatingCurve {
    fn eq(&self, other: &Self) -> bool {
        self.levels == other.levels
    }
}

impl OperatingCurve {
    pub fn new(levels: Vec<Complex64>) -> Result<Self> {
        if levels.len() != SLM_LEVELS {
            return Err(invalid(format!(
                "operating curve needs {SLM_LEVELS} levels, got {}",
                levels.len()
            )));
        }
        if levels.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("operating curve levels must be finite"));
        }
        if let Some(z) = levels.iter().find(|z| z.norm() > 1.0 + 1e-12) {
            return Err(invalid(format!("operating curve level {z} exceeds unit modulus")));
        }
        let tree = LevelTree::build(&levels);
        Ok(Self { levels, tree })
    }

    /// Amplitude-phase coupled curve with a modulation depth of pi:
    /// `levels[k] = (k/255) e^{i pi k/255}`.
    pub fn coupled() -> Self {
        Self::from_fn(|t| Complex64::from_polar(t, PI * t))
    }

    /// Full phase-only curve `levels[k] = e^{2 pi i k/256}`.
    pub fn unit_circle() -> Self {
        Self::new(
            (0..SLM_LEVELS)
                .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / SLM_LEVELS as f64))
                .collect(),
        )
        .expect("unit circle is a valid curve")
    }

    /// Binary phase device: the first half of the levels are -1, the rest +1.
    pub fn binary() -> Self {
        Self::new(
            (0..SLM_LEVELS)
                .map(|k| Complex64::new(if k < SLM_LEVELS / 2 { -1.0 } else { 1.0 }, 0.0))
                .collect(),
        )
        .expect("binary curve is a valid curve")
    }

    /// Phase-only curve covering `[0, pi]`.
    pub fn half_circle() -> Self {
        Self::from_fn(|t| Complex64::from_polar(1.0, PI * t))
    }

    /// Curve from a function of `t = k/255`.
    fn from_fn(f: impl Fn(f64) -> Complex64) -> Self {
        Self::new(
            (0..SLM_LEVELS)
                .map(|k| f(k as f64 / (SLM_LEVELS - 1) as f64))
                .collect(),
        )
        .expect("preset curve is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "coupled" => Some(Self::coupled()),
            "unit-circle" => Some(Self::unit_circle()),
            "binary" => Some(Self::binary()),
            "half-circle" => Some(Self::half_circle()),
            _ => None,
        }
    }

    /// Reads `{"levels": [[re, im], ...]}`.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: CurveFile = serde_json::from_str(&text)?;
        Self::new(file.levels.iter().map(|p| Complex64::new(p[0], p[1])).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CurveFile {
            levels: self.levels.iter().map(|z| [z.re, z.im]).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn levels(&self) -> &[Complex64] {
        &self.levels
    }

    /// Index of the closest level; equidistant levels resolve to the lowest index.
    pub fn nearest_index(&self, v: Complex64) -> usize {
        self.tree.nearest(&self.levels, v)
    }
}

/// Maps every pixel to its nearest operating-curve level.
pub fn encode_on_slm(values: &ComplexField, curve: &OperatingCurve) -> (ComplexField, Vec<u8>) {
    let indices: Vec<u8> = values
        .samples
        .iter()
        .map(|&v| curve.nearest_index(v) as u8)
        .collect();
    let encoded = ComplexField {
        height: values.height,
        width: values.width,
        samples: indices.iter().map(|&k| curve.levels[k as usize]).collect(),
    };
    (encoded, indices)
}

/// How an SLM renders a requested field.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SlmModel {
    /// Arbitrary complex values are reproduced exactly.
    #[default]
    Ideal,
    Curve(OperatingCurve),
}

impl SlmModel {
    pub fn curve(&self) -> Option<&OperatingCurve> {
        match self {
            SlmModel::Ideal => None,
            SlmModel::Curve(c) => Some(c),
        }
    }

    fn render(&self, field: &ComplexField) -> ComplexField {
        match self {
            SlmModel::Ideal => field.clone(),
            SlmModel::Curve(c) => encode_on_slm(field, c).0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatorConfig {
    pub height: usize,
    pub width: usize,
    pub input_slm: SlmModel,
    pub filter_slm: SlmModel,
    /// Camera bit depth; 0 reports the real-valued intensity unquantized.
    pub camera_bits: u32,
    /// Standard deviation of each quadrature of the complex Gaussian noise
    /// added to the output field.
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// Average the intensity over aligned 2x2 blocks before sampling.
    pub box_integration: bool,
}

impl CorrelatorConfig {
    pub fn ideal(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            input_slm: SlmModel::Ideal,
            filter_slm: SlmModel::Ideal,
            camera_bits: 0,
            noise_sigma: 0.0,
            rng_seed: 0,
            box_integration: false,
        }
    }

    pub fn with_resolution(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(invalid("correlator resolution must be positive"));
        }
        if ![0, 8, 12, 16].contains(&self.camera_bits) {
            return Err(invalid(format!(
                "camera_bits must be one of 0, 8, 12, 16, got {}",
                self.camera_bits
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    fn check_field(&self, f: &ComplexField, what: &str) -> Result<()> {
        if f.height != self.height || f.width != self.width {
            return Err(shape(format!(
                "{what} is {}x{}, correlator is {}x{}",
                f.height, f.width, self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CorrelatorOutput {
    /// Noise-free output amplitude.
    pub field: ComplexField,
    /// Camera reading, row-major.
    pub intensity: Vec<f64>,
}

impl CorrelatorOutput {
    pub fn intensity_at(&self, y: usize, x: usize) -> f64 {
        self.intensity[y * self.field.width + x]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.intensity.iter().enumerate() {
            if v > self.intensity[best] {
                best = i;
            }
        }
        (best / self.field.width, best % self.field.width)
    }
}

/// `c = lens_ift(lens_ft(a) * B)` followed by detection.
pub fn correlate_4f(a: &ComplexField, b: &ComplexField, cfg: &CorrelatorConfig) -> Result<CorrelatorOutput> {
    cfg.validate()?;
    cfg.check_field(a, "input")?;
    cfg.check_field(b, "filter")?;
    let a = cfg.input_slm.render(a);
    let b = cfg.filter_slm.render(b);

    let mut spectrum = lens_ft(&a);
    for (s, f) in spectrum.samples.iter_mut().zip(&b.samples) {
        *s *= f;
    }
    let field = lens_ift(&spectrum);

    let mut intensity: Vec<f64> = if cfg.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| invalid(e.to_string()))?;
        field
            .samples
            .iter()
            .map(|&c| {
                let n = Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                (c + n).norm_sqr()
            })
            .collect()
    } else {
        field.samples.iter().map(|c| c.norm_sqr()).collect()
    };

    if cfg.box_integration {
        intensity = box_integrate(&intensity, cfg.height, cfg.width);
    }
    if cfg.camera_bits > 0 {
        quantize_camera(&mut intensity, cfg.camera_bits);
    }
    Ok(CorrelatorOutput { field, intensity })
}

fn box_integrate(intensity: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (y0, x0) = (y - y % 2, x - x % 2);
            let mut sum = 0.0;
            let mut count = 0.0;
            for yy in y0..(y0 + 2).min(h) {
                for xx in x0..(x0 + 2).min(w) {
                    sum += intensity[yy * w + xx];
                    count += 1.0;
                }
            }
            out[y * w + x] = sum / count;
        }
    }
    out
}

/// Rounds each reading to one of `2^bits - 1` steps of the frame maximum.
pub fn quantize_camera(intensity: &mut [f64], bits: u32) {
    let peak = intensity.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return;
    }
    let steps = ((1u64 << bits) - 1) as f64;
    for v in intensity.iter_mut() {
        *v = (*v / peak * steps).round() / steps * peak;
    }
}

#[derive(Debug, Clone)]
pub struct FilterRealization {
    /// Matched filter `B`.
    pub ideal: ComplexField,
    /// What the filter SLM displays.
    pub realized: ComplexField,
    /// Chosen level per pixel; `None` for an ideal SLM.
    pub level_index: Option<Vec<u8>>,
    /// Rotation and scale applied to `B` before encoding.
    pub gamma: Complex64,
    pub fidelity: f64,
    /// Complex gain `<B, realized> / |B|^2` of the realized filter along `B`.
    pub gain: Complex64,
}

/// `|<a, b>|^2 / (|a|^2 |b|^2)`; zero when either side vanishes.
pub fn fidelity(a: &ComplexField, b: &ComplexField) -> f64 {
    let (na, nb) = (a.norm_sqr(), b.norm_sqr());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.inner(b).norm_sqr() / (na * nb)
}

pub const GAMMA_ANGLES: usize = 32;
pub const GAMMA_SCALES: usize = 16;
pub const FIDELITY_WARNING: f64 = 0.5;

/// Candidate rotations and scales: `gamma = 1` first, then the angle-scale
/// grid with scales log-spaced over `[0.1, 10]` relative to `1 / max|B|`.
pub fn gamma_candidates(max_abs: f64) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(1 + GAMMA_ANGLES * GAMMA_SCALES);
    out.push(Complex64::new(1.0, 0.0));
    for a in 0..GAMMA_ANGLES {
        let angle = 2.0 * PI * a as f64 / GAMMA_ANGLES as f64;
        for s in 0..GAMMA_SCALES {
            let scale = 10f64.powf(-1.0 + 2.0 * s as f64 / (GAMMA_SCALES - 1) as f64);
            out.push(Complex64::from_polar(scale / max_abs, angle));
        }
    }
    out
}

/// Matched filter for `target`, which must already be at the correlator
/// resolution: `B = conj(lens_ft(sqrt(N) target))`, so that the output at the
/// correlation origin is `sum a conj(target)`.
pub fn matched_filter(target: &ComplexField) -> Result<ComplexField> {
    if target.samples.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::DegenerateFilter("target is identically zero".into()));
    }
    let root_n = (target.len() as f64).sqrt();
    Ok(lens_ft(target).map(|z| z.conj() * root_n))
}

pub fn make_filter(target: &ComplexField, slm: &SlmModel) -> Result<FilterRealization> {
    let ideal = matched_filter(target)?;
    let one = Complex64::new(1.0, 0.0);
    let curve = match slm {
        SlmModel::Ideal => {
            return Ok(FilterRealization {
                realized: ideal.clone(),
                ideal,
                level_index: None,
                gamma: one,
                fidelity: 1.0,
                gain: one,
            })
        }
        SlmModel::Curve(c) => c,
    };

    let candidates = gamma_candidates(ideal.max_abs());
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|&g| fidelity(&ideal, &encode_on_slm(&ideal.scaled(g), curve).0))
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let gamma = candidates[best];
    let (realized, indices) = encode_on_slm(&ideal.scaled(gamma), curve);
    let fid = fidelity(&ideal, &realized);
    if fid < FIDELITY_WARNING {
        log::warn!("filter fidelity {fid:.3} is below {FIDELITY_WARNING}; the realized filter is close to blank");
    }
    let gain = ideal.inner(&realized) / ideal.norm_sqr();
    Ok(FilterRealization {
        ideal,
        realized,
        level_index: Some(indices),
        gamma,
        fidelity: fid,
        gain,
    })
}

/// Conjugate-free basis template `(w_j/2) Pbar_n^m(mu_j) e^{i m lambda_k} / nlon`
/// on the `nlat x nlon` grid; its Hermitian dot product with a grid field is
/// the quadrature coefficient.
pub fn basis_template(
    m: usize,
    n: usize,
    grid: &SphericalGrid,
    table: &LegendreTable,
) -> Result<ComplexField> {
    let trunc = table.trunc();
    if !trunc.contains(m, n) {
        return Err(invalid(format!(
            "(m, n) = ({m}, {n}) lies outside truncation M = {}",
            trunc.m_max()
        )));
    }
    if table.nlat() != grid.nlat {
        return Err(shape(format!(
            "Legendre table has nlat = {}, grid has {}",
            table.nlat(),
            grid.nlat
        )));
    }
    let nlon = grid.nlon;
    let p = table.column(m, n);
    ComplexField::from_fn(grid.nlat, nlon, |j, k| {
        let phase = 2.0 * PI * ((m * k) % nlon) as f64 / nlon as f64;
        Complex64::from_polar(0.5 * grid.weights[j] * p[j] / nlon as f64, phase)
    })
}

/// A coefficient filter ready for repeated measurements.
#[derive(Debug, Clone)]
pub struct CoefficientProbe {
    pub m: usize,
    pub n: usize,
    /// Basis template embedded at the correlator resolution.
    pub template: ComplexField,
    pub filter: FilterRealization,
}

impl CoefficientProbe {
    pub fn new(
        m: usize,
        n: usize,
        grid: &SphericalGrid,
        table: &LegendreTable,
        cfg: &CorrelatorConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let template = basis_template(m, n, grid, table)?.embed_centered(cfg.height, cfg.width)?;
        let filter = make_filter(&template, &cfg.filter_slm)?;
        Ok(Self {
            m,
            n,
            template,
            filter,
        })
    }

    /// Correlates `input` (already at correlator resolution) and reads the
    /// origin, divided by the filter gain.
    pub fn measure(&self, input: &ComplexField, cfg: &CorrelatorConfig) -> Result<Extraction> {
        let out = correlate_4f(input, &self.filter.realized, cfg)?;
        let (cy, cx) = out.field.center();
        Ok(self.reading(&out, cy, cx))
    }

    fn reading(&self, out: &CorrelatorOutput, y: usize, x: usize) -> Extraction {
        let g = self.filter.gain;
        Extraction {
            value: out.field.get(y, x) / g,
            intensity: out.intensity_at(y, x) / g.norm_sqr(),
        }
    }

    /// Complex coefficient by perturbing the input along the template.
    pub fn retrieve(&self, input: &ComplexField, cfg: &CorrelatorConfig, t: f64) -> Result<Complex64> {
        let unit = self.template.scaled(Complex64::new(1.0 / self.template.norm_sqr(), 0.0));
        retrieve_complex(
            |p| {
                let mut perturbed = input.clone();
                for (s, u) in perturbed.samples.iter_mut().zip(&unit.samples) {
                    *s += p * u;
                }
                Ok(self.measure(&perturbed, cfg)?.intensity)
            },
            t,
        )
    }
}

/// Origin reading of one coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extraction {
    /// Noise-free output amplitude over the filter gain.
    pub value: Complex64,
    /// Camera intensity over `|gain|^2`.
    pub intensity: f64,
}

/// Embeds an `nlat x nlon` slice of grid data into the correlator frame.
pub fn embed_grid_data(data: &ComplexField, grid: &SphericalGrid, cfg: &CorrelatorConfig) -> Result<ComplexField> {
    if data.height != grid.nlat || data.width != grid.nlon {
        return Err(shape(format!(
            "data is {}x{}, grid is {}x{}",
            data.height, data.width, grid.nlat, grid.nlon
        )));
    }
    data.embed_centered(cfg.height, cfg.width)
}

/// Intensity at the correlation origin for the `(m, n)` matched filter.
pub fn extract_coefficient(
    data: &ComplexField,
    m: usize,
    n: usize,
    grid: &SphericalGrid,
    table: &LegendreTable,
    cfg: &CorrelatorConfig,
) -> Result<f64> {
    let probe = CoefficientProbe::new(m, n, grid, table, cfg)?;
    let input = embed_grid_data(data, grid, cfg)?;
    Ok(probe.measure(&input, cfg)?.intensity)
}

/// Recovers a complex output amplitude from three intensity readings:
/// unperturbed, shifted by `t`, and shifted by `i t`.
pub fn retrieve_complex<F>(mut measure: F, t: f64) -> Result<Complex64>
where
    F: FnMut(Complex64) -> Result<f64>,
{
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("reference strength must be positive, got {t}")));
    }
    let i0 = measure(Complex64::new(0.0, 0.0))?;
    let i1 = measure(Complex64::new(t, 0.0))?;
    let i2 = measure(Complex64::new(0.0, t))?;
    Ok(Complex64::new(
        (i1 - i0 - t * t) / (2.0 * t),
        (i2 - i0 - t * t) / (2.0 * t),
    ))
}

/// Complex `(m, n)` coefficient of `data` read through the correlator.
pub fn retrieve_coefficient(
    data: &ComplexField,
    m: usize,
    n: usize,
    grid: &SphericalGrid,
    table: &LegendreTable,
    cfg: &CorrelatorConfig,
    t: f64,
) -> Result<Complex64> {
    let probe = CoefficientProbe::new(m, n, grid, table, cfg)?;
    let input = embed_grid_data(data, grid, cfg)?;
    probe.retrieve(&input, cfg, t)
}

#[derive(Debug, Clone)]
pub struct TiledInput {
    pub composite: ComplexField,
    /// Output pixel holding tile `i`'s correlation origin.
    pub sample_points: Vec<(usize, usize)>,
}

/// Places equally sized tiles on a `rows x cols` raster of `2h x 2w` cells,
/// each tile centered in its cell, so neighbours are separated by a zero
/// guard band one tile wide.
pub fn tile_inputs(tiles: &[ComplexField], rows: usize, cols: usize) -> Result<TiledInput> {
    let first = tiles.first().ok_or_else(|| invalid("no tiles to place"))?;
    if rows == 0 || cols == 0 || rows * cols < tiles.len() {
        return Err(invalid(format!(
            "a {rows}x{cols} layout cannot hold {} tiles",
            tiles.len()
        )));
    }
    let (h, w) = (first.height, first.width);
    if let Some(t) = tiles.iter().find(|t| !t.same_shape(first)) {
        return Err(shape(format!("tile is {}x{}, expected {h}x{w}", t.height, t.width)));
    }
    let mut composite = ComplexField::zeros(2 * rows * h, 2 * cols * w)?;
    let mut sample_points = Vec::with_capacity(tiles.len());
    for (i, tile) in tiles.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let top = 2 * r * h + h - h / 2;
        let left = 2 * c * w + w - w / 2;
        composite.paste(tile, top, left);
        sample_points.push((top + h / 2, left + w / 2));
    }
    Ok(TiledInput {
        composite,
        sample_points,
    })
}

/// Extracts the `(m, n)` coefficient of every tile in one correlator pass.
/// The correlator resolution is taken from the composite.
pub fn extract_tiled(
    tiles: &[ComplexField],
    rows: usize,
    cols: usize,
    m: usize,
    n: usize,
    grid: &SphericalGrid,
    table: &LegendreTable,
    cfg: &CorrelatorConfig,
) -> Result<Vec<Extraction>> {
    let tiled = tile_inputs(tiles, rows, cols)?;
    let cfg = cfg.with_resolution(tiled.composite.height, tiled.composite.width);
    let probe = CoefficientProbe::new(m, n, grid, table, &cfg)?;
    let out = correlate_4f(&tiled.composite, &probe.filter.realized, &cfg)?;
    Ok(tiled
        .sample_points
        .iter()
        .map(|&(y, x)| probe.reading(&out, y, x))
        .collect())
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("Pearson correlation needs two samples of equal length >= 2"));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Domain("Pearson correlation of a constant sample".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}
