//! In-situ calibration of a correlator whose filter plane carries an unknown
//! phase error. Binary phase-only filters are designed with two Zernike
//! expanded corrections (a phase offset and a threshold) and the twelve
//! coefficients are tuned by simulated annealing on the correlation peak height.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::optics::{correlate_4f, lens_ft, lens_ift, ComplexField, CorrelatorConfig};

pub const ZERNIKE_TERMS: usize = 6;
pub const COEFF_BOUND: f64 = 2.0 * PI;

/// Zernike polynomial `Z_index` in OSA/ANSI order.
pub fn zernike_eval(index: usize, rho: f64, theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid(format!("rho must lie in [0, 1], got {rho}")));
    }
    let r2 = rho * rho;
    Ok(match index {
        0 => 1.0,
        1 => 2.0 * rho * theta.sin(),
        2 => 2.0 * rho * theta.cos(),
        3 => 6f64.sqrt() * r2 * (2.0 * theta).sin(),
        4 => 3f64.sqrt() * (2.0 * r2 - 1.0),
        5 => 6f64.sqrt() * r2 * (2.0 * theta).cos(),
        _ => return Err(invalid(format!("Zernike index {index} is outside 0..{ZERNIKE_TERMS}"))),
    })
}

/// `Z_0..Z_5` sampled at pixel centers on the disk inscribed in a
/// `height x width` aperture; zero outside the disk.
#[derive(Debug, Clone)]
pub struct ZernikeBasis {
    height: usize,
    width: usize,
    inside: Vec<bool>,
    modes: Vec<Vec<f64>>,
}

impl ZernikeBasis {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(invalid("Zernike sampling needs at least 2x2 pixels"));
        }
        let radius = height.min(width) as f64 / 2.0;
        let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
        let mut inside = vec![false; height * width];
        let mut modes = vec![vec![0.0; height * width]; ZERNIKE_TERMS];
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let rho = dy.hypot(dx) / radius;
                if rho > 1.0 {
                    continue;
                }
                let theta = dy.atan2(dx);
                let p = y * width + x;
                inside[p] = true;
                for (i, mode) in modes.iter_mut().enumerate() {
                    mode[p] = zernike_eval(i, rho, theta)?;
                }
            }
        }
        Ok(Self {
            height,
            width,
            inside,
            modes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mode(&self, index: usize) -> &[f64] {
        &self.modes[index]
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    /// `sum_i coeffs[i] Z_i`.
    pub fn phase(&self, coeffs: &[f64; ZERNIKE_TERMS]) -> Vec<f64> {
        let mut out = vec![0.0; self.height * self.width];
        for (c, mode) in coeffs.iter().zip(&self.modes) {
            if *c != 0.0 {
                for (o, z) in out.iter_mut().zip(mode) {
                    *o += c * z;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrectionParams {
    /// Coefficients of the phase correction `Phi_P`, radians.
    pub phase_coeffs: [f64; ZERNIKE_TERMS],
    /// Coefficients of the threshold correction `Phi_T`, radians.
    pub threshold_coeffs: [f64; ZERNIKE_TERMS],
}

impl CorrectionParams {
    pub fn validate(&self) -> Result<()> {
        for &c in self.phase_coeffs.iter().chain(&self.threshold_coeffs) {
            if !c.is_finite() || c.abs() > COEFF_BOUND {
                return Err(invalid(format!("correction coefficient {c} outside [-2pi, 2pi]")));
            }
        }
        Ok(())
    }

    fn to_vec(self) -> [f64; 2 * ZERNIKE_TERMS] {
        let mut v = [0.0; 2 * ZERNIKE_TERMS];
        v[..ZERNIKE_TERMS].copy_from_slice(&self.phase_coeffs);
        v[ZERNIKE_TERMS..].copy_from_slice(&self.threshold_coeffs);
        v
    }

    fn from_vec(v: &[f64; 2 * ZERNIKE_TERMS]) -> Self {
        let mut p = Self::default();
        p.phase_coeffs.copy_from_slice(&v[..ZERNIKE_TERMS]);
        p.threshold_coeffs.copy_from_slice(&v[ZERNIKE_TERMS..]);
        p
    }

    /// `Phi_P - Phi_T`, the only combination a binary filter responds to.
    pub fn net_phase(&self, basis: &ZernikeBasis) -> Vec<f64> {
        let p = basis.phase(&self.phase_coeffs);
        let t = basis.phase(&self.threshold_coeffs);
        p.iter().zip(&t).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    /// Fitness evaluations, counting the starting point.
    pub iterations: usize,
    /// `None` selects a tenth of the starting fitness.
    pub initial_temperature: Option<f64>,
    pub cooling_factor: f64,
    pub proposal_sigma: f64,
    pub rng_seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            iterations: 500,
            initial_temperature: None,
            cooling_factor: 0.99,
            proposal_sigma: 0.1,
            rng_seed: 0,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("annealing needs at least one iteration"));
        }
        if !(self.cooling_factor > 0.0 && self.cooling_factor < 1.0) {
            return Err(invalid(format!(
                "cooling_factor must lie in (0, 1), got {}",
                self.cooling_factor
            )));
        }
        if !(self.proposal_sigma > 0.0 && self.proposal_sigma.is_finite()) {
            return Err(invalid("proposal_sigma must be positive"));
        }
        if let Some(t) = self.initial_temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("initial_temperature must be positive"));
            }
        }
        Ok(())
    }
}

/// Ideal correlator whose filter plane multiplies the light by `e^{i Phi*}`.
#[derive(Debug, Clone)]
pub struct AberratedSystem {
    pub config: CorrelatorConfig,
    pub basis: ZernikeBasis,
    pub aberration_coeffs: [f64; ZERNIKE_TERMS],
    aberration: Vec<Complex64>,
}

impl AberratedSystem {
    pub fn new(height: usize, width: usize, aberration_coeffs: [f64; ZERNIKE_TERMS]) -> Result<Self> {
        let basis = ZernikeBasis::new(height, width)?;
        let aberration = basis
            .phase(&aberration_coeffs)
            .iter()
            .map(|&p| Complex64::from_polar(1.0, p))
            .collect();
        Ok(Self {
            config: CorrelatorConfig::ideal(height, width),
            basis,
            aberration_coeffs,
            aberration,
        })
    }

    pub fn unaberrated(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, [0.0; ZERNIKE_TERMS])
    }

    /// Runs `input` against a designed filter through the aberrated filter plane.
    pub fn correlate(&self, input: &ComplexField, filter: &ComplexField) -> Result<Vec<f64>> {
        let mut displayed = filter.clone();
        for (f, a) in displayed.samples_mut().iter_mut().zip(&self.aberration) {
            *f *= a;
        }
        Ok(correlate_4f(input, &displayed, &self.config)?.intensity)
    }

    fn check(&self, f: &ComplexField) -> Result<()> {
        if f.height() != self.basis.height() || f.width() != self.basis.width() {
            return Err(shape(format!(
                "field is {}x{}, system is {}x{}",
                f.height(),
                f.width(),
                self.basis.height(),
                self.basis.width()
            )));
        }
        Ok(())
    }
}

/// Wraps an angle into `[-pi, pi)`.
fn wrap(p: f64) -> f64 {
    (p + PI).rem_euclid(2.0 * PI) - PI
}

fn binarize(spectrum_phase: &[f64], net: &[f64]) -> Vec<Complex64> {
    spectrum_phase
        .iter()
        .zip(net)
        .map(|(&phi, &d)| {
            let v = wrap(phi + d);
            Complex64::new(if (-PI / 2.0..PI / 2.0).contains(&v) { 1.0 } else { -1.0 }, 0.0)
        })
        .collect()
}

fn matched_phase(target: &ComplexField) -> Vec<f64> {
    lens_ft(target).samples().iter().map(|z| z.conj().arg()).collect()
}

/// Binary phase-only matched filter: `+1` where the corrected phase of
/// `conj(lens_ft(target))` falls in `[-pi/2, pi/2)`, `-1` elsewhere.
pub fn design_binary_filter(
    target: &ComplexField,
    params: &CorrectionParams,
    basis: &ZernikeBasis,
) -> Result<ComplexField> {
    if target.height() != basis.height() || target.width() != basis.width() {
        return Err(shape("target and Zernike basis differ in size"));
    }
    let net = params.net_phase(basis);
    ComplexField::from_samples(target.height(), target.width(), binarize(&matched_phase(target), &net))
}

#[derive(Debug, Clone)]
pub struct TargetPair {
    pub input: ComplexField,
    pub target: ComplexField,
}

/// Zero-mean uniform `[-1, 1]` patches of size `patch x patch`, centered in
/// a `height x width` frame; the input shows the target unshifted.
pub fn random_target_pairs(
    count: usize,
    height: usize,
    width: usize,
    patch: usize,
    seed: u64,
) -> Result<Vec<TargetPair>> {
    if patch == 0 || patch > height || patch > width {
        return Err(invalid(format!("patch {patch} does not fit a {height}x{width} frame")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut values: Vec<f64> = (0..patch * patch).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            values.iter_mut().for_each(|v| *v -= mean);
            let target = ComplexField::from_real(patch, patch, &values)?.embed_centered(height, width)?;
            Ok(TargetPair {
                input: target.clone(),
                target,
            })
        })
        .collect()
}

/// Pairs with their spectra precomputed for repeated fitness evaluation.
struct PreparedPairs {
    inputs: Vec<ComplexField>,
    phases: Vec<Vec<f64>>,
}

impl PreparedPairs {
    fn new(system: &AberratedSystem, pairs: &[TargetPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(invalid("calibration needs at least one target pair"));
        }
        for p in pairs {
            system.check(&p.input)?;
            system.check(&p.target)?;
        }
        Ok(Self {
            inputs: pairs.iter().map(|p| lens_ft(&p.input)).collect(),
            phases: pairs.iter().map(|p| matched_phase(&p.target)).collect(),
        })
    }

    fn fitness(&self, system: &AberratedSystem, params: &CorrectionParams) -> f64 {
        let net = params.net_phase(&system.basis);
        let peaks: Vec<f64> = self
            .inputs
            .par_iter()
            .zip(&self.phases)
            .map(|(spectrum, phase)| {
                let filter = binarize(phase, &net);
                let product = spectrum.samples().iter().zip(&filter).zip(&system.aberration);
                let field = ComplexField::from_samples(
                    spectrum.height(),
                    spectrum.width(),
                    product.map(|((s, f), a)| s * f * a).collect(),
                )
                .expect("product of valid fields");
                lens_ift(&field)
                    .samples()
                    .iter()
                    .map(|c| c.norm_sqr())
                    .fold(0.0, f64::max)
            })
            .collect();
        peaks.iter().sum::<f64>() / peaks.len() as f64
    }
}

/// Mean over pairs of the peak output intensity.
pub fn calibration_fitness(
    params: &CorrectionParams,
    system: &AberratedSystem,
    pairs: &[TargetPair],
) -> Result<f64> {
    params.validate()?;
    Ok(PreparedPairs::new(system, pairs)?.fitness(system, params))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnealOutcome {
    pub best_params: CorrectionParams,
    pub best_fitness: f64,
    pub initial_fitness: f64,
    /// Best fitness seen after each evaluation; `trace.len() == iterations`.
    pub trace: Vec<f64>,
    pub accepted: usize,
}

/// Metropolis annealing over the twelve coefficients from zero corrections.
pub fn anneal_calibration(
    system: &AberratedSystem,
    schedule: &AnnealSchedule,
    pairs: &[TargetPair],
) -> Result<AnnealOutcome> {
    schedule.validate()?;
    let prepared = PreparedPairs::new(system, pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.rng_seed);
    let normal = Normal::new(0.0, schedule.proposal_sigma).map_err(|e| invalid(e.to_string()))?;

    let mut current = CorrectionParams::default().to_vec();
    let f0 = prepared.fitness(system, &CorrectionParams::default());
    let mut f_current = f0;
    let mut best = current;
    let mut f_best = f0;
    let mut temperature = schedule.initial_temperature.unwrap_or(0.1 * f0);
    let mut trace = Vec::with_capacity(schedule.iterations);
    trace.push(f0);
    let mut accepted = 0;

    for _ in 1..schedule.iterations {
        let mut proposal = current;
        for c in proposal.iter_mut() {
            *c = (*c + normal.sample(&mut rng)).clamp(-COEFF_BOUND, COEFF_BOUND);
        }
        let f = prepared.fitness(system, &CorrectionParams::from_vec(&proposal));
        let u: f64 = rng.random();
        let accept = f >= f_current || (temperature > 0.0 && u < ((f - f_current) / temperature).exp());
        if accept {
            current = proposal;
            f_current = f;
            accepted += 1;
            if f > f_best {
                best = proposal;
                f_best = f;
            }
        }
        trace.push(f_best);
        temperature *= schedule.cooling_factor;
    }
    log::debug!("annealing accepted {accepted} of {} proposals", schedule.iterations - 1);

    Ok(AnnealOutcome {
        best_params: CorrectionParams::from_vec(&best),
        best_fitness: f_best,
        initial_fitness: f0,
        trace,
        accepted,
    })
}

/// RMS over the disk of the phase error left after correction,
/// `Phi* + Phi_P - Phi_T`, with its mean removed.
pub fn residual_rms_phase(params: &CorrectionParams, system: &AberratedSystem) -> f64 {
    let net = params.net_phase(&system.basis);
    let star = system.basis.phase(&system.aberration_coeffs);
    let residual: Vec<f64> = system
        .basis
        .inside()
        .iter()
        .enumerate()
        .filter(|(_, &inside)| inside)
        .map(|(p, _)| star[p] + net[p])
        .collect();
    let n = residual.len() as f64;
    let mean = residual.iter().sum::<f64>() / n;
    (residual.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Persisted result of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub phase_coeffs: [f64; ZERNIKE_TERMS],
    pub threshold_coeffs: [f64; ZERNIKE_TERMS],
    pub fitness: f64,
    pub schedule: AnnealSchedule,
    pub seed: u64,
}

impl CalibrationRecord {
    pub fn new(outcome: &AnnealOutcome, schedule: &AnnealSchedule) -> Self {
        Self {
            phase_coeffs: outcome.best_params.phase_coeffs,
            threshold_coeffs: outcome.best_params.threshold_coeffs,
            fitness: outcome.best_fitness,
            schedule: schedule.clone(),
            seed: schedule.rng_seed,
        }
    }

    pub fn params(&self) -> CorrectionParams {
        CorrectionParams {
            phase_coeffs: self.phase_coeffs,
            threshold_coeffs: self.threshold_coeffs,
        }
    }
}
