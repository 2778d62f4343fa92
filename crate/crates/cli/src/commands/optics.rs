use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use serde::Deserialize;
use serde_json::json;
use workbench_core::format;
use workbench_core::optics::{
    embed_grid_data, extract_tiled, pearson, tile_inputs, CoefficientProbe, ComplexField,
    CorrelatorConfig, OperatingCurve, SlmModel,
};
use workbench_core::optics_calib::{
    anneal_calibration, calibration_fitness, random_target_pairs, residual_rms_phase,
    AberratedSystem, AnnealSchedule, CalibrationRecord, CorrectionParams, ZERNIKE_TERMS,
};
use workbench_core::spectral::forward_transform;
use workbench_core::sphere_grid::SpectralField;

use super::SpectralSetup;
use crate::args::{CalibrateArgs, OpticsArgs};
use crate::settings::{CliResult, Context};

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

fn parse_curve(ctx: &Context, spec: &str) -> CliResult<OperatingCurve> {
    if let Some(curve) = OperatingCurve::preset(spec) {
        return Ok(curve);
    }
    let path = Path::new(spec);
    if path.exists() {
        return Ok(OperatingCurve::from_json_file(path)?);
    }
    Err(ctx.usage_error(format!(
        "--curve must be coupled, unit-circle, binary, half-circle or an existing file, got '{spec}'"
    )))
}

/// Grid, correlator and level-0 data shared by the extraction commands.
struct Bench {
    setup: SpectralSetup,
    cfg: CorrelatorConfig,
    reference: f64,
}

impl Bench {
    fn new(ctx: &Context, a: &OpticsArgs) -> CliResult<Self> {
        let m_max = ctx.or("M", a.spectral.m_max, 10)?;
        let nlat = ctx.or("nlat", a.spectral.nlat, 16)?;
        let nlon = ctx.or("nlon", a.spectral.nlon, 2 * nlat)?;
        let setup = SpectralSetup::build(m_max, nlat, nlon, 1)?;

        let resolution = ctx.or("resolution", a.resolution, 64)?;
        let mut cfg = CorrelatorConfig::ideal(resolution, resolution);
        cfg.camera_bits = ctx.or("camera_bits", a.camera_bits, 0)?;
        cfg.noise_sigma = ctx.or("noise_sigma", a.noise_sigma, 0.0)?;
        cfg.rng_seed = ctx.seed()?;
        match ctx.or("mode", a.mode.clone(), "ideal".to_string())?.as_str() {
            "ideal" => {}
            "curve" => {
                let name = ctx.or("curve", a.curve.clone(), "coupled".to_string())?;
                cfg.filter_slm = SlmModel::Curve(parse_curve(ctx, &name)?);
            }
            other => return Err(ctx.usage_error(format!("--mode must be ideal or curve, got '{other}'"))),
        }
        cfg.validate()?;
        let reference = ctx.or("reference", a.reference, 1.0)?;
        Ok(Self {
            setup,
            cfg,
            reference,
        })
    }

    /// Level-0 slice of a random band-limited field and its coefficients.
    fn data(&self, seed: u64) -> CliResult<(ComplexField, SpectralField)> {
        let (_, field) = self.setup.random_field(seed)?;
        let truth = forward_transform(&field, &self.setup.grid, &self.setup.table)?;
        let data = ComplexField::from_real(self.setup.grid.nlat, self.setup.grid.nlon, field.level(0))?;
        Ok((data, truth))
    }
}

pub fn extract(ctx: &Context, a: &OpticsArgs) -> CliResult<()> {
    let m = ctx.require("m", a.m)?;
    let n = ctx.require("n", a.n)?;
    let bench = Bench::new(ctx, a)?;
    let (data, truth) = bench.data(ctx.seed()?)?;
    let s = &bench.setup;

    let probe = CoefficientProbe::new(m, n, &s.grid, &s.table, &bench.cfg)?;
    let input = embed_grid_data(&data, &s.grid, &bench.cfg)?;
    let reading = probe.measure(&input, &bench.cfg)?;
    let retrieved = probe.retrieve(&input, &bench.cfg, bench.reference)?;
    let expected = truth.get(0, m, n);

    ctx.write_json(
        "extract.json",
        &json!({
            "m": m,
            "n": n,
            "true": pair(expected),
            "value": pair(reading.value),
            "intensity": reading.intensity,
            "retrieved": pair(retrieved),
            "fidelity": probe.filter.fidelity,
            "gain": pair(probe.filter.gain),
        }),
    )?;
    println!("coefficient ({m}, {n}): true {expected:.6e}");
    println!("  intensity {:.6e}  sqrt {:.6e}", reading.intensity, reading.intensity.sqrt());
    println!("  retrieved {retrieved:.6e}  error {:.3e}", (retrieved - expected).norm());
    println!("  filter fidelity {:.4}", probe.filter.fidelity);
    Ok(())
}

pub fn experiment(ctx: &Context, a: &OpticsArgs) -> CliResult<()> {
    let bench = Bench::new(ctx, a)?;
    let (data, truth) = bench.data(ctx.seed()?)?;
    let s = &bench.setup;
    let input = embed_grid_data(&data, &s.grid, &bench.cfg)?;

    let mut csv = String::from("m,n,true_abs,sqrt_intensity,true_re,true_im,retrieved_re,retrieved_im\n");
    let (mut magnitudes, mut readings) = (Vec::new(), Vec::new());
    let (mut max_err, mut max_true) = (0.0_f64, 0.0_f64);
    let mut min_fidelity = f64::INFINITY;
    for (m, n) in s.trunc.pairs() {
        let probe = CoefficientProbe::new(m, n, &s.grid, &s.table, &bench.cfg)?;
        let reading = probe.measure(&input, &bench.cfg)?;
        let retrieved = probe.retrieve(&input, &bench.cfg, bench.reference)?;
        let expected = truth.get(0, m, n);
        let root = reading.intensity.max(0.0).sqrt();
        let _ = writeln!(
            csv,
            "{m},{n},{},{root},{},{},{},{}",
            expected.norm(),
            expected.re,
            expected.im,
            retrieved.re,
            retrieved.im
        );
        magnitudes.push(expected.norm());
        readings.push(root);
        max_err = max_err.max((retrieved - expected).norm());
        max_true = max_true.max(expected.norm());
        min_fidelity = min_fidelity.min(probe.filter.fidelity);
    }
    let r = pearson(&readings, &magnitudes)?;
    let rel = if max_true > 0.0 { max_err / max_true } else { max_err };

    ctx.write_text("experiment.csv", &csv)?;
    ctx.write_json(
        "summary.json",
        &json!({
            "M": s.trunc.m_max(),
            "nlat": s.grid.nlat,
            "nlon": s.grid.nlon,
            "resolution": bench.cfg.height,
            "pairs": magnitudes.len(),
            "pearson": r,
            "max_rel_retrieval_error": rel,
            "min_filter_fidelity": min_fidelity,
        }),
    )?;
    println!("{} coefficients: pearson(sqrt I, |true|) = {r:.6}", magnitudes.len());
    println!("max relative retrieval error {rel:.3e}, min filter fidelity {min_fidelity:.4}");
    Ok(())
}

pub fn tile(ctx: &Context, a: &OpticsArgs) -> CliResult<()> {
    let m = ctx.require("m", a.m)?;
    let n = ctx.require("n", a.n)?;
    let rows = ctx.or("rows", a.rows, 2)?;
    let cols = ctx.or("cols", a.cols, 2)?;
    let bench = Bench::new(ctx, a)?;
    let s = &bench.setup;
    let seed = ctx.seed()?;

    let tiles = (0..(rows * cols) as u64)
        .map(|i| Ok(bench.data(seed.wrapping_add(i))?.0))
        .collect::<CliResult<Vec<_>>>()?;
    let tiled = tile_inputs(&tiles, rows, cols)?;
    let readings = extract_tiled(&tiles, rows, cols, m, n, &s.grid, &s.table, &bench.cfg)?;
    let probe = CoefficientProbe::new(m, n, &s.grid, &s.table, &bench.cfg)?;

    let mut csv = String::from("tile,row,col,sample_y,sample_x,tiled_re,tiled_im,single_re,single_im,deviation\n");
    let mut worst = 0.0_f64;
    for (i, (tile, got)) in tiles.iter().zip(&readings).enumerate() {
        let single = probe.measure(&embed_grid_data(tile, &s.grid, &bench.cfg)?, &bench.cfg)?;
        let d = (single.value - got.value).norm();
        worst = worst.max(d);
        let (y, x) = tiled.sample_points[i];
        let _ = writeln!(
            csv,
            "{i},{},{},{y},{x},{},{},{},{},{d}",
            i / cols,
            i % cols,
            got.value.re,
            got.value.im,
            single.value.re,
            single.value.im
        );
    }
    ctx.write_text("tile.csv", &csv)?;
    format::write_complex_field(&ctx.output("tiled_input")?, &tiled.composite)?;
    println!(
        "{rows}x{cols} tiles on a {}x{} composite: max deviation from single extraction {worst:.3e}",
        tiled.composite.height(),
        tiled.composite.width()
    );
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleOverrides {
    iterations: Option<usize>,
    initial_temperature: Option<f64>,
    cooling_factor: Option<f64>,
    proposal_sigma: Option<f64>,
}

pub fn calibrate(ctx: &Context, a: &CalibrateArgs) -> CliResult<()> {
    let resolution = ctx.or("resolution", a.resolution, 64)?;
    let patch = ctx.or("patch", a.patch, resolution / 2)?;
    let count = ctx.or("pairs", a.pairs, 10)?;
    let heldout_count = ctx.or("heldout", a.heldout, 10)?;
    let term = ctx.or("aberration_term", a.aberration_term, 4)?;
    let strength = ctx.or("aberration", a.aberration, 0.8)?;
    let seed = ctx.seed()?;
    if term >= ZERNIKE_TERMS {
        return Err(ctx.usage_error(format!(
            "--aberration-term must lie in 0..{ZERNIKE_TERMS}, got {term}"
        )));
    }

    let overrides: ScheduleOverrides = ctx.or("schedule", None, ScheduleOverrides::default())?;
    let defaults = AnnealSchedule::default();
    let schedule = AnnealSchedule {
        iterations: ctx.or("iterations", a.iterations, overrides.iterations.unwrap_or(defaults.iterations))?,
        initial_temperature: overrides.initial_temperature,
        cooling_factor: overrides.cooling_factor.unwrap_or(defaults.cooling_factor),
        proposal_sigma: overrides.proposal_sigma.unwrap_or(defaults.proposal_sigma),
        rng_seed: seed.wrapping_add(2),
    };

    let mut coeffs = [0.0; ZERNIKE_TERMS];
    coeffs[term] = strength;
    let system = AberratedSystem::new(resolution, resolution, coeffs)?;
    let train = random_target_pairs(count, resolution, resolution, patch, seed)?;
    let heldout = random_target_pairs(heldout_count, resolution, resolution, patch, seed.wrapping_add(1))?;

    let start = Instant::now();
    let outcome = anneal_calibration(&system, &schedule, &train)?;
    let elapsed = start.elapsed().as_secs_f64();

    let zero = CorrectionParams::default();
    let held_before = calibration_fitness(&zero, &system, &heldout)?;
    let held_after = calibration_fitness(&outcome.best_params, &system, &heldout)?;
    let rms_before = residual_rms_phase(&zero, &system);
    let rms_after = residual_rms_phase(&outcome.best_params, &system);

    let mut trace = String::from("iteration,best_fitness\n");
    for (i, f) in outcome.trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{f}");
    }
    ctx.write_json("calibration.json", &CalibrationRecord::new(&outcome, &schedule))?;
    ctx.write_text("trace.csv", &trace)?;
    ctx.write_json(
        "summary.json",
        &json!({
            "resolution": resolution,
            "patch": patch,
            "aberration": {"term": term, "coefficient": strength},
            "iterations": schedule.iterations,
            "accepted": outcome.accepted,
            "training_fitness_initial": outcome.initial_fitness,
            "training_fitness_best": outcome.best_fitness,
            "improvement": outcome.best_fitness / outcome.initial_fitness,
            "heldout_fitness_initial": held_before,
            "heldout_fitness_best": held_after,
            "heldout_over_training": held_after / outcome.best_fitness,
            "residual_rms_phase_initial": rms_before,
            "residual_rms_phase_best": rms_after,
        }),
    )?;

    println!(
        "training fitness {:.6e} -> {:.6e} ({:.3}x) in {} iterations, {:.2} s",
        outcome.initial_fitness,
        outcome.best_fitness,
        outcome.best_fitness / outcome.initial_fitness,
        schedule.iterations,
        elapsed
    );
    println!("held-out fitness {held_before:.6e} -> {held_after:.6e}");
    println!("residual RMS phase {rms_before:.4} -> {rms_after:.4} rad");
    Ok(())
}
