use std::time::Instant;

use serde_json::json;
use workbench_core::batch_gemm::Layout;
use workbench_core::format;
use workbench_core::spectral::{
    forward_transform, forward_transform_gemm, grid_mean_square, inverse_transform, spectral_energy,
};

use super::{spectrum_csv, SpectralSetup};
use crate::args::TransformArgs;
use crate::settings::{CliResult, Context};

enum Stage {
    Direct,
    Gemm(Layout),
}

fn stage(ctx: &Context, mode: Option<String>) -> CliResult<Stage> {
    match ctx.or("mode", mode, "direct".to_string())?.as_str() {
        "direct" => Ok(Stage::Direct),
        "gemm" => Ok(Stage::Gemm(Layout::Direct)),
        "gemm-transposed" => Ok(Stage::Gemm(Layout::Transposed)),
        other => Err(ctx.usage_error(format!(
            "--mode must be direct, gemm or gemm-transposed, got '{other}'"
        ))),
    }
}

pub fn forward(ctx: &Context, a: &TransformArgs) -> CliResult<()> {
    let stage = stage(ctx, a.mode.clone())?;
    let input = ctx.lookup("input", a.input.clone())?;
    let (setup, field) = match input {
        Some(path) => {
            let field = format::read_grid_field(&path)?;
            let m_max = ctx.require("M", a.spectral.m_max)?;
            let setup = SpectralSetup::build(m_max, field.nlat, field.nlon, field.nlev)?;
            (setup, field)
        }
        None => {
            let setup = SpectralSetup::resolve(ctx, &a.spectral, None)?;
            let (_, field) = setup.random_field(ctx.seed()?)?;
            format::write_grid_field(&ctx.output("input_grid")?, &field)?;
            (setup, field)
        }
    };

    let start = Instant::now();
    let spec = match stage {
        Stage::Direct => forward_transform(&field, &setup.grid, &setup.table)?,
        Stage::Gemm(layout) => forward_transform_gemm(&field, &setup.grid, &setup.table, layout)?,
    };
    let elapsed = start.elapsed().as_secs_f64();

    format::write_spectral_field(&ctx.output("spectrum")?, &spec)?;
    ctx.write_text("spectrum.csv", &spectrum_csv(&spec))?;
    println!(
        "forward transform M={} nlat={} nlon={} nlev={}: {:.3} ms",
        setup.trunc.m_max(),
        setup.grid.nlat,
        setup.grid.nlon,
        field.nlev,
        elapsed * 1e3
    );
    Ok(())
}

pub fn inverse(ctx: &Context, a: &TransformArgs) -> CliResult<()> {
    let input = ctx.lookup("input", a.input.clone())?;
    let nlat = ctx.require("nlat", a.spectral.nlat)?;
    let nlon = ctx.or("nlon", a.spectral.nlon, 2 * nlat)?;
    let (setup, spec) = match input {
        Some(path) => {
            let spec = format::read_spectral_field(&path)?;
            let setup = SpectralSetup::build(spec.trunc.m_max(), nlat, nlon, spec.nlev)?;
            (setup, spec)
        }
        None => {
            let m_max = ctx.require("M", a.spectral.m_max)?;
            let nlev = ctx.or("nlev", a.spectral.nlev, 1)?;
            let setup = SpectralSetup::build(m_max, nlat, nlon, nlev)?;
            let (spec, _) = setup.random_field(ctx.seed()?)?;
            (setup, spec)
        }
    };

    let start = Instant::now();
    let field = inverse_transform(&spec, &setup.grid, &setup.table)?;
    let elapsed = start.elapsed().as_secs_f64();

    format::write_grid_field(&ctx.output("grid_field")?, &field)?;
    ctx.write_json(
        "summary.json",
        &json!({
            "M": setup.trunc.m_max(),
            "nlat": nlat,
            "nlon": nlon,
            "nlev": field.nlev,
            "grid_mean_square": grid_mean_square(&field, &setup.grid)?,
        }),
    )?;
    println!(
        "inverse transform M={} nlat={nlat} nlon={nlon} nlev={}: {:.3} ms",
        setup.trunc.m_max(),
        field.nlev,
        elapsed * 1e3
    );
    Ok(())
}

pub fn roundtrip(ctx: &Context, a: &TransformArgs) -> CliResult<()> {
    let setup = SpectralSetup::resolve(ctx, &a.spectral, None)?;
    let seed = ctx.seed()?;
    let start = Instant::now();
    let (spec, field) = setup.random_field(seed)?;
    let back = forward_transform(&field, &setup.grid, &setup.table)?;
    let elapsed = start.elapsed().as_secs_f64();
    let err = spec.max_abs_diff(&back)?;

    ctx.write_json(
        "roundtrip.json",
        &json!({
            "M": setup.trunc.m_max(),
            "nlat": setup.grid.nlat,
            "nlon": setup.grid.nlon,
            "nlev": setup.nlev,
            "seed": seed,
            "max_abs_error": err,
            "grid_mean_square": grid_mean_square(&field, &setup.grid)?,
            "spectral_energy": spectral_energy(&spec),
        }),
    )?;
    println!("max_abs_error = {err:e}");
    println!("elapsed = {:.3} ms", elapsed * 1e3);
    Ok(())
}
