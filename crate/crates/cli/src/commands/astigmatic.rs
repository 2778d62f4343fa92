use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::json;
use workbench_core::astigmatic::{astigmatic_sweep, deviation_table, AstigmaticSweep, KernelMode};
use workbench_core::spectral::forward_transform;
use workbench_core::sphere_grid::SpectralField;

use super::SpectralSetup;
use crate::args::AstigmaticArgs;
use crate::settings::{CliResult, Context};

fn sweep_csv(sweep: &AstigmaticSweep) -> String {
    let mut csv = String::from("n,m,re,im\n");
    for row in &sweep.rows {
        for (m, c) in row.coeffs.iter().enumerate() {
            let _ = writeln!(csv, "{},{m},{},{}", row.n, c.re, c.im);
        }
    }
    csv
}

fn error_vs(sweep: &AstigmaticSweep, truth: &SpectralField) -> f64 {
    truth
        .trunc
        .pairs()
        .map(|(m, n)| (sweep.coeff(m, n) - truth.get(0, m, n)).norm())
        .fold(0.0, f64::max)
}

pub fn run(ctx: &Context, a: &AstigmaticArgs) -> CliResult<()> {
    let m_max = ctx.or("M", a.spectral.m_max, 15)?;
    let nlat = ctx.or("nlat", a.spectral.nlat, 24)?;
    let nlon = ctx.or("nlon", a.spectral.nlon, 2 * nlat)?;
    let modes = match ctx.or("mode", a.mode.clone(), "both".to_string())?.as_str() {
        "both" => vec![KernelMode::Exact, KernelMode::Shared],
        other => vec![other.parse::<KernelMode>().map_err(|e| ctx.usage_error(e.to_string()))?],
    };
    let setup = SpectralSetup::build(m_max, nlat, nlon, 1)?;
    let (_, field) = setup.random_field(ctx.seed()?)?;
    let truth = forward_transform(&field, &setup.grid, &setup.table)?;

    let mut sweeps = Vec::new();
    let mut errors = BTreeMap::new();
    for mode in modes {
        let sweep = astigmatic_sweep(field.level(0), &setup.grid, &setup.table, mode)?;
        let name = match mode {
            KernelMode::Exact => "exact",
            KernelMode::Shared => "shared",
        };
        let err = error_vs(&sweep, &truth);
        println!("{name:<6} mode: {} filter frames, max error vs transform {err:.3e}", sweep.filter_frames);
        ctx.write_text(&format!("astigmatic_{name}.csv"), &sweep_csv(&sweep))?;
        errors.insert(name, err);
        sweeps.push(sweep);
    }

    let mut max_dev = None;
    if let [exact, shared] = sweeps.as_slice() {
        let rows = deviation_table(exact, shared)?;
        let mut csv = String::from("n,m,exact_re,exact_im,shared_re,shared_im,abs_deviation\n");
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                r.n, r.m, r.exact_re, r.exact_im, r.shared_re, r.shared_im, r.abs_deviation
            );
        }
        ctx.write_text("deviation.csv", &csv)?;
        let worst = rows.iter().map(|r| r.abs_deviation).fold(0.0, f64::max);
        println!("max |exact - shared| = {worst:.3e}");
        max_dev = Some(worst);
    }

    ctx.write_json(
        "summary.json",
        &json!({
            "M": m_max,
            "nlat": nlat,
            "nlon": nlon,
            "filter_frames": sweeps[0].filter_frames,
            "max_error_vs_transform": errors,
            "max_abs_deviation": max_dev,
        }),
    )?;
    Ok(())
}
