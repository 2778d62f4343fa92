use std::fmt::Write as _;

use serde_json::json;
use workbench_core::format;
use workbench_core::kernels::{
    compute_fluxzdiv_reference, compute_fluxzdiv_restructured, kernel_traffic_model,
    max_term_relative_deviation, random_flux, synthetic_mesh,
};
use workbench_core::roofline::operational_intensity;

use super::time_best;
use crate::args::FluxArgs;
use crate::settings::{CliError, CliResult, Context};

pub fn bench(ctx: &Context, a: &FluxArgs) -> CliResult<()> {
    let nodes = ctx.or("nodes", a.nodes, 20_000)?;
    let levels = ctx.or("levels", a.levels, 64)?;
    let edges = ctx.or("edges", a.edges, 3 * nodes)?;
    let repeats = ctx.or("repeats", a.repeats, 3)?;
    let seed = ctx.seed()?;

    let mesh = synthetic_mesh(nodes, levels, edges, seed)?;
    let flux = random_flux(&mesh, seed.wrapping_add(1));
    let (t_ref, reference) = time_best(repeats, || Ok(compute_fluxzdiv_reference(&mesh, &flux)?))?;
    let (t_new, restructured) = time_best(repeats, || Ok(compute_fluxzdiv_restructured(&mesh, &flux)?))?;
    let deviation = max_term_relative_deviation(&mesh, &flux, &reference, &restructured)?;
    let traffic = kernel_traffic_model(&mesh);
    let oi = operational_intensity(traffic.flops as f64, traffic.bytes as f64)?;

    format::write_mesh(&ctx.output("mesh")?, &mesh)?;
    ctx.write_json(
        "bench.json",
        &json!({
            "nodes": nodes,
            "levels": levels,
            "edges": edges,
            "seed": seed,
            "traffic": traffic,
            "operational_intensity": oi,
            "checksum": restructured.iter().sum::<f64>(),
            "max_rel_deviation": deviation,
        }),
    )?;

    println!("traffic model: {} flops, {} bytes, OI {oi:.4}", traffic.flops, traffic.bytes);
    for (label, t) in [("reference", t_ref), ("restructured", t_new)] {
        println!(
            "{label:<13} {:>10.3} ms  {:>8.2} GB/s",
            t * 1e3,
            traffic.bytes as f64 / t / 1e9
        );
    }
    println!(
        "measurement: {}",
        json!({"label": "fluxzdiv", "flops": traffic.flops, "bytes": traffic.bytes, "seconds": t_new})
    );
    Ok(())
}

pub fn verify(ctx: &Context, a: &FluxArgs) -> CliResult<()> {
    let nodes = ctx.or("nodes", a.nodes, 200)?;
    let levels = ctx.or("levels", a.levels, 16)?;
    let edges = ctx.or("edges", a.edges, 3 * nodes)?;
    let meshes = ctx.or("meshes", a.meshes, 100)?;
    let tolerance = ctx.or("tolerance", a.tolerance, 1e-14)?;
    let seed = ctx.seed()?;

    let mut csv = String::from("mesh,seed,nodes,levels,edges,max_rel_deviation\n");
    let mut worst = 0.0_f64;
    for i in 0..meshes as u64 {
        let mesh_seed = seed.wrapping_add(2 * i);
        let mesh = synthetic_mesh(nodes, levels, edges, mesh_seed)?;
        let flux = random_flux(&mesh, mesh_seed.wrapping_add(1));
        let reference = compute_fluxzdiv_reference(&mesh, &flux)?;
        let restructured = compute_fluxzdiv_restructured(&mesh, &flux)?;
        let d = max_term_relative_deviation(&mesh, &flux, &reference, &restructured)?;
        worst = worst.max(d);
        let _ = writeln!(csv, "{i},{mesh_seed},{nodes},{levels},{edges},{d}");
    }
    let pass = worst <= tolerance;
    ctx.write_text("verify.csv", &csv)?;
    ctx.write_json(
        "verify.json",
        &json!({"meshes": meshes, "tolerance": tolerance, "worst": worst, "pass": pass}),
    )?;
    println!("{meshes} meshes, worst relative deviation {worst:e} (tolerance {tolerance:e})");
    if pass {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "restructured kernel deviates by {worst:e}, above {tolerance:e}"
        )))
    }
}
