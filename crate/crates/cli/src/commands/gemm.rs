use serde_json::json;
use workbench_core::batch_gemm::{multiply, pad_batch, Layout, Matrix};
use workbench_core::spectral::legendre_batch_members;

use super::{time_best, SpectralSetup};
use crate::args::GemmArgs;
use crate::settings::{CliResult, Context};

/// Largest element-wise deviation over the largest reference magnitude.
fn max_rel_deviation(reference: &[Matrix], other: &[Matrix]) -> f64 {
    let scale = reference
        .iter()
        .flat_map(|m| m.data().iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let diff = reference
        .iter()
        .zip(other)
        .flat_map(|(a, b)| a.data().iter().zip(b.data()))
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn bench(ctx: &Context, a: &GemmArgs) -> CliResult<()> {
    let setup = SpectralSetup::resolve(ctx, &a.spectral, Some((21, 32)))?;
    let repeats = ctx.or("repeats", a.repeats, 5)?;
    let (_, field) = setup.random_field(ctx.seed()?)?;
    let members = legendre_batch_members(&field, &setup.grid, &setup.table)?;
    let batch = pad_batch(&members)?;

    let (t_members, reference) = time_best(repeats, || {
        members
            .iter()
            .map(|(a, b)| multiply(a, b).map_err(Into::into))
            .collect::<CliResult<Vec<_>>>()
    })?;
    let (t_direct, direct) = time_best(repeats, || Ok(batch.batched_multiply(Layout::Direct)))?;
    let (t_trans, transposed) = time_best(repeats, || Ok(batch.batched_multiply(Layout::Transposed)))?;

    let overhead = batch.padding_overhead();
    let dev_direct = max_rel_deviation(&reference, &direct);
    let dev_trans = max_rel_deviation(&reference, &transposed);
    ctx.write_json(
        "gemm.json",
        &json!({
            "M": setup.trunc.m_max(),
            "nlat": setup.grid.nlat,
            "nlon": setup.grid.nlon,
            "nlev": setup.nlev,
            "members": batch.dims(),
            "padded": batch.pad_dims(),
            "overhead": overhead,
            "max_rel_deviation_direct": dev_direct,
            "max_rel_deviation_transposed": dev_trans,
        }),
    )?;

    println!(
        "{} members, overhead ratio {:.4} ({} useful / {} executed flops)",
        batch.count(),
        overhead.overhead_ratio,
        overhead.useful_flops,
        overhead.padded_flops
    );
    println!("per-member     {:>10.3} ms", t_members * 1e3);
    println!("padded direct  {:>10.3} ms  deviation {dev_direct:e}", t_direct * 1e3);
    println!("padded transp. {:>10.3} ms  deviation {dev_trans:e}", t_trans * 1e3);
    Ok(())
}
