use std::fmt::Write as _;

use workbench_core::sphere_grid::build_gaussian_grid;

use super::display;
use crate::args::GridArgs;
use crate::settings::{CliResult, Context};

pub fn build(ctx: &Context, a: &GridArgs) -> CliResult<()> {
    let nlat = ctx.require("nlat", a.nlat)?;
    let nlon = ctx.or("nlon", a.nlon, 2 * nlat)?;
    let grid = build_gaussian_grid(nlat, nlon)?;

    let mut csv = String::from("j,mu,weight,latitude_deg\n");
    for (j, (mu, w)) in grid.mu.iter().zip(&grid.weights).enumerate() {
        let _ = writeln!(csv, "{j},{mu},{w},{}", mu.asin().to_degrees());
    }
    let json = ctx.write_json("grid.json", &grid)?;
    ctx.write_text("grid.csv", &csv)?;

    let total: f64 = grid.weights.iter().sum();
    println!("Gaussian grid {nlat} x {nlon}, weight sum {total}");
    println!("wrote {}", display(&json));
    Ok(())
}
