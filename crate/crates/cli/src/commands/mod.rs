mod astigmatic;
mod gemm;
mod grid;
mod kernel;
mod optics;
mod roofline;
mod transform;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use workbench_core::legendre::{load_or_build, LegendreTable};
use workbench_core::spectral::inverse_transform;
use workbench_core::sphere_grid::{
    build_gaussian_grid, random_spectral_field, GridField, SpectralField, SphericalGrid, Truncation,
};

use crate::args::*;
use crate::settings::{cache_dir, CliResult, Context};

pub fn run(cli: &Cli) -> CliResult<()> {
    let ctx = |path: &[&'static str]| {
        Context::new(path.to_vec(), cli.config.as_deref(), cli.seed, cli.out.clone())
    };
    match &cli.command {
        Command::Grid(GridCommand::Build(a)) => grid::build(&ctx(&["grid", "build"])?, a),
        Command::Transform(TransformCommand::Forward(a)) => {
            transform::forward(&ctx(&["transform", "forward"])?, a)
        }
        Command::Transform(TransformCommand::Inverse(a)) => {
            transform::inverse(&ctx(&["transform", "inverse"])?, a)
        }
        Command::Transform(TransformCommand::Roundtrip(a)) => {
            transform::roundtrip(&ctx(&["transform", "roundtrip"])?, a)
        }
        Command::Gemm(GemmCommand::Bench(a)) => gemm::bench(&ctx(&["gemm", "bench"])?, a),
        Command::Kernel(KernelCommand::Fluxzdiv(FluxCommand::Bench(a))) => {
            kernel::bench(&ctx(&["kernel", "fluxzdiv", "bench"])?, a)
        }
        Command::Kernel(KernelCommand::Fluxzdiv(FluxCommand::Verify(a))) => {
            kernel::verify(&ctx(&["kernel", "fluxzdiv", "verify"])?, a)
        }
        Command::Roofline(RooflineCommand::Report) => roofline::report(&ctx(&["roofline", "report"])?),
        Command::Optics(OpticsCommand::Extract(a)) => optics::extract(&ctx(&["optics", "extract"])?, a),
        Command::Optics(OpticsCommand::Experiment(a)) => {
            optics::experiment(&ctx(&["optics", "experiment"])?, a)
        }
        Command::Optics(OpticsCommand::Tile(a)) => optics::tile(&ctx(&["optics", "tile"])?, a),
        Command::Optics(OpticsCommand::Calibrate(a)) => {
            optics::calibrate(&ctx(&["optics", "calibrate"])?, a)
        }
        Command::Astigmatic(AstigmaticCommand::Run(a)) => {
            astigmatic::run(&ctx(&["astigmatic", "run"])?, a)
        }
    }
}

/// Truncation, grid and Legendre table of a spectral command.
pub(crate) struct SpectralSetup {
    pub trunc: Truncation,
    pub grid: SphericalGrid,
    pub table: LegendreTable,
    pub nlev: usize,
}

impl SpectralSetup {
    /// Resolves `M`, `nlat`, `nlon` and `nlev`; `defaults` supplies values for
    /// `M` and `nlat` when the command does not require them.
    pub fn resolve(ctx: &Context, a: &SpectralArgs, defaults: Option<(usize, usize)>) -> CliResult<Self> {
        let (m_max, nlat) = match defaults {
            Some((m, nlat)) => (ctx.or("M", a.m_max, m)?, ctx.or("nlat", a.nlat, nlat)?),
            None => (ctx.require("M", a.m_max)?, ctx.require("nlat", a.nlat)?),
        };
        let nlon = ctx.or("nlon", a.nlon, 2 * nlat)?;
        let nlev = ctx.or("nlev", a.nlev, 1)?;
        Self::build(m_max, nlat, nlon, nlev)
    }

    pub fn build(m_max: usize, nlat: usize, nlon: usize, nlev: usize) -> CliResult<Self> {
        let trunc = Truncation::new(m_max);
        let grid = build_gaussian_grid(nlat, nlon)?;
        grid.supports(&trunc)?;
        let table = load_or_build(trunc, &grid, &cache_dir())?;
        Ok(Self {
            trunc,
            grid,
            table,
            nlev,
        })
    }

    /// Random coefficients and their band-limited grid field.
    pub fn random_field(&self, seed: u64) -> CliResult<(SpectralField, GridField)> {
        let spec = random_spectral_field(self.trunc, self.nlev, seed)?;
        let field = inverse_transform(&spec, &self.grid, &self.table)?;
        Ok((spec, field))
    }
}

pub(crate) fn spectrum_csv(spec: &SpectralField) -> String {
    let mut csv = String::from("level,m,n,re,im\n");
    for l in 0..spec.nlev {
        for (m, n) in spec.trunc.pairs() {
            let c = spec.get(l, m, n);
            let _ = writeln!(csv, "{l},{m},{n},{},{}", c.re, c.im);
        }
    }
    csv
}

/// Best wall time over `repeats` runs of `f`, with the last result.
pub(crate) fn time_best<T>(repeats: usize, mut f: impl FnMut() -> CliResult<T>) -> CliResult<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let r = f()?;
        best = best.min(start.elapsed().as_secs_f64());
        last = Some(r);
    }
    Ok((best, last.expect("at least one repetition")))
}

pub(crate) fn display(path: &Path) -> String {
    path.display().to_string()
}
