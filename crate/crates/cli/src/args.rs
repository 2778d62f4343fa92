use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

const GLOBAL_HELP: &str = "\
Configuration:
  --config names a JSON object whose keys mirror the long flag names of the
  subcommand (\"M\", \"nlat\", \"seed\", ...). Flags given on the command line
  win over config keys.

Field files:
  Binary fields are stored as a pair <base>.bin + <base>.json. The .bin file
  holds little-endian f64 values, complex numbers as (re, im) pairs. The .json
  header records \"kind\", \"layout_version\" and the extents (nlat, nlon, M,
  nlev, height, width, ...).

Exit status:
  0 success, 1 invalid arguments or failed validation, 2 I/O error.

Environment:
  WORKBENCH_CACHE_DIR  directory for cached Legendre tables
                       (default: <temp dir>/workbench-cache)
  RUST_LOG             log filter (default: warn)";

#[derive(Debug, Parser)]
#[command(
    name = "workbench",
    version,
    about = "Spectral transforms, kernel verification, roofline reports and 4f correlator experiments",
    after_long_help = GLOBAL_HELP
)]
pub struct Cli {
    /// JSON object of option values
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,

    /// Seed for every random draw (default 0)
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Output directory, created if missing
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gaussian grids
    #[command(subcommand)]
    Grid(GridCommand),
    /// Spherical-harmonics transforms
    #[command(subcommand)]
    Transform(TransformCommand),
    /// Padded batched matrix products
    #[command(subcommand)]
    Gemm(GemmCommand),
    /// Column kernels on unstructured meshes
    #[command(subcommand)]
    Kernel(KernelCommand),
    /// Roofline classification
    #[command(subcommand)]
    Roofline(RooflineCommand),
    /// Simulated 4f optical correlator
    #[command(subcommand)]
    Optics(OpticsCommand),
    /// Two-stage astigmatic transform
    #[command(subcommand)]
    Astigmatic(AstigmaticCommand),
}

#[derive(Debug, Subcommand)]
pub enum GridCommand {
    /// Build a Gaussian grid and write its nodes and weights
    #[command(after_long_help = "\
Outputs:
  grid.json  {\"nlat\", \"nlon\", \"mu\": [..], \"weights\": [..], \"lambda\": [..]}
  grid.csv   j,mu,weight,latitude_deg  (one row per ring, north to south)")]
    Build(GridArgs),
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Number of Gaussian latitudes (required)
    #[arg(long)]
    pub nlat: Option<usize>,
    /// Longitudes per ring (default 2 nlat)
    #[arg(long)]
    pub nlon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    /// Triangular truncation
    #[arg(long = "M", value_name = "M")]
    pub m_max: Option<usize>,
    /// Number of Gaussian latitudes
    #[arg(long)]
    pub nlat: Option<usize>,
    /// Longitudes per ring (default 2 nlat)
    #[arg(long)]
    pub nlon: Option<usize>,
    /// Vertical levels of synthesized fields (default 1)
    #[arg(long)]
    pub nlev: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum TransformCommand {
    /// Grid-point to spectral analysis
    #[command(after_long_help = "\
Input:
  --input <BASE> reads a grid field <BASE>.bin/.json (kind \"grid_field\",
  values ordered [level][latitude][longitude]). Without --input a band-limited
  random field is synthesized from --seed and written to input_grid.bin/.json.

Outputs:
  spectrum.bin/.json  spectral field (kind \"spectral_field\"), complex values
                      ordered [level][m][n] for n = m..=M
  spectrum.csv        level,m,n,re,im

--mode selects the Legendre stage: direct (default), gemm or gemm-transposed.")]
    Forward(TransformArgs),
    /// Spectral to grid-point synthesis
    #[command(after_long_help = "\
Input:
  --input <BASE> reads a spectral field <BASE>.bin/.json; its truncation
  overrides --M. Without --input random coefficients are drawn from --seed.

Outputs:
  grid_field.bin/.json  grid field (kind \"grid_field\")
  summary.json          extents and the area-weighted mean square per level")]
    Inverse(TransformArgs),
    /// Spectral to grid to spectral round trip of random coefficients
    #[command(after_long_help = "\
Prints the maximum absolute coefficient error.

Outputs:
  roundtrip.json  {\"M\", \"nlat\", \"nlon\", \"nlev\", \"seed\", \"max_abs_error\",
                   \"grid_mean_square\": [..], \"spectral_energy\": [..]}")]
    Roundtrip(TransformArgs),
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[command(flatten)]
    pub spectral: SpectralArgs,
    /// Input field base path (without extension)
    #[arg(long, value_name = "BASE")]
    pub input: Option<PathBuf>,
    /// Legendre stage: direct | gemm | gemm-transposed
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum GemmCommand {
    /// Compare per-member products with the padded uniform batch
    #[command(after_long_help = "\
Builds the Legendre-stage batch of a random field (one product per zonal
wavenumber) and multiplies it three ways: member by member, padded direct and
padded transposed. Timings go to stdout only.

Outputs:
  gemm.json  {\"M\", \"nlat\", \"nlon\", \"nlev\", \"members\": [{rows, inner, cols}],
              \"padded\": {rows, inner, cols}, \"overhead\": {useful_flops,
              padded_flops, overhead_ratio}, \"max_rel_deviation_direct\",
              \"max_rel_deviation_transposed\"}")]
    Bench(GemmArgs),
}

#[derive(Debug, Args)]
pub struct GemmArgs {
    #[command(flatten)]
    pub spectral: SpectralArgs,
    /// Timed repetitions per variant (default 5)
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum KernelCommand {
    /// Vertical flux divergence kernel
    #[command(subcommand)]
    Fluxzdiv(FluxCommand),
}

#[derive(Debug, Subcommand)]
pub enum FluxCommand {
    /// Time the reference and restructured kernels on a synthetic mesh
    #[command(after_long_help = "\
Timings and achieved bandwidth go to stdout, together with a measurement
object that can be pasted into a roofline config.

Outputs:
  mesh.bin/.json     the synthetic mesh (kind \"column_mesh\")
  bench.json         {\"nodes\", \"levels\", \"edges\", \"seed\", \"traffic\":
                      {flops, bytes}, \"operational_intensity\", \"checksum\",
                      \"max_rel_deviation\"}")]
    Bench(FluxArgs),
    /// Check the restructured kernel against the reference on random meshes
    #[command(after_long_help = "\
Mesh i uses seed + 2i, its fluxes seed + 2i + 1. Exits 1 if any deviation
exceeds the tolerance.

Outputs:
  verify.csv   mesh,seed,nodes,levels,edges,max_rel_deviation
  verify.json  {\"meshes\", \"tolerance\", \"worst\", \"pass\"}")]
    Verify(FluxArgs),
}

#[derive(Debug, Args)]
pub struct FluxArgs {
    /// Mesh nodes
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Vertical levels
    #[arg(long)]
    pub levels: Option<usize>,
    /// Mesh edges
    #[arg(long)]
    pub edges: Option<usize>,
    /// Number of random meshes (verify)
    #[arg(long)]
    pub meshes: Option<usize>,
    /// Timed repetitions (bench)
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Relative tolerance (verify, default 1e-14)
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum RooflineCommand {
    /// Classify measured kernels against a machine model
    #[command(after_long_help = "\
Config (required):
  {\"machine\": {\"name\": \"..\", \"peak_flops\": F, \"stream_bandwidth\": B},
   \"measurements\": [{\"label\": \"..\", \"flops\": F, \"bytes\": B, \"seconds\": S}, ..]}
  Rates are in flop/s and byte/s.

Outputs:
  roofline_points.csv  label,oi,achieved,attainable,fraction,regime,
                       achieved_bandwidth,bandwidth_fraction
  roofline_curve.csv   oi,attainable  (64 log-spaced samples)
  roofline.json        machine, ridge point, rows and curve")]
    Report,
}

#[derive(Debug, Args)]
pub struct OpticsArgs {
    #[command(flatten)]
    pub spectral: SpectralArgs,
    /// Zonal wavenumber of the extracted coefficient
    #[arg(long)]
    pub m: Option<usize>,
    /// Total wavenumber of the extracted coefficient
    #[arg(long)]
    pub n: Option<usize>,
    /// Correlator height and width in pixels (default 64)
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Filter SLM model: ideal | curve (default ideal)
    #[arg(long)]
    pub mode: Option<String>,
    /// Operating curve: coupled | unit-circle | binary | half-circle, or a JSON file
    #[arg(long)]
    pub curve: Option<String>,
    /// Camera bit depth: 0 (unquantized), 8, 12 or 16
    #[arg(long)]
    pub camera_bits: Option<u32>,
    /// Standard deviation of output-plane noise per quadrature
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Reference strength of complex retrieval (default 1)
    #[arg(long)]
    pub reference: Option<f64>,
    /// Tile rows (tile)
    #[arg(long)]
    pub rows: Option<usize>,
    /// Tile columns (tile)
    #[arg(long)]
    pub cols: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum OpticsCommand {
    /// Read one spherical-harmonic coefficient through the correlator
    #[command(after_long_help = "\
The data is level 0 of a band-limited random field drawn from --seed, placed
at the center of the correlator input. --m and --n are required.

Curve files hold {\"levels\": [[re, im], ..]} with 256 entries of modulus <= 1.

Outputs:
  extract.json  {\"m\", \"n\", \"true\": [re, im], \"value\": [re, im],
                 \"intensity\", \"retrieved\": [re, im], \"fidelity\", \"gain\": [re, im]}")]
    Extract(OpticsArgs),
    /// Read every coefficient of the truncation and compare with the transform
    #[command(after_long_help = "\
Outputs:
  experiment.csv  m,n,true_abs,sqrt_intensity,true_re,true_im,retrieved_re,retrieved_im
  summary.json    {\"pairs\", \"pearson\" (sqrt intensity against |true|),
                   \"max_rel_retrieval_error\", ...}")]
    Experiment(OpticsArgs),
    /// Extract one coefficient from several fields in a single tiled pass
    #[command(after_long_help = "\
Tiles are random fields with seeds seed, seed + 1, ...; each is compared with a
separate single-field extraction at --resolution.

Outputs:
  tile.csv      tile,row,col,sample_y,sample_x,tiled_re,tiled_im,single_re,single_im,deviation
  tiled_input.bin/.json  the composite input (kind \"complex_field\")")]
    Tile(OpticsArgs),
    /// Anneal Zernike phase and threshold corrections of a binary filter
    #[command(after_long_help = "\
A phase aberration is injected in the filter plane; annealing searches the
twelve correction coefficients. Training pairs use --seed, held-out pairs
seed + 1, the annealer seed + 2.

Config key \"schedule\" may hold {\"iterations\", \"initial_temperature\",
\"cooling_factor\", \"proposal_sigma\"}.

Outputs:
  calibration.json  {\"phase_coeffs\": [6], \"threshold_coeffs\": [6], \"fitness\",
                     \"schedule\", \"seed\"}
  trace.csv         iteration,best_fitness
  summary.json      training and held-out fitness before and after, residual
                    RMS phase before and after")]
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Correlator height and width in pixels (default 64)
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Side of the random target patches (default resolution / 2)
    #[arg(long)]
    pub patch: Option<usize>,
    /// Training pairs (default 10)
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Held-out pairs (default 10)
    #[arg(long)]
    pub heldout: Option<usize>,
    /// Annealing iterations, counting the starting point (default 500)
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Zernike term of the injected aberration, 0..=5 (default 4)
    #[arg(long)]
    pub aberration_term: Option<usize>,
    /// Coefficient of the injected aberration in radians (default 0.8)
    #[arg(long)]
    pub aberration: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum AstigmaticCommand {
    /// Sweep every n with one filter frame each
    #[command(after_long_help = "\
--mode exact | shared | both (default both). The data is level 0 of a
band-limited random field drawn from --seed. Requires nlon > 2 M.

Outputs:
  astigmatic_<mode>.csv  n,m,re,im
  deviation.csv          n,m,exact_re,exact_im,shared_re,shared_im,abs_deviation  (both)
  summary.json           {\"M\", \"nlat\", \"nlon\", \"filter_frames\",
                          \"max_error_vs_transform\": {mode: err}, \"max_abs_deviation\"}")]
    Run(AstigmaticArgs),
}

#[derive(Debug, Args)]
pub struct AstigmaticArgs {
    #[command(flatten)]
    pub spectral: SpectralArgs,
    /// exact | shared | both
    #[arg(long)]
    pub mode: Option<String>,
}
