//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `EXPECTED_FAILURES` are still run and reported; they
//! do not turn the exit status red.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use workbench_core::astigmatic::{astigmatic_sweep, KernelMode};
use workbench_core::batch_gemm::{multiply, pad_batch, Layout, Matrix};
use workbench_core::kernels::{
    compute_fluxzdiv_reference, compute_fluxzdiv_restructured, max_term_relative_deviation,
    random_flux, synthetic_mesh, FluxFields, UnstructuredColumnMesh,
};
use workbench_core::legendre::{build_legendre_table, LegendreTable};
use workbench_core::optics::{
    embed_grid_data, extract_tiled, pearson, CoefficientProbe, ComplexField, CorrelatorConfig,
    OperatingCurve, SlmModel,
};
use workbench_core::optics_calib::{
    anneal_calibration, calibration_fitness, random_target_pairs, residual_rms_phase,
    AberratedSystem, AnnealSchedule, CorrectionParams,
};
use workbench_core::roofline::{batch_slowdown, classify, KernelMeasurement, MachineModel, Regime};
use workbench_core::spectral::{forward_transform, forward_transform_gemm, inverse_transform};
use workbench_core::sphere_grid::{
    build_gaussian_grid, random_spectral_field, SpectralField, SphericalGrid, Truncation,
};

const EXPECTED_FAILURES: &[&str] = &["7b"];

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, title: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        title,
        pass,
        detail,
    }
}

fn setup(m_max: usize, nlat: usize, nlon: usize) -> (Truncation, SphericalGrid, LegendreTable) {
    let trunc = Truncation::new(m_max);
    let grid = build_gaussian_grid(nlat, nlon).unwrap();
    let table = build_legendre_table(trunc, &grid).unwrap();
    (trunc, grid, table)
}

fn max_abs(spec: &SpectralField) -> f64 {
    spec.coeff.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn level_slice(spec: &SpectralField, grid: &SphericalGrid, table: &LegendreTable) -> ComplexField {
    let field = inverse_transform(spec, grid, table).unwrap();
    ComplexField::from_real(grid.nlat, grid.nlon, field.level(0)).unwrap()
}

fn spectral_roundtrip() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (err, secs) = pool.install(|| {
        let start = Instant::now();
        let (trunc, grid, table) = setup(21, 32, 64);
        let spec = random_spectral_field(trunc, 3, 11).unwrap();
        let field = inverse_transform(&spec, &grid, &table).unwrap();
        let back = forward_transform(&field, &grid, &table).unwrap();
        (spec.max_abs_diff(&back).unwrap(), start.elapsed().as_secs_f64())
    });
    outcome(
        "1",
        "spectral roundtrip M=21 32x64, 3 levels, 1 thread",
        err < 1e-11 && secs < 5.0,
        format!("max abs error {err:.3e} (< 1e-11), {secs:.3} s (< 5 s)"),
    )
}

fn legendre_orthonormality() -> Outcome {
    let (trunc, grid, table) = setup(10, 16, 32);
    let mut worst = 0.0_f64;
    for m in 0..=trunc.m_max() {
        for n in m..=trunc.m_max() {
            for k in m..=trunc.m_max() {
                let ip: f64 = 0.5
                    * grid
                        .weights
                        .iter()
                        .zip(table.column(m, n).iter().zip(table.column(m, k)))
                        .map(|(w, (a, b))| w * a * b)
                        .sum::<f64>();
                let delta = if n == k { 1.0 } else { 0.0 };
                worst = worst.max((ip - delta).abs());
            }
        }
    }
    outcome(
        "2",
        "Legendre orthonormality M=10 nlat=16",
        worst <= 1e-10,
        format!("max |<P,P'> - delta| {worst:.3e} (<= 1e-10)"),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn padded_gemm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let size = rng.random_range(1..=12);
        let members: Vec<(Matrix, Matrix)> = (0..size)
            .map(|_| {
                let (r, k, c) = (
                    rng.random_range(1..=9),
                    rng.random_range(1..=9),
                    rng.random_range(1..=9),
                );
                (random_matrix(&mut rng, r, k), random_matrix(&mut rng, k, c))
            })
            .collect();
        let batch = pad_batch(&members).unwrap();
        for layout in [Layout::Direct, Layout::Transposed] {
            for ((a, b), got) in members.iter().zip(batch.batched_multiply(layout)) {
                let want = multiply(a, b).unwrap();
                let scale = want.data().iter().fold(0.0_f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);
                let diff = want
                    .data()
                    .iter()
                    .zip(got.data())
                    .fold(0.0_f64, |s, (x, y)| s.max((x - y).abs()));
                worst = worst.max(diff / scale);
            }
        }
    }
    // Members 1x1x1 and 2x2x2: 2 + 16 = 18 useful flops, 2 * 16 = 32 padded.
    let hand = pad_batch(&[
        (Matrix::identity(1), Matrix::identity(1)),
        (Matrix::identity(2), Matrix::identity(2)),
    ])
    .unwrap()
    .padding_overhead();
    let hand_ok = hand.useful_flops == 18 && hand.padded_flops == 32 && hand.overhead_ratio == 32.0 / 18.0;
    outcome(
        "3",
        "padded batched GEMM equals per-member products (100 batches)",
        worst <= 1e-13 && hand_ok,
        format!(
            "max relative deviation {worst:.3e} (<= 1e-13); hand count {}/{} flops, ratio {:.6}",
            hand.useful_flops, hand.padded_flops, hand.overhead_ratio
        ),
    )
}

fn gemm_transform() -> Outcome {
    let (trunc, grid, table) = setup(21, 32, 64);
    let spec = random_spectral_field(trunc, 3, 5).unwrap();
    let field = inverse_transform(&spec, &grid, &table).unwrap();
    let direct = forward_transform(&field, &grid, &table).unwrap();
    let scale = max_abs(&direct);
    let mut worst = 0.0_f64;
    for layout in [Layout::Direct, Layout::Transposed] {
        let gemm = forward_transform_gemm(&field, &grid, &table, layout).unwrap();
        worst = worst.max(direct.max_abs_diff(&gemm).unwrap() / scale);
    }
    outcome(
        "4",
        "GEMM-path forward transform equals direct at M=21",
        worst <= 1e-13,
        format!("max relative deviation {worst:.3e} (<= 1e-13)"),
    )
}

fn fluxzdiv() -> Outcome {
    let mesh = UnstructuredColumnMesh::new(1, 1, vec![vec![0]], vec![vec![1.0]], vec![4.0], 0.5).unwrap();
    let flux = FluxFields {
        pfx: vec![2.0],
        pfz: vec![1.0, 3.0],
    };
    let hand_ref = compute_fluxzdiv_reference(&mesh, &flux).unwrap();
    let hand_new = compute_fluxzdiv_restructured(&mesh, &flux).unwrap();
    let hand_ok = hand_ref == vec![4.5] && (hand_new[0] - 4.5).abs() <= 1e-14;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for i in 0..100 {
        let nodes = rng.random_range(2..=60);
        let levels = rng.random_range(1..=12);
        let edges = rng.random_range(0..=4 * nodes);
        let mesh = synthetic_mesh(nodes, levels, edges, 1000 + i).unwrap();
        let flux = random_flux(&mesh, 2000 + i);
        let a = compute_fluxzdiv_reference(&mesh, &flux).unwrap();
        let b = compute_fluxzdiv_restructured(&mesh, &flux).unwrap();
        worst = worst.max(max_term_relative_deviation(&mesh, &flux, &a, &b).unwrap());
    }
    outcome(
        "5",
        "fluxzdiv hand case and restructured kernel (100 meshes)",
        hand_ok && worst <= 1e-14,
        format!(
            "hand case {} / {}; max relative deviation {worst:.3e} (<= 1e-14)",
            hand_ref[0], hand_new[0]
        ),
    )
}

fn roofline() -> Outcome {
    let machine = MachineModel::new("P100", 4.7e12, 521e9).unwrap();
    let optimized = KernelMeasurement::new("optimized", 0.5 * 344e9, 344e9, 1.0).unwrap();
    let original = KernelMeasurement::new("original", 0.5 * 44e9, 44e9, 1.0).unwrap();
    let opt = classify(&optimized, &machine).unwrap();
    let orig = classify(&original, &machine).unwrap();
    let s_half = batch_slowdown(1e6, 1e3).unwrap();
    let s_one = batch_slowdown(1e6, 1.0).unwrap();
    let s_zero = batch_slowdown(1e6, 1e6).unwrap();
    let pass = (opt.fraction_of_roof - 0.66).abs() < 0.005
        && opt.regime == Regime::MemoryBound
        && orig.fraction_of_roof < 0.10
        && s_half == 0.5
        && s_one == 1.0
        && s_zero == 0.0;
    outcome(
        "6",
        "roofline fractions and batch slowdown",
        pass,
        format!(
            "fractions {:.4} (~0.66), {:.4} (< 0.10); S = {s_half}, {s_one}, {s_zero}",
            opt.fraction_of_roof, orig.fraction_of_roof
        ),
    )
}

const OPTICS_SEEDS: [u64; 3] = [21, 22, 23];

fn optics_ideal() -> Outcome {
    let (trunc, grid, table) = setup(10, 16, 32);
    let cfg = CorrelatorConfig::ideal(64, 64);
    let mut worst = 0.0_f64;
    for seed in OPTICS_SEEDS {
        let spec = random_spectral_field(trunc, 1, seed).unwrap();
        let data = level_slice(&spec, &grid, &table);
        let truth = forward_transform(&inverse_transform(&spec, &grid, &table).unwrap(), &grid, &table).unwrap();
        let input = embed_grid_data(&data, &grid, &cfg).unwrap();
        let scale = max_abs(&truth);
        for (m, n) in trunc.pairs() {
            let probe = CoefficientProbe::new(m, n, &grid, &table, &cfg).unwrap();
            let got = probe.retrieve(&input, &cfg, 1.0).unwrap();
            worst = worst.max((got - truth.get(0, m, n)).norm() / scale);
        }
    }
    outcome(
        "7a",
        "ideal correlator retrieval at M=10 on 64x64",
        worst <= 1e-8,
        format!("max relative error {worst:.3e} (<= 1e-8) over 3 fields"),
    )
}

fn optics_curve() -> Outcome {
    let (trunc, grid, table) = setup(10, 16, 32);
    let mut cfg = CorrelatorConfig::ideal(64, 64);
    cfg.filter_slm = SlmModel::Curve(OperatingCurve::coupled());
    let probes: Vec<CoefficientProbe> = trunc
        .pairs()
        .map(|(m, n)| CoefficientProbe::new(m, n, &grid, &table, &cfg).unwrap())
        .collect();
    let mut rs = Vec::new();
    for seed in OPTICS_SEEDS {
        let spec = random_spectral_field(trunc, 1, seed).unwrap();
        let data = level_slice(&spec, &grid, &table);
        let truth = forward_transform(&inverse_transform(&spec, &grid, &table).unwrap(), &grid, &table).unwrap();
        let input = embed_grid_data(&data, &grid, &cfg).unwrap();
        let (mut reading, mut magnitude) = (Vec::new(), Vec::new());
        for probe in &probes {
            reading.push(probe.measure(&input, &cfg).unwrap().intensity.sqrt());
            magnitude.push(truth.get(0, probe.m, probe.n).norm());
        }
        rs.push(pearson(&reading, &magnitude).unwrap());
    }
    let worst = rs.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        "7b",
        "coupled-curve Pearson(sqrt I, |true|) at M=10 on 64x64",
        worst >= 0.99,
        format!(
            "Pearson {} (>= 0.99)",
            rs.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn tiling() -> Outcome {
    let (trunc, grid, table) = setup(6, 8, 16);
    let cfg = CorrelatorConfig::ideal(32, 32);
    let tiles: Vec<ComplexField> = (0..4)
        .map(|s| level_slice(&random_spectral_field(trunc, 1, 40 + s).unwrap(), &grid, &table))
        .collect();
    let mut worst = 0.0_f64;
    for (m, n) in trunc.pairs() {
        let tiled = extract_tiled(&tiles, 2, 2, m, n, &grid, &table, &cfg).unwrap();
        let probe = CoefficientProbe::new(m, n, &grid, &table, &cfg).unwrap();
        for (tile, got) in tiles.iter().zip(&tiled) {
            let single = probe.measure(&embed_grid_data(tile, &grid, &cfg).unwrap(), &cfg).unwrap();
            worst = worst.max((single.value - got.value).norm());
            worst = worst.max((single.intensity - got.intensity).abs());
        }
    }
    outcome(
        "8",
        "2x2 tiled extraction equals per-tile extraction",
        worst <= 1e-10,
        format!("max deviation {worst:.3e} (<= 1e-10) over all (m, n) at M=6"),
    )
}

fn astigmatic() -> Outcome {
    let (trunc, grid, table) = setup(15, 20, 40);
    let spec = random_spectral_field(trunc, 1, 9).unwrap();
    let field = inverse_transform(&spec, &grid, &table).unwrap();
    let truth = forward_transform(&field, &grid, &table).unwrap();
    let sweep = astigmatic_sweep(field.level(0), &grid, &table, KernelMode::Exact).unwrap();
    let worst = trunc
        .pairs()
        .map(|(m, n)| (sweep.coeff(m, n) - truth.get(0, m, n)).norm())
        .fold(0.0, f64::max);
    outcome(
        "9",
        "astigmatic exact mode equals transform rows at M=15",
        worst <= 1e-10 && sweep.filter_frames == 16,
        format!("max error {worst:.3e} (<= 1e-10); {} filter frames (= 16)", sweep.filter_frames),
    )
}

fn calibration() -> Outcome {
    let start = Instant::now();
    let mut coeffs = [0.0; 6];
    coeffs[4] = 0.8;
    let system = AberratedSystem::new(64, 64, coeffs).unwrap();
    let train = random_target_pairs(10, 64, 64, 32, 1).unwrap();
    let heldout = random_target_pairs(10, 64, 64, 32, 2).unwrap();
    let schedule = AnnealSchedule {
        rng_seed: 3,
        ..AnnealSchedule::default()
    };
    let result = anneal_calibration(&system, &schedule, &train).unwrap();
    let held = calibration_fitness(&result.best_params, &system, &heldout).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let ratio = result.best_fitness / result.initial_fitness;
    let monotone = result.trace.windows(2).all(|w| w[1] >= w[0]);
    let rms_before = residual_rms_phase(&CorrectionParams::default(), &system);
    let rms_after = residual_rms_phase(&result.best_params, &system);
    outcome(
        "10",
        "calibration recovers a 0.8 Z4 aberration",
        ratio >= 1.2
            && held >= 0.9 * result.best_fitness
            && monotone
            && result.trace.len() == 500
            && rms_after < rms_before
            && secs < 120.0,
        format!(
            "gain {ratio:.3}x (>= 1.2), held-out {:.3} of training (>= 0.9), trace monotone {monotone}, \
             residual RMS {rms_before:.3} -> {rms_after:.3} rad, {secs:.2} s (< 120 s)",
            held / result.best_fitness
        ),
    )
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
    }
    files
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_workbench");
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let roofline = configs.join("mpdata_p100.json");
    let roofline = roofline.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["grid", "build", "--nlat", "16"],
        vec!["transform", "forward", "--M", "21", "--nlat", "32", "--nlev", "2"],
        vec!["transform", "forward", "--M", "21", "--nlat", "32", "--mode", "gemm-transposed"],
        vec!["transform", "inverse", "--M", "21", "--nlat", "32"],
        vec!["transform", "roundtrip", "--M", "21", "--nlat", "32", "--nlon", "64"],
        vec!["gemm", "bench", "--repeats", "1"],
        vec!["kernel", "fluxzdiv", "bench", "--nodes", "500", "--levels", "8", "--repeats", "1"],
        vec!["kernel", "fluxzdiv", "verify", "--meshes", "10"],
        vec!["roofline", "report", "--config", roofline],
        vec!["optics", "extract", "--m", "2", "--n", "4"],
        vec!["optics", "extract", "--m", "1", "--n", "1", "--mode", "curve", "--camera-bits", "8", "--noise-sigma", "1e-4"],
        vec!["optics", "experiment", "--M", "6", "--nlat", "8", "--resolution", "32"],
        vec!["optics", "tile", "--M", "6", "--nlat", "8", "--m", "3", "--n", "5", "--resolution", "32"],
        vec!["optics", "calibrate", "--resolution", "32", "--iterations", "40", "--pairs", "3", "--heldout", "3"],
        vec!["astigmatic", "run"],
    ];

    let root = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let mut trees = Vec::new();
        for run in 0..2 {
            let out = root.path().join(format!("c{i}-r{run}"));
            let status = Command::new(bin)
                .args(args)
                .args(["--seed", "17", "--out", out.to_str().unwrap()])
                .env("WORKBENCH_CACHE_DIR", root.path().join("cache"))
                .output()
                .unwrap();
            if !status.status.success() {
                failures.push(format!("`{}` exited {:?}", args.join(" "), status.status.code()));
                break;
            }
            trees.push(read_tree(&out));
        }
        if trees.len() == 2 && (trees[0] != trees[1] || trees[0].is_empty()) {
            failures.push(format!("`{}` outputs differ", args.join(" ")));
        }
    }
    outcome(
        "11",
        "CLI outputs byte-identical across reruns",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} commands, two runs each", commands.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let checks: Vec<fn() -> Outcome> = vec![
        spectral_roundtrip,
        legendre_orthonormality,
        padded_gemm,
        gemm_transform,
        fluxzdiv,
        roofline,
        optics_ideal,
        optics_curve,
        tiling,
        astigmatic,
        calibration,
        cli_determinism,
    ];
    let mut unexpected = 0;
    for check in checks {
        let o = check();
        let expected = EXPECTED_FAILURES.contains(&o.id);
        let tag = match (o.pass, expected) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("[{tag}] {:>3} {}: {}", o.id, o.title, o.detail);
        if !o.pass && !expected {
            unexpected += 1;
        }
    }
    if unexpected == 0 {
        println!("acceptance: no unexpected failures");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    }
}
