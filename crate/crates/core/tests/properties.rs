use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use workbench_core::batch_gemm::{multiply, pad_batch, Layout, Matrix};
use workbench_core::kernels::{
    compute_fluxzdiv_reference, compute_fluxzdiv_restructured, kernel_traffic_model, max_term_relative_deviation,
    random_flux, synthetic_mesh, UnstructuredColumnMesh,
};
use workbench_core::legendre::build_legendre_table;
use workbench_core::optics::{
    correlate_4f, encode_on_slm, fidelity, lens_ft, make_filter, quantize_camera, ComplexField, CorrelatorConfig,
    OperatingCurve, SlmModel,
};
use workbench_core::roofline::{attainable, batch_slowdown, classify, KernelMeasurement, MachineModel};
use workbench_core::spectral::{forward_transform, forward_transform_gemm, grid_mean_square, inverse_transform, spectral_energy};
use workbench_core::sphere_grid::{build_gaussian_grid, random_spectral_field, Truncation};

fn random_field(h: usize, w: usize, seed: u64) -> ComplexField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..h * w)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    ComplexField::from_samples(h, w, samples).unwrap()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `integral_{-1}^{1} x^k dx`.
fn monomial_integral(k: usize) -> f64 {
    if k % 2 == 1 {
        0.0
    } else {
        2.0 / (k as f64 + 1.0)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gauss_quadrature_integrates_polynomials(nlat in 1usize..40, seed in any::<u64>()) {
        let grid = build_gaussian_grid(nlat, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<f64> = (0..2 * nlat).map(|_| rng.random_range(-1.0..1.0)).collect();
        let exact: f64 = coeffs.iter().enumerate().map(|(k, c)| c * monomial_integral(k)).sum();
        let quad: f64 = grid
            .mu
            .iter()
            .zip(&grid.weights)
            .map(|(&x, &w)| w * coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c))
            .sum();
        let scale = coeffs.iter().enumerate().map(|(k, c)| (c * monomial_integral(k)).abs()).sum::<f64>().max(1e-300);
        prop_assert!((quad - exact).abs() <= 1e-11 * scale.max(exact.abs()), "nlat {} quad {} exact {}", nlat, quad, exact);
    }

    #[test]
    fn grid_builds_are_bit_identical(nlat in 1usize..64, nlon in 1usize..64) {
        let a = build_gaussian_grid(nlat, nlon).unwrap();
        let b = build_gaussian_grid(nlat, nlon).unwrap();
        prop_assert!(a.mu.iter().zip(&b.mu).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.weights.iter().zip(&b.weights).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn spectral_roundtrip_and_parseval(m_max in 0usize..16, extra_lat in 0usize..4, extra_lon in 0usize..6, seed in any::<u64>()) {
        let trunc = Truncation::new(m_max);
        let nlat = m_max + 1 + extra_lat;
        let nlon = 2 * m_max + 1 + extra_lon;
        let grid = build_gaussian_grid(nlat, nlon).unwrap();
        let table = build_legendre_table(trunc, &grid).unwrap();
        let spec = random_spectral_field(trunc, 2, seed).unwrap();
        let field = inverse_transform(&spec, &grid, &table).unwrap();
        let back = forward_transform(&field, &grid, &table).unwrap();
        prop_assert!(spec.max_abs_diff(&back).unwrap() < 1e-11);
        let ms = grid_mean_square(&field, &grid).unwrap();
        let energy = spectral_energy(&spec);
        for (a, b) in ms.iter().zip(&energy) {
            prop_assert!((a - b).abs() <= 1e-10 * b.max(1.0));
        }
    }

    #[test]
    fn grid_projection_is_idempotent(m_max in 0usize..10, seed in any::<u64>()) {
        let trunc = Truncation::new(m_max);
        let grid = build_gaussian_grid(m_max + 2, 2 * m_max + 3).unwrap();
        let table = build_legendre_table(trunc, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.nlat * grid.nlon).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw = workbench_core::sphere_grid::GridField::from_values(grid.nlat, grid.nlon, 1, values).unwrap();
        let once = inverse_transform(&forward_transform(&raw, &grid, &table).unwrap(), &grid, &table).unwrap();
        let twice = inverse_transform(&forward_transform(&once, &grid, &table).unwrap(), &grid, &table).unwrap();
        for (a, b) in once.values.iter().zip(&twice.values) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_path_matches_direct_path(m_max in 0usize..14, nlev in 1usize..4, seed in any::<u64>()) {
        let trunc = Truncation::new(m_max);
        let grid = build_gaussian_grid(m_max + 2, 2 * m_max + 2).unwrap();
        let table = build_legendre_table(trunc, &grid).unwrap();
        let spec = random_spectral_field(trunc, nlev, seed).unwrap();
        let field = inverse_transform(&spec, &grid, &table).unwrap();
        let direct = forward_transform(&field, &grid, &table).unwrap();
        for layout in [Layout::Direct, Layout::Transposed] {
            let gemm = forward_transform_gemm(&field, &grid, &table, layout).unwrap();
            for (a, b) in direct.coeff.iter().zip(&gemm.coeff) {
                prop_assert!((a - b).norm() <= 1e-13 * a.norm().max(1e-300) || (a - b).norm() == 0.0);
            }
        }
    }

    #[test]
    fn padded_batch_matches_members(count in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let members: Vec<(Matrix, Matrix)> = (0..count)
            .map(|_| {
                let (r, k, c) = (rng.random_range(1..=12), rng.random_range(1..=12), rng.random_range(1..=12));
                (random_matrix(r, k, &mut rng), random_matrix(k, c, &mut rng))
            })
            .collect();
        let batch = pad_batch(&members).unwrap();
        let overhead = batch.padding_overhead();
        prop_assert!(overhead.overhead_ratio >= 1.0);
        let uniform = members.iter().all(|(a, b)| {
            (a.rows(), a.cols(), b.cols()) == (members[0].0.rows(), members[0].0.cols(), members[0].1.cols())
        });
        prop_assert_eq!(overhead.overhead_ratio == 1.0, uniform);
        for layout in [Layout::Direct, Layout::Transposed] {
            for ((a, b), got) in members.iter().zip(batch.batched_multiply(layout)) {
                let want = multiply(a, b).unwrap();
                for (x, y) in want.data().iter().zip(got.data()) {
                    prop_assert!((x - y).abs() <= 1e-13 * x.abs().max(1e-300) || x == y);
                }
            }
        }
    }

    #[test]
    fn restructured_kernel_matches_reference(nodes in 2usize..40, levels in 1usize..10, edges in 0usize..80, seed in any::<u64>()) {
        let mesh = synthetic_mesh(nodes, levels, edges, seed).unwrap();
        let flux = random_flux(&mesh, seed ^ 0x5eed);
        let a = compute_fluxzdiv_reference(&mesh, &flux).unwrap();
        let b = compute_fluxzdiv_restructured(&mesh, &flux).unwrap();
        prop_assert!(max_term_relative_deviation(&mesh, &flux, &a, &b).unwrap() <= 1e-14);
    }

    #[test]
    fn adding_an_edge_never_lowers_traffic(nodes in 2usize..30, levels in 1usize..8, edges in 0usize..50, seed in any::<u64>(), a in any::<usize>(), b in any::<usize>()) {
        let mesh = synthetic_mesh(nodes, levels, edges, seed).unwrap();
        let before = kernel_traffic_model(&mesh);
        let (a, b) = (a % nodes, b % nodes);
        let mut node2edges = mesh.node2edges.clone();
        let mut signs = mesh.node2edge_sign.clone();
        node2edges[a].push(edges);
        signs[a].push(1.0);
        node2edges[b].push(edges);
        signs[b].push(-1.0);
        let grown = UnstructuredColumnMesh::new(levels, edges + 1, node2edges, signs, mesh.pvol.clone(), mesh.dz).unwrap();
        let after = kernel_traffic_model(&grown);
        prop_assert!(after.flops >= before.flops);
        prop_assert!(after.bytes >= before.bytes);
    }

    #[test]
    fn roof_is_monotone_and_capped(peak in 1.0f64..1e13, bw in 1.0f64..1e12, oi_a in 1e-4f64..1e4, oi_b in 1e-4f64..1e4) {
        let m = MachineModel::new("m", peak, bw).unwrap();
        let (lo, hi) = if oi_a <= oi_b { (oi_a, oi_b) } else { (oi_b, oi_a) };
        prop_assert!(attainable(&m, lo) <= attainable(&m, hi));
        prop_assert!(attainable(&m, hi) <= peak);
        let ridge = peak / bw;
        prop_assert_eq!(attainable(&m, ridge.max(hi) * 1.5), peak);
    }

    #[test]
    fn slowdown_decreases_in_batches(log_n in 1.0f64..9.0, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let n = 10f64.powf(log_n);
        let (p, q) = (n.powf(u.min(v)), n.powf(u.max(v)));
        let (sp, sq) = (batch_slowdown(n, p).unwrap(), batch_slowdown(n, q).unwrap());
        prop_assert!((0.0..=1.0).contains(&sp) && (0.0..=1.0).contains(&sq));
        if q > p * (1.0 + 1e-9) {
            prop_assert!(sq < sp);
        }
    }

    #[test]
    fn classification_is_scale_free(flops in 1.0f64..1e12, bytes in 1.0f64..1e12, secs in 1e-6f64..1e3, k in 1e-3f64..1e3) {
        let m = MachineModel::new("m", 4.7e12, 5.21e11).unwrap();
        let a = classify(&KernelMeasurement::new("a", flops, bytes, secs).unwrap(), &m).unwrap();
        let repeated = classify(&KernelMeasurement::new("b", flops * k, bytes * k, secs * k).unwrap(), &m).unwrap();
        prop_assert!((a.fraction_of_roof - repeated.fraction_of_roof).abs() <= 1e-12 * a.fraction_of_roof);
        prop_assert_eq!(a.regime, repeated.regime);
        // Above the ridge the roof is flat, so flops and time alone may scale.
        let heavy = bytes.min(flops / (2.0 * 9.03));
        let c = classify(&KernelMeasurement::new("c", flops, heavy, secs).unwrap(), &m).unwrap();
        let d = classify(&KernelMeasurement::new("d", flops * k, heavy, secs * k).unwrap(), &m).unwrap();
        if d.regime == workbench_core::roofline::Regime::ComputeBound {
            prop_assert!((c.fraction_of_roof - d.fraction_of_roof).abs() <= 1e-12 * c.fraction_of_roof);
        }
    }

    #[test]
    fn lens_ft_is_unitary_with_period_four(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let f = random_field(h, w, seed);
        let g = lens_ft(&f);
        prop_assert!((g.norm_sqr() - f.norm_sqr()).abs() <= 1e-12 * f.norm_sqr());
        let four = lens_ft(&lens_ft(&lens_ft(&g)));
        for (a, b) in f.samples().iter().zip(four.samples()) {
            prop_assert!((a - b).norm() <= 1e-11);
        }
    }

    #[test]
    fn encoding_is_idempotent(seed in any::<u64>(), scale in 0.01f64..5.0, preset in 0usize..4) {
        let curve = OperatingCurve::preset(["coupled", "unit-circle", "binary", "half-circle"][preset]).unwrap();
        let f = random_field(9, 7, seed).scaled(Complex64::new(scale, 0.0));
        let (once, idx) = encode_on_slm(&f, &curve);
        let (twice, idx2) = encode_on_slm(&once, &curve);
        prop_assert_eq!(once, twice);
        prop_assert_eq!(idx, idx2);
    }

    #[test]
    fn gamma_search_never_loses_to_identity(seed in any::<u64>()) {
        let curve = OperatingCurve::unit_circle();
        let target = random_field(8, 8, seed);
        let f = make_filter(&target, &SlmModel::Curve(curve.clone())).unwrap();
        let plain = encode_on_slm(&f.ideal, &curve).0;
        prop_assert!(f.fidelity >= fidelity(&f.ideal, &plain));
    }

    #[test]
    fn intensity_is_nonnegative_and_camera_monotone(seed in any::<u64>(), bits in prop::sample::select(vec![0u32, 8, 12, 16]), sigma in 0.0f64..0.5) {
        let a = random_field(8, 8, seed);
        let b = random_field(8, 8, seed.wrapping_add(1));
        let mut cfg = CorrelatorConfig::ideal(8, 8);
        cfg.camera_bits = bits;
        cfg.noise_sigma = sigma;
        cfg.rng_seed = seed;
        let out = correlate_4f(&a, &b, &cfg).unwrap();
        prop_assert!(out.intensity.iter().all(|&v| v >= 0.0));

        let raw: Vec<f64> = out.field.samples().iter().map(|z| z.norm_sqr()).collect();
        let mut quantized = raw.clone();
        quantize_camera(&mut quantized, if bits == 0 { 8 } else { bits });
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                if raw[i] <= raw[j] {
                    prop_assert!(quantized[i] <= quantized[j]);
                }
            }
        }
    }
}
