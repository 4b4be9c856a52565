//! Invariants checked over random inputs.

use num_complex::{Complex32, Complex64};
use proptest::prelude::*;

use volbeam::acquisition::{required_band, sample_budget, BandAcquirer, BudgetMethod, NuConvention};
use volbeam::fdbf::{lut_hash, pulse_band, DistortionLut, KappaSelection, LutParams};
use volbeam::fri::{build_system, solve_l1, SolverParams};
use volbeam::geometry::beam_support;
use volbeam::io;
use volbeam::metrics::{beam_snr, fwhm};
use volbeam::phantom::{synthesize_element_signals, ElementRecord, NoiseSpec, Phantom};
use volbeam::pipeline::bilinear;
use volbeam::pulse::make_pulse;
use volbeam::{ArrayGeometry, Element, SamplingGrid, ScanPattern, SteeringAngle};

const C: f64 = 1540.0;
const FS: f64 = 18.25e6;

fn geometry() -> impl Strategy<Value = ArrayGeometry> {
    (2usize..40, 2usize..40, 50e-6..300e-6f64, 50e-6..300e-6f64)
        .prop_map(|(r, c, px, py)| ArrayGeometry::planar(r, c, px, py, C).unwrap())
}

fn angle() -> impl Strategy<Value = SteeringAngle> {
    (-0.6..0.6f64, -0.6..0.6f64).prop_map(|(x, y)| SteeringAngle::new(x, y).unwrap())
}

fn element_of(g: &ArrayGeometry, a: f64, b: f64) -> Element {
    Element::new(
        ((a * g.rows() as f64) as usize).min(g.rows() - 1),
        ((b * g.cols() as f64) as usize).min(g.cols() - 1),
    )
}

proptest! {
    #[test]
    fn delay_inverse_round_trip(g in geometry(), th in angle(), a in 0.0..1.0f64, b in 0.0..1.0f64, t in 0.0..2e-4f64) {
        let law = g.delay_law(element_of(&g, a, b), th);
        let back = law.tau_inverse(law.tau(t)).unwrap();
        prop_assert!((back - t).abs() <= 1e-9);
        prop_assert!((back - t).abs() <= 1e-12 * t.max(1e-6));
    }

    #[test]
    fn delay_is_monotone_with_bounded_slope(g in geometry(), th in angle(), a in 0.0..1.0f64, b in 0.0..1.0f64, t in 1e-7..2e-4f64) {
        let law = g.delay_law(element_of(&g, a, b), th);
        let d = law.tau_derivative(t);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!(law.tau(t * 1.01) >= law.tau(t));
        prop_assert!(law.tau(t) >= law.gamma_norm() - 1e-18);
        prop_assert!(law.tau(t) >= t / 2.0);
    }

    #[test]
    fn support_bound_fits_the_record(g in geometry(), th in angle(), depth in 0.02..0.1f64) {
        let period = 2.0 * depth / C;
        let tb = beam_support(&g, th, period).unwrap();
        prop_assert!(tb <= period);
        prop_assert!(tb > 0.0);
        for &e in g.active() {
            prop_assert!(g.delay_law(e, th).tau(tb) <= period * (1.0 + 1e-14));
        }
    }

    #[test]
    fn band_acquisition_is_exact(
        x in prop::collection::vec(-1.0..1.0f64, 16..160),
        a in 0.0..1.0f64,
        w in 0.0..1.0f64,
    ) {
        let n = x.len();
        let lo = ((a * n as f64) as usize).min(n - 1);
        let hi = (lo + (w * (n - lo) as f64) as usize).min(n - 1);
        let acq = BandAcquirer::new(n, lo, hi).unwrap();
        let rec = ElementRecord { element: Element::new(0, 0), samples: x.clone(), noise_std: None };
        let band = acq.acquire(&rec).unwrap();
        prop_assert_eq!(band.nu(), hi - lo + 1);
        prop_assert_eq!(acq.low_rate_samples(&x).unwrap().len(), hi - lo + 1);
        let full = volbeam::spectrum::coefficients(&x);
        for (k, v) in full.iter().enumerate().take(hi + 1).skip(lo) {
            prop_assert!((band.get(k as i64).unwrap() - v).norm() < 1e-12);
        }
        prop_assert!(band.get(lo as i64 - 1).is_err());
        prop_assert!(band.get(hi as i64 + 1).is_err());
    }

    #[test]
    fn required_band_covers_every_consumed_index(k1 in 20usize..200, width in 0usize..100, l1 in 0usize..20, l2 in 0usize..20) {
        let k2 = k1 + width;
        let (lo, hi) = required_band(k1, k2, l1, l2, 1304).unwrap();
        let mut used = std::collections::BTreeSet::new();
        for k in k1..=k2 {
            for l in -(l1 as i64)..=(l2 as i64) {
                used.insert(k as i64 - l);
            }
        }
        prop_assert_eq!(*used.first().unwrap(), lo as i64);
        prop_assert_eq!(*used.last().unwrap(), hi as i64);
        prop_assert_eq!(used.len(), NuConvention::Text.nu(width + 1, l1, l2));
        prop_assert_eq!(NuConvention::PlusOne.nu(width + 1, l1, l2), used.len() + 1);
    }

    #[test]
    fn budgets_scale_linearly(n_rx in 1usize..2000, lines in 1usize..500, k in 1usize..300, l in 0usize..20) {
        let time = sample_budget(BudgetMethod::Time, n_rx, lines, 1304, k, l, l, NuConvention::Text);
        prop_assert_eq!(time, (n_rx * lines * 1304) as u64);
        let text = sample_budget(BudgetMethod::Frequency, n_rx, lines, 1304, k, l, l, NuConvention::Text);
        let plus = sample_budget(BudgetMethod::Frequency, n_rx, lines, 1304, k, l, l, NuConvention::PlusOne);
        prop_assert_eq!(text, (n_rx * lines * (k + 2 * l)) as u64);
        prop_assert_eq!(plus - text, (n_rx * lines) as u64);
    }

    #[test]
    fn fwhm_scales_with_the_abscissa(width in 0.5..5.0f64, centre in -3.0..3.0f64, s in 0.2..5.0f64) {
        let x: Vec<f64> = (0..401).map(|i| -10.0 + 0.05 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (-(v - centre).powi(2) / (2.0 * width * width)).exp()).collect();
        let sx: Vec<f64> = x.iter().map(|v| v * s).collect();
        let a = fwhm(&x, &y).unwrap();
        let b = fwhm(&sx, &y).unwrap();
        prop_assert!((b - s * a).abs() < 1e-9 * b.max(1.0));
        let exact = 2.0 * (2.0 * 2f64.ln()).sqrt() * width;
        prop_assert!((a - exact).abs() < 0.01 * exact);
    }

    #[test]
    fn doubling_noise_costs_six_decibels(seed in 0u64..1000, scale in 1e-3..1.0f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let clean: Vec<f64> = (0..400).map(|i| (-(i as f64 - 200.0).powi(2) / 50.0).exp()).collect();
        let noise: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let once: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + n).collect();
        let twice: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + 2.0 * n).collect();
        let d = beam_snr(&clean, &once, 61).unwrap() - beam_snr(&clean, &twice, 61).unwrap();
        prop_assert!((d - 20.0 * 2f64.log10()).abs() < 0.1);
    }

    #[test]
    fn interpolation_keeps_peak_positions(p1 in 2usize..20, gap in 4usize..20, a1 in 0.3..1.0f64, a2 in 0.3..1.0f64) {
        let p2 = p1 + gap;
        let mut line = vec![0.0; 48];
        line[p1] = a1;
        line[p2] = a2;
        let grid = vec![line.clone(), line];
        let up: Vec<f64> = (0..=47 * 4).map(|i| bilinear(&grid, 0.5, i as f64 / 4.0)).collect();
        let local_max: Vec<usize> = (1..up.len() - 1)
            .filter(|&i| up[i] > up[i - 1] && up[i] >= up[i + 1])
            .map(|i| i / 4)
            .collect();
        prop_assert_eq!(local_max, vec![p1, p2]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn measurement_adjoint_pairs_with_forward(
        seed in 0u64..1000,
        sel in prop::sample::select(vec![KappaSelection::Full, KappaSelection::Half, KappaSelection::Third]),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pulse = make_pulse(3e6, 1.4e6, FS).unwrap();
        let n = 1304;
        let kappa = pulse_band(&pulse, n, 24.0).unwrap().select(&sel).unwrap();
        let sys = build_system(&pulse, &kappa, n).unwrap();
        let b: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let y: Vec<Complex64> = (0..kappa.len()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let lhs: Complex64 = sys.apply(&b).iter().zip(&y).map(|(a, y)| a * y.conj()).sum();
        let rhs: Complex64 = b.iter().zip(sys.adjoint(&y)).map(|(b, z)| b * z.conj()).sum();
        prop_assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn solver_is_feasible_or_flagged(seed in 0u64..10_000, iters in 1usize..400, frac in 0.0..0.2f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pulse = make_pulse(3e6, 1.4e6, FS).unwrap();
        let n = 1304;
        let kappa = pulse_band(&pulse, n, 24.0).unwrap().select(&KappaSelection::Third).unwrap();
        let sys = build_system(&pulse, &kappa, n).unwrap();
        let c: Vec<Complex64> = (0..kappa.len()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-3).collect();
        let eps = frac * c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let params = SolverParams { max_iterations: iters, ..SolverParams::default() };
        let out = solve_l1(&sys, &c, eps, &params).unwrap();
        let r: f64 = sys.apply(&out.b).iter().zip(&c).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!((r - out.residual).abs() <= 1e-9 * r.max(1e-12) + 1e-15);
        prop_assert!(!out.converged || r <= eps);
        let again = solve_l1(&sys, &c, eps, &params).unwrap();
        prop_assert_eq!(out.b, again.b);
    }

    #[test]
    fn lut_file_round_trips(seed in 0u64..1000, n_k in 1usize..5, l in 0usize..4) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = ArrayGeometry::planar(2, 3, 1e-4, 1e-4, C).unwrap();
        let scan = ScanPattern::raster(2, 1, 0.1, 0.0, 7e-5).unwrap();
        let params = LutParams { l1: l, l2: l + 1, oversample: 4.0 };
        let kappa: Vec<usize> = (0..n_k).map(|i| 100 + 3 * i).collect();
        let len = scan.len() * g.n_rx() * n_k * params.width();
        let lut = DistortionLut {
            params,
            kappa: kappa.clone(),
            n_angles: scan.len(),
            n_elements: g.n_rx(),
            hash: lut_hash(&g, &scan, &kappa, params),
            data: (0..len).map(|_| Complex32::new(rng.random(), rng.random())).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vbq");
        io::write_lut(&path, &lut).unwrap();
        let back = io::read_lut(&path).unwrap();
        prop_assert_eq!(&back, &lut);
        back.check(&g, &scan).unwrap();
    }

    #[test]
    fn volume_file_round_trips(nx in 1usize..4, ny in 1usize..4, n in 1usize..40, seed in 0u64..100) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v = io::VolumeFile {
            theta_x: (0..nx).map(|i| 0.01 * i as f64).collect(),
            theta_y: (0..ny).map(|i| -0.02 * i as f64).collect(),
            n_samples: n,
            fs: FS,
            label: format!("v{seed}"),
            voxels: (0..nx * ny * n).map(|_| rng.random()).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vbv");
        io::write_volume(&path, &v).unwrap();
        prop_assert_eq!(io::read_volume(&path).unwrap(), v);
    }
}

#[test]
fn lut_hash_tracks_every_input() {
    let g = ArrayGeometry::planar(4, 4, 140e-6, 140e-6, C).unwrap();
    let scan = ScanPattern::raster(3, 3, 0.1, 0.1, 7e-5).unwrap();
    let params = LutParams::default();
    let kappa = [150, 151];
    let base = lut_hash(&g, &scan, &kappa, params);
    assert_eq!(base, lut_hash(&g, &scan, &kappa, params));
    let g2 = ArrayGeometry::planar(4, 4, 141e-6, 140e-6, C).unwrap();
    let g3 = g.clone().with_active(vec![Element::new(0, 0), Element::new(1, 1)]).unwrap();
    let scan2 = ScanPattern::raster(3, 3, 0.1, 0.11, 7e-5).unwrap();
    let p2 = LutParams { l1: 9, ..params };
    for other in [
        lut_hash(&g2, &scan, &kappa, params),
        lut_hash(&g3, &scan, &kappa, params),
        lut_hash(&g, &scan2, &kappa, params),
        lut_hash(&g, &scan, &[150, 152], params),
        lut_hash(&g, &scan, &kappa, p2),
    ] {
        assert_ne!(base, other);
    }
}

#[test]
fn noise_streams_are_reproducible_and_distinct() {
    let g = ArrayGeometry::planar(3, 3, 140e-6, 140e-6, C).unwrap();
    let pulse = make_pulse(3e6, 1.4e6, FS).unwrap();
    let grid = SamplingGrid::for_depth(0.055, C, FS).unwrap();
    let ph = Phantom::single_point(0.03, C);
    let a = SteeringAngle::broadside();
    let sim = |noise| synthesize_element_signals(&g, &ph, &pulse, grid, a, noise).unwrap();
    let r1 = sim(NoiseSpec::new(0.1, 5).with_stream(2));
    let r2 = sim(NoiseSpec::new(0.1, 5).with_stream(2));
    let r3 = sim(NoiseSpec::new(0.1, 5).with_stream(3));
    let r4 = sim(NoiseSpec::new(0.1, 6).with_stream(2));
    assert_eq!(r1, r2);
    assert_ne!(r1[0].samples, r3[0].samples);
    assert_ne!(r1[0].samples, r4[0].samples);
    assert_ne!(r1[0].samples, r1[1].samples);
}

#[test]
fn effective_band_is_contiguous_around_the_peak() {
    let pulse = make_pulse(3e6, 1.4e6, FS).unwrap();
    let n = 1304;
    let band = pulse_band(&pulse, n, 24.0).unwrap();
    let h = pulse.fourier_coefficients(n);
    let peak = h[..n / 2].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = peak * 10f64.powf(-24.0 / 20.0);
    for k in band.indices() {
        assert!(h[k].norm() >= floor);
    }
    assert!(h[band.k1 - 1].norm() < floor);
    assert!(h[band.k2 + 1].norm() < floor);
    assert_eq!((band.k1, band.k2, band.len()), (115, 314, 200));
    for (sel, len) in [(KappaSelection::Half, 100), (KappaSelection::Third, 67), (KappaSelection::Count(10), 10)] {
        let ks = band.select(&sel).unwrap();
        assert_eq!(ks.len(), len);
        assert!(ks.windows(2).all(|w| w[1] == w[0] + 1));
        assert!(ks.iter().all(|&k| band.contains(k)));
        assert!(ks.contains(&band.peak));
    }
}
