//! Library outputs checked against independent brute-force computations.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};

use volbeam::acquisition::{BandAcquirer, CoefficientBand};
use volbeam::fdbf::{element_lut, element_to_beam_coeffs, DistortionKernel, LutParams};
use volbeam::fri::build_system;
use volbeam::geometry::{beam_support, delay_tau, delay_tau_inverse};
use volbeam::phantom::{synthesize_element_signals, ElementRecord, NoiseSpec, Phantom, Reflector};
use volbeam::pulse::make_pulse;
use volbeam::time_bf::{beamform_time, Interpolation};
use volbeam::{ArrayGeometry, Element, SamplingGrid, SteeringAngle};

const C: f64 = 1540.0;
const FS: f64 = 18.25e6;

fn grid() -> SamplingGrid {
    SamplingGrid::for_depth(0.055, C, FS).unwrap()
}

fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// Composite Simpson rule on `[a, b]` with `panels` (even) intervals.
fn simpson(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> Complex64) -> Complex64 {
    let h = (b - a) / panels as f64;
    let mut s = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += f(a + i as f64 * h) * w;
    }
    s * h / 3.0
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Round trip of a pulse through a reflector at direction `dir`, depth `c t / 2`.
fn geometric_delay(offset: [f64; 3], dir: [f64; 3], t: f64) -> f64 {
    let p: Vec<f64> = dir.iter().map(|d| d * C * t / 2.0).collect();
    let back = (0..3).map(|i| (p[i] - offset[i]).powi(2)).sum::<f64>().sqrt();
    t / 2.0 + back / C
}

fn unit(theta_x: f64, theta_y: f64) -> [f64; 3] {
    // Intersection of the planes at θx about y and θy about x, normalised.
    let v = [theta_x.tan(), theta_y.tan(), 1.0];
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

#[test]
fn direction_cosines_match_plane_intersection() {
    for (tx, ty) in [(0.0, 0.0), (0.2, -0.1), (-0.35, 0.3), (0.12, 0.4)] {
        let a = SteeringAngle::new(tx, ty).unwrap().direction_cosines();
        let b = unit(tx, ty);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12, "{tx} {ty}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn delay_matches_round_trip_geometry() {
    let g = ArrayGeometry::planar(32, 32, 140e-6, 140e-6, C)
        .unwrap()
        .with_z_offsets((0..1024).map(|i| 1e-5 * ((i % 7) as f64 - 3.0)).collect())
        .unwrap();
    for (tx, ty) in [(0.0, 0.0), (0.12, -0.05), (-0.124, 0.124), (0.3, 0.2)] {
        let angle = SteeringAngle::new(tx, ty).unwrap();
        for e in [Element::new(0, 0), Element::new(31, 3), Element::new(16, 16), Element::new(7, 29)] {
            for t in [1e-6, 1e-5, 4.1e-5, 7.1e-5] {
                let ours = delay_tau(&g, e, angle, t).unwrap();
                let oracle = geometric_delay(g.offsets(e), unit(tx, ty), t);
                assert!((ours - oracle).abs() < 1e-14, "{ours} vs {oracle}");
            }
        }
    }
}

#[test]
fn inverse_delay_matches_bisection() {
    let g = ArrayGeometry::planar(32, 32, 140e-6, 140e-6, C).unwrap();
    let angle = SteeringAngle::new(0.28, 0.36).unwrap();
    for e in [Element::new(7, 21), Element::new(0, 31), Element::new(31, 0)] {
        let law = g.delay_law(e, angle);
        for t in [law.gamma_norm() * 1.5, 5e-6, 3e-5, 7e-5] {
            let (mut lo, mut hi) = (0.0, 1e-3);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if law.tau(mid) < t {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let ours = delay_tau_inverse(&g, e, angle, t).unwrap();
            assert!((ours - lo).abs() < 1e-15, "{ours} vs {lo}");
        }
    }
}

#[test]
fn support_bound_is_the_smallest_inverse() {
    let g = ArrayGeometry::planar(8, 8, 140e-6, 140e-6, C).unwrap();
    let period = grid().period();
    let angle = SteeringAngle::new(-0.1, 0.05).unwrap();
    let tb = beam_support(&g, angle, period).unwrap();
    let oracle = g
        .active()
        .iter()
        .map(|&e| {
            let mut lo = 0.0;
            let mut hi = 2.0 * period;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if geometric_delay(g.offsets(e), unit(-0.1, 0.05), mid) < period {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        })
        .fold(f64::INFINITY, f64::min);
    assert!((tb - oracle).abs() < 1e-13);
}

/// `Q_k[l]` by dense Simpson quadrature of the literal distortion function
/// over its support `[|γ|, τ(T_B))` in element time.
fn dense_q(kernel: &DistortionKernel, period: f64, k: usize, l: i64) -> Complex64 {
    let law = kernel.law();
    let a = law.gamma_norm();
    let b = law.tau(kernel.support());
    simpson(a + 1e-18, b - 1e-18, 400_000, |t| {
        kernel.eval(k as i64, t) * cis(-2.0 * PI * l as f64 * t / period)
    }) / period
}

#[test]
fn lut_matches_dense_quadrature_of_the_distortion_function() {
    let g = ArrayGeometry::planar(32, 32, 140e-6, 140e-6, C).unwrap();
    let period = grid().period();
    let params = LutParams::default();
    let kappa = [115usize, 214, 314];
    for (e, angle) in [
        (Element::new(7, 21), SteeringAngle::new(0.28, 0.36).unwrap()),
        (Element::new(0, 0), SteeringAngle::new(-0.12, 0.12).unwrap()),
        (Element::new(20, 9), SteeringAngle::broadside()),
    ] {
        let kernel = DistortionKernel::for_element(&g, e, angle, period).unwrap();
        let lut = element_lut(&kernel, &kappa, params).unwrap();
        let width = params.width();
        for (ki, &k) in kappa.iter().enumerate() {
            for l in [-10i64, -3, 0, 1, 7, 10] {
                let ours = lut[ki * width + (l + params.l1 as i64) as usize];
                let oracle = dense_q(&kernel, period, k, l);
                assert!(
                    (ours - oracle).norm() < 1e-7,
                    "k={k} l={l}: {ours} vs {oracle}"
                );
            }
        }
    }
}

#[test]
fn lut_of_the_reference_point_is_a_gated_identity() {
    // τ(t) = t: Q_k[l] = (1/T) ∫_0^{T_B} e^{−i2πlt/T} dt.
    let g = ArrayGeometry::planar(3, 3, 140e-6, 140e-6, C).unwrap();
    let period = grid().period();
    let kernel = DistortionKernel::for_element(&g, Element::new(1, 1), SteeringAngle::broadside(), period).unwrap();
    let tb = kernel.support();
    let params = LutParams::default();
    let lut = element_lut(&kernel, &[200], params).unwrap();
    for (li, q) in lut.iter().enumerate() {
        let l = li as f64 - params.l1 as f64;
        let exact = if l == 0.0 {
            Complex64::new(tb / period, 0.0)
        } else {
            let w = -2.0 * PI * l / period;
            (cis(w * tb) - 1.0) / Complex64::new(0.0, w) / period
        };
        assert!((q - exact).norm() < 1e-12, "l={l}: {q} vs {exact}");
    }
}

#[test]
fn acquired_band_matches_full_rate_dft() {
    let n = grid().n_samples;
    let x: Vec<f64> = (0..n)
        .map(|j| ((j * 7919) % 113) as f64 / 113.0 - 0.5 + (0.3 * j as f64).sin())
        .collect();
    let record = ElementRecord {
        element: Element::new(0, 0),
        samples: x.clone(),
        noise_std: None,
    };
    for (lo, hi) in [(105, 324), (0, 9), (600, 651), (1290, 1303)] {
        let acq = BandAcquirer::new(n, lo, hi).unwrap();
        assert_eq!(acq.nu(), hi - lo + 1);
        let band = acq.acquire(&record).unwrap();
        for k in lo..=hi {
            let oracle: Complex64 = x
                .iter()
                .enumerate()
                .map(|(j, &v)| v * cis(-2.0 * PI * ((k * j) % n) as f64 / n as f64))
                .sum::<Complex64>()
                / n as f64;
            let got = band.get(k as i64).unwrap();
            assert!((got - oracle).norm() < 1e-12, "k={k}: {got} vs {oracle}");
        }
    }
}

#[test]
fn measurement_operator_matches_direct_sum() {
    let pulse = make_pulse(3e6, 1.4e6, FS).unwrap();
    let n = grid().n_samples;
    let h = pulse.fourier_coefficients(n);
    let kappa: Vec<usize> = (165..265).collect();
    let sys = build_system(&pulse, &kappa, n).unwrap();
    let mut b = vec![Complex64::new(0.0, 0.0); n];
    b[616] = Complex64::new(1.0, 0.2);
    b[747] = Complex64::new(-0.4, 0.0);
    b[1100] = Complex64::new(0.0, 0.7);
    let c = sys.apply(&b);
    for (i, &k) in kappa.iter().enumerate() {
        let oracle: Complex64 = b
            .iter()
            .enumerate()
            .map(|(l, v)| v * h[k] * cis(-2.0 * PI * ((k * l) % n) as f64 / n as f64))
            .sum();
        assert!((c[i] - oracle).norm() < 1e-12 * (1.0 + oracle.norm()));
    }
    // Adjoint: <A b, y> = <b, A* y>.
    let y: Vec<Complex64> = (0..kappa.len()).map(|i| cis(0.37 * i as f64) * (1.0 + i as f64 / 50.0)).collect();
    let lhs: Complex64 = c.iter().zip(&y).map(|(a, y)| a * y.conj()).sum();
    let aty = sys.adjoint(&y);
    let rhs: Complex64 = b.iter().zip(&aty).map(|(b, z)| b * z.conj()).sum();
    assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
}

#[test]
fn pulse_coefficients_are_the_scaled_dft_of_its_samples() {
    let pulse = make_pulse(3e6, 1.4e6, FS).unwrap();
    let n = grid().n_samples;
    let h = pulse.fourier_coefficients(n);
    let s = pulse.samples();
    for k in [0usize, 115, 164, 314, 651] {
        let oracle: Complex64 = s
            .iter()
            .enumerate()
            .map(|(j, &v)| v * cis(-2.0 * PI * ((k * j) % n) as f64 / n as f64))
            .sum::<Complex64>()
            / n as f64;
        assert!((h[k] - oracle).norm() < 1e-14);
    }
    assert!((s.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn element_to_beam_coefficient_matches_quadrature_of_the_aligned_signal() {
    // An analytic element signal confined to [k − L2, k + L1] makes the
    // truncated convolution exact, so it must equal the Fourier coefficient
    // of the gated, delayed signal.
    let sg = grid();
    let period = sg.period();
    let n = sg.n_samples;
    let g = ArrayGeometry::planar(32, 32, 140e-6, 140e-6, C).unwrap();
    let params = LutParams::default();
    let k = 230usize;
    let lo = k - params.l2;
    let values: Vec<Complex64> = (0..params.width())
        .map(|i| cis(1.3 * i as f64) * (0.5 + (i as f64 * 0.7).cos().abs()))
        .collect();
    let band = CoefficientBand {
        element: Element::new(3, 27),
        start: lo,
        values: values.clone(),
    };
    let phi = |t: f64| -> Complex64 {
        values
            .iter()
            .enumerate()
            .map(|(i, c)| c * cis(2.0 * PI * (lo + i) as f64 * t / period))
            .sum()
    };
    for angle in [SteeringAngle::new(0.1, -0.08).unwrap(), SteeringAngle::new(-0.124, 0.124).unwrap()] {
        let kernel = DistortionKernel::for_element(&g, band.element, angle, period).unwrap();
        let law = kernel.law();
        let tb = kernel.support();
        let q: Vec<Complex32> = element_lut(&kernel, &[k], params)
            .unwrap()
            .iter()
            .map(|c| Complex32::new(c.re as f32, c.im as f32))
            .collect();
        let ours = element_to_beam_coeffs(&band, &q, params.l1, k).unwrap();
        let oracle = simpson(0.0, tb, 200_000, |t| phi(law.tau(t)) * cis(-2.0 * PI * k as f64 * t / period)) / period;
        assert!(
            (ours - oracle).norm() < 2e-6 * norm(&values),
            "{ours} vs {oracle}"
        );
        assert!(n > k);
    }
}

#[test]
fn simulated_echo_matches_round_trip_geometry() {
    let g = ArrayGeometry::planar(8, 8, 140e-6, 140e-6, C).unwrap();
    let pulse = make_pulse(3e6, 1.4e6, FS).unwrap();
    let sg = grid();
    let r = Reflector::at_depth(0.03, 4.0, -2.0, 0.8, C);
    let records = synthesize_element_signals(
        &g,
        &Phantom::new(vec![r]),
        &pulse,
        sg,
        SteeringAngle::broadside(),
        NoiseSpec::none(),
    )
    .unwrap();
    let pos = unit(4f64.to_radians(), (-2f64).to_radians()).map(|d| d * 0.03);
    for rec in &records {
        let off = g.offsets(rec.element);
        let back = (0..3).map(|i| (pos[i] - off[i]).powi(2)).sum::<f64>().sqrt();
        let arrival = 0.03 / C + back / C;
        for (j, &v) in rec.samples.iter().enumerate() {
            let oracle = 0.8 * pulse.eval(j as f64 / FS - arrival);
            assert!((v - oracle).abs() < 1e-12);
        }
    }
}

#[test]
fn time_beamformer_is_the_mean_of_delayed_reads() {
    let g = ArrayGeometry::planar(4, 4, 140e-6, 140e-6, C).unwrap();
    let pulse = make_pulse(3e6, 1.4e6, FS).unwrap();
    let sg = grid();
    let angle = SteeringAngle::new(0.05, -0.03).unwrap();
    let records = synthesize_element_signals(
        &g,
        &Phantom::three_point(C),
        &pulse,
        sg,
        angle,
        NoiseSpec::new(0.1, 3),
    )
    .unwrap();
    let interp = Interpolation::Linear;
    let beam = beamform_time(&records, &g, angle, FS, interp).unwrap();
    let tb = beam_support(&g, angle, sg.period()).unwrap();
    for j in (0..sg.n_samples).step_by(37) {
        let t = j as f64 / FS;
        let oracle = if t < tb {
            records
                .iter()
                .map(|r| {
                    let pos = delay_tau(&g, r.element, angle, t).unwrap() * FS;
                    let i = pos.floor() as usize;
                    let f = pos - i as f64;
                    if i + 1 < r.samples.len() {
                        r.samples[i] * (1.0 - f) + r.samples[i + 1] * f
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / records.len() as f64
        } else {
            0.0
        };
        assert!((beam.samples[j] - oracle).abs() < 1e-12, "j={j}");
    }
}
