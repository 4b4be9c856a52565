//! Frequency-domain beamforming: distortion-function LUT and assembly of beam
//! Fourier coefficients from element coefficients.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::CoefficientBand;
use crate::error::{invalid, Error, Result};
use crate::geometry::{beam_support, ArrayGeometry, DelayLaw, Element, ScanPattern, SteeringAngle};
use crate::pulse::Pulse;

/// Default spectral cutoff of the effective band, dB below the pulse peak.
pub const DEFAULT_BAND_CUTOFF_DB: f64 = 24.0;

/// Contiguous one-sided band `k1..=k2` of a pulse spectrum and its peak bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectiveBand {
    pub k1: usize,
    pub k2: usize,
    pub peak: usize,
}

impl EffectiveBand {
    /// `B`, the number of bins.
    pub fn len(&self) -> usize {
        self.k2 - self.k1 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> Vec<usize> {
        (self.k1..=self.k2).collect()
    }

    pub fn contains(&self, k: usize) -> bool {
        (self.k1..=self.k2).contains(&k)
    }

    /// Indices of a selection inside this band.
    pub fn select(&self, sel: &KappaSelection) -> Result<Vec<usize>> {
        let count = match sel {
            KappaSelection::Full => return Ok(self.indices()),
            KappaSelection::Half => (self.len() as f64 / 2.0).round() as usize,
            KappaSelection::Third => (self.len() as f64 / 3.0).round() as usize,
            KappaSelection::Count(c) => *c,
            KappaSelection::Explicit(ks) => {
                let mut v = ks.clone();
                v.sort_unstable();
                v.dedup();
                if v.is_empty() {
                    return Err(invalid("explicit coefficient set is empty"));
                }
                return Ok(v);
            }
        };
        if count == 0 || count > self.len() {
            return Err(invalid(format!(
                "cannot select {count} coefficients from a band of {}",
                self.len()
            )));
        }
        let start = (self.peak as i64 - count as i64 / 2)
            .clamp(self.k1 as i64, (self.k2 + 1 - count) as i64) as usize;
        Ok((start..start + count).collect())
    }
}

/// Which beam Fourier coefficients are computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaSelection {
    /// The whole effective band `β`.
    Full,
    /// `round(B/2)` bins centred on the spectral peak.
    Half,
    /// `round(B/3)` bins centred on the spectral peak.
    Third,
    /// The given number of bins centred on the spectral peak.
    Count(usize),
    Explicit(Vec<usize>),
}

/// Bins whose pulse coefficient magnitude is within `cutoff_db` of the peak,
/// grown contiguously from the peak over the one-sided spectrum.
pub fn effective_band(h: &[Complex64], cutoff_db: f64) -> Result<EffectiveBand> {
    let n = h.len();
    if n < 4 {
        return Err(invalid("spectrum too short"));
    }
    let upper = n.div_ceil(2);
    let (peak, pmag) = (1..upper)
        .map(|k| (k, h[k].norm()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty range");
    if !(pmag > 0.0) {
        return Err(Error::Pulse("pulse spectrum is zero".into()));
    }
    let thr = pmag * 10f64.powf(-cutoff_db.abs() / 20.0);
    let mut k1 = peak;
    while k1 > 1 && h[k1 - 1].norm() >= thr {
        k1 -= 1;
    }
    let mut k2 = peak;
    while k2 + 1 < upper && h[k2 + 1].norm() >= thr {
        k2 += 1;
    }
    Ok(EffectiveBand { k1, k2, peak })
}

/// Effective band of `pulse` over a record of `n` samples.
pub fn pulse_band(pulse: &Pulse, n: usize, cutoff_db: f64) -> Result<EffectiveBand> {
    effective_band(&pulse.fourier_coefficients(n), cutoff_db)
}

/// Geometry-dependent data of `q_{k,m,n}` for one element and angle.
#[derive(Debug, Clone, Copy)]
pub struct DistortionKernel {
    law: DelayLaw,
    period: f64,
    support: f64,
}

impl DistortionKernel {
    pub fn new(law: DelayLaw, period: f64, support: f64) -> Self {
        Self { law, period, support }
    }

    pub fn for_element(geom: &ArrayGeometry, e: Element, angle: SteeringAngle, period: f64) -> Result<Self> {
        let support = beam_support(geom, angle, period)?;
        Ok(Self::new(geom.delay_law(e, angle), period, support))
    }

    pub fn law(&self) -> DelayLaw {
        self.law
    }

    pub fn support(&self) -> f64 {
        self.support
    }

    /// `q_k(t)`: indicator of `[|γ|, τ(T_B))`, Jacobian of `τ⁻¹` and phase
    /// `exp(−i2πk(τ⁻¹(t) − t)/T)`.
    pub fn eval(&self, k: i64, t: f64) -> Complex64 {
        let g2 = self.law.norm_sq;
        let p = self.law.projection;
        if t < g2.sqrt() || t >= self.law.tau(self.support) {
            return Complex64::new(0.0, 0.0);
        }
        let den = t - p;
        if den * den < 1e-30 {
            return Complex64::new(0.0, 0.0);
        }
        let amp = (t * t + g2 - 2.0 * t * p) / (den * den);
        let phase = -2.0 * PI * k as f64 / self.period * ((t * p - g2) / den);
        Complex64::from_polar(amp, phase)
    }
}

/// `q_{k,m,n}(t; θx, θy)` for a record of period `period`.
pub fn distortion_function(
    geom: &ArrayGeometry,
    e: Element,
    angle: SteeringAngle,
    k: i64,
    t: f64,
    period: f64,
) -> Result<Complex64> {
    if !(0.0..=period).contains(&t) {
        return Err(invalid(format!("t = {t:e} outside [0, T]")));
    }
    Ok(DistortionKernel::for_element(geom, e, angle, period)?.eval(k, t))
}

/// Truncation and quadrature settings of the LUT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LutParams {
    pub l1: usize,
    pub l2: usize,
    /// Quadrature density: each 8-node panel spans at most `2 / oversample`
    /// phase cycles of the integrand.
    pub oversample: f64,
}

impl Default for LutParams {
    fn default() -> Self {
        Self {
            l1: 10,
            l2: 10,
            oversample: 4.0,
        }
    }
}

impl LutParams {
    pub fn width(&self) -> usize {
        self.l1 + self.l2 + 1
    }

    fn validate(&self) -> Result<()> {
        if !(self.oversample >= 2.0) || !self.oversample.is_finite() {
            return Err(invalid(format!(
                "oversample must be at least 2, got {}",
                self.oversample
            )));
        }
        Ok(())
    }
}

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// `Q_k[l]` for `k ∈ kappa`, `l ∈ [−L1, L2]` of one element, row-major `(k, l)`.
///
/// Uses `Q_k[l] = (1/T) ∫_0^{T_B} exp(−i2π[k(u − τ(u)) + lτ(u)]/T) du`, the
/// defining integral after substituting `t = τ(u)`, with composite
/// Gauss–Legendre panels sized to the local phase rate.
pub fn element_lut(kernel: &DistortionKernel, kappa: &[usize], params: LutParams) -> Result<Vec<Complex64>> {
    params.validate()?;
    let law = kernel.law;
    let period = kernel.period;
    let tb = kernel.support;
    let kmax = kappa.iter().copied().max().unwrap_or(0) as f64;
    let lmax = params.l1.max(params.l2) as f64;
    let rate = |u: f64| ((lmax + (kmax + lmax) * (1.0 - law.tau_derivative(u)).abs()) / period).max(1.0 / period);
    let cycles = 2.0 / params.oversample;

    let mut nodes = Vec::new();
    let mut u = 0.0;
    while u < tb {
        let mut du = cycles / rate(u);
        du = du.min(cycles / rate((u + du).min(tb)));
        let b = (u + du).min(tb);
        let half = 0.5 * (b - u);
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            nodes.push((u + half * (x + 1.0), half * w / period));
        }
        u = b;
    }

    let width = params.width();
    let l1 = params.l1 as f64;
    // E[j][l] = w_j exp(−i2π l τ_j / T), F[k][j] = exp(i2π k (τ_j − u_j) / T).
    let mut e = Vec::with_capacity(nodes.len() * width);
    let mut shift = Vec::with_capacity(nodes.len());
    for &(uj, wj) in &nodes {
        let tj = law.tau(uj);
        for li in 0..width {
            let l = li as f64 - l1;
            e.push(Complex64::from_polar(wj, -2.0 * PI * l * tj / period));
        }
        shift.push(2.0 * PI * (tj - uj) / period);
    }
    let mut out = vec![Complex64::new(0.0, 0.0); kappa.len() * width];
    for (ki, &k) in kappa.iter().enumerate() {
        let row = &mut out[ki * width..(ki + 1) * width];
        for (j, s) in shift.iter().enumerate() {
            let f = Complex64::from_polar(1.0, k as f64 * s);
            for (r, ev) in row.iter_mut().zip(&e[j * width..(j + 1) * width]) {
                *r += f * ev;
            }
        }
    }
    Ok(out)
}

/// Content hash keying a LUT to its geometry, scan, coefficient set and settings.
pub fn lut_hash(geom: &ArrayGeometry, scan: &ScanPattern, kappa: &[usize], params: LutParams) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"volbeam-lut");
    geom.hash_into(&mut h);
    scan.hash_into(&mut h);
    h.update((kappa.len() as u64).to_le_bytes());
    for &k in kappa {
        h.update((k as u64).to_le_bytes());
    }
    h.update((params.l1 as u64).to_le_bytes());
    h.update((params.l2 as u64).to_le_bytes());
    h.update(params.oversample.to_le_bytes());
    h.finalize().into()
}

/// Table of `Q_{k,m,n;θ}[l]` in `(angle, element, k, l)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionLut {
    pub params: LutParams,
    pub kappa: Vec<usize>,
    pub n_angles: usize,
    pub n_elements: usize,
    pub hash: [u8; 32],
    pub data: Vec<Complex32>,
}

impl DistortionLut {
    /// Coefficients `Q[−L1..=L2]` for one (angle, element, k) triple.
    pub fn entry(&self, angle: usize, element: usize, k_index: usize) -> &[Complex32] {
        let w = self.params.width();
        let off = ((angle * self.n_elements + element) * self.kappa.len() + k_index) * w;
        &self.data[off..off + w]
    }

    /// Errors unless this table was built for exactly these inputs.
    pub fn check(&self, geom: &ArrayGeometry, scan: &ScanPattern) -> Result<()> {
        let expected = lut_hash(geom, scan, &self.kappa, self.params);
        if expected != self.hash {
            return Err(Error::LutMismatch {
                expected: hex(&expected),
                found: hex(&self.hash),
            });
        }
        Ok(())
    }

    /// Storage size in bytes of a table with these dimensions.
    pub fn size_bytes(n_angles: usize, n_elements: usize, n_k: usize, params: LutParams) -> u128 {
        n_angles as u128 * n_elements as u128 * n_k as u128 * params.width() as u128 * 8
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the LUT for every angle of `scan` and every active element.
pub fn build_lut(geom: &ArrayGeometry, scan: &ScanPattern, kappa: &[usize], params: LutParams) -> Result<DistortionLut> {
    params.validate()?;
    if kappa.is_empty() {
        return Err(invalid("coefficient set is empty"));
    }
    let period = scan.period();
    let n_el = geom.n_rx();
    let jobs: Vec<(usize, usize)> = (0..scan.len())
        .flat_map(|a| (0..n_el).map(move |e| (a, e)))
        .collect();
    let supports: Vec<f64> = scan
        .angles()
        .map(|a| beam_support(geom, a, period))
        .collect::<Result<_>>()?;
    let blocks: Vec<Vec<Complex64>> = jobs
        .par_iter()
        .map(|&(a, e)| {
            let angle = scan.angle(a);
            let kernel = DistortionKernel::new(geom.delay_law(geom.active()[e], angle), period, supports[a]);
            element_lut(&kernel, kappa, params)
        })
        .collect::<Result<_>>()?;
    let data = blocks
        .into_iter()
        .flatten()
        .map(|c| Complex32::new(c.re as f32, c.im as f32))
        .collect();
    Ok(DistortionLut {
        params,
        kappa: kappa.to_vec(),
        n_angles: scan.len(),
        n_elements: n_el,
        hash: lut_hash(geom, scan, kappa, params),
        data,
    })
}

/// `ĉ_{m,n}[k] = Σ_{l=−L1}^{L2} c_{m,n}[k − l] Q[l]`.
pub fn element_to_beam_coeffs(band: &CoefficientBand, q: &[Complex32], l1: usize, k: usize) -> Result<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    for (li, qv) in q.iter().enumerate() {
        let l = li as i64 - l1 as i64;
        let c = band.get(k as i64 - l)?;
        acc += c * Complex64::new(qv.re as f64, qv.im as f64);
    }
    Ok(acc)
}

/// Fourier coefficients `c[k]`, `k ∈ κ`, of one beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSpectrum {
    pub angle: SteeringAngle,
    pub kappa: Vec<usize>,
    pub values: Vec<Complex64>,
    /// Record length `N` of the underlying grid.
    pub n: usize,
    /// Support bound `T_B`.
    pub support: f64,
}

/// `c[k] = (1/N_RX) Σ ĉ_{m,n}[k]` for the beam at `scan.angle(angle_index)`.
///
/// `bands` must follow the order of the geometry's active set.
pub fn beamform_frequency(
    bands: &[CoefficientBand],
    lut: &DistortionLut,
    geom: &ArrayGeometry,
    scan: &ScanPattern,
    angle_index: usize,
    n: usize,
) -> Result<BeamSpectrum> {
    lut.check(geom, scan)?;
    if angle_index >= lut.n_angles {
        return Err(invalid(format!("angle index {angle_index} outside the LUT")));
    }
    if bands.len() != geom.n_rx() {
        return Err(invalid(format!(
            "{} coefficient bands for {} active elements",
            bands.len(),
            geom.n_rx()
        )));
    }
    for (b, e) in bands.iter().zip(geom.active()) {
        if b.element != *e {
            return Err(invalid("coefficient bands do not follow the active-set order"));
        }
    }
    let angle = scan.angle(angle_index);
    let support = beam_support(geom, angle, scan.period())?;
    let l1 = lut.params.l1;
    let values = (0..lut.kappa.len())
        .into_par_iter()
        .map(|ki| {
            let k = lut.kappa[ki];
            let mut acc = Complex64::new(0.0, 0.0);
            for (ei, band) in bands.iter().enumerate() {
                acc += element_to_beam_coeffs(band, lut.entry(angle_index, ei, ki), l1, k)?;
            }
            Ok(acc / bands.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamSpectrum {
        angle,
        kappa: lut.kappa.clone(),
        values,
        n,
        support,
    })
}
