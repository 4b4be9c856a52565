//! FFT helpers shared by the beamformers and metrics.
//!
//! Conventions: `c[k] = (1/N) Σ_n x[n] e^{−i2πkn/N}` (Fourier-series
//! coefficients on the sample grid) and its inverse `x[n] = Σ_k c[k] e^{i2πkn/N}`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans of one length.
#[derive(Clone)]
pub struct Transform {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    len: usize,
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform").field("len", &self.len).finish()
    }
}

impl Transform {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward DFT in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Unnormalized inverse DFT in place.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
    }

    /// Fourier coefficients of a real record.
    pub fn coefficients(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(self.len, Complex64::new(0.0, 0.0));
        self.forward(&mut buf);
        let s = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|c| *c *= s);
        buf
    }
}

/// Forward DFT divided by `N`, in place.
pub fn fft_normalized(buf: &mut [Complex64]) {
    let n = buf.len();
    if n == 0 {
        return;
    }
    FftPlanner::new().plan_fft_forward(n).process(buf);
    let s = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= s);
}

/// Fourier coefficients of a real record.
pub fn coefficients(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_normalized(&mut buf);
    buf
}

/// Real signal of length `n` whose one-sided coefficients at `indices` are
/// `values`; all other bins zero, negative bins by conjugate symmetry.
pub fn real_from_one_sided(n: usize, indices: &[usize], values: &[Complex64]) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (&k, &v) in indices.iter().zip(values) {
        let k = k % n;
        if k == 0 || 2 * k == n {
            buf[k] += Complex64::new(v.re, 0.0);
        } else {
            buf[k] += v;
            buf[n - k] += v.conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// Analytic signal `x + i H{x}` by spectral masking.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let upper = n.div_ceil(2);
    for (k, c) in buf.iter_mut().enumerate() {
        if k == 0 || 2 * k == n {
            continue;
        }
        if k < upper {
            *c *= 2.0;
        } else {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let s = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= s);
    buf
}

/// Magnitude of the analytic signal.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    analytic_signal(x).into_iter().map(|c| c.norm()).collect()
}
