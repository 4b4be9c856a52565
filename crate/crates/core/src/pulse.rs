//! Transmitted pulse: a Gaussian-modulated cosine with compact support.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum;

/// Envelope level (relative to the peak) at which the pulse is truncated.
pub const TRUNCATION_LEVEL: f64 = 1e-4;

/// Largest admissible ratio `Δ / T`.
pub const MAX_DURATION_FRACTION: f64 = 1.0 / 20.0;

/// Parameters of the transmitted pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Carrier `f0` in Hz.
    pub center_frequency: f64,
    /// Two-sided −6 dB bandwidth in Hz.
    pub bandwidth: f64,
    /// Sampling rate `f_s` in Hz.
    pub sample_rate: f64,
}

impl Default for PulseSpec {
    fn default() -> Self {
        Self {
            center_frequency: 3e6,
            bandwidth: 1.4e6,
            sample_rate: 18.25e6,
        }
    }
}

/// Pulse `h(t)` supported on `[0, Δ)`, scaled so its samples have unit energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    spec: PulseSpec,
    sigma_t: f64,
    half: f64,
    scale: f64,
    samples: Vec<f64>,
}

/// Builds the pulse for `(f0, bandwidth, f_s)`.
pub fn make_pulse(f0: f64, bandwidth: f64, fs: f64) -> Result<Pulse> {
    Pulse::new(PulseSpec {
        center_frequency: f0,
        bandwidth,
        sample_rate: fs,
    })
}

impl Pulse {
    pub fn new(spec: PulseSpec) -> Result<Self> {
        let PulseSpec {
            center_frequency: f0,
            bandwidth: bw,
            sample_rate: fs,
        } = spec;
        if !(f0.is_finite() && bw.is_finite() && fs.is_finite()) {
            return Err(Error::Pulse("parameters must be finite".into()));
        }
        if !(0.0 < bw && bw < 2.0 * f0) {
            return Err(Error::Pulse(format!(
                "need 0 < bandwidth < 2 f0 (bandwidth {bw}, f0 {f0})"
            )));
        }
        if fs <= 2.0 * (f0 + bw / 2.0) {
            return Err(Error::Pulse(format!(
                "sampling rate {fs} Hz is below the Nyquist rate {} Hz",
                2.0 * (f0 + bw / 2.0)
            )));
        }
        let sigma_f = bw / 2.0 / (2.0 * 2f64.ln()).sqrt();
        let sigma_t = 1.0 / (2.0 * PI * sigma_f);
        let half = sigma_t * (2.0 * (1.0 / TRUNCATION_LEVEL).ln()).sqrt();
        let mut pulse = Self {
            spec,
            sigma_t,
            half,
            scale: 1.0,
            samples: Vec::new(),
        };
        let n = (pulse.duration() * fs).ceil() as usize;
        let raw: Vec<f64> = (0..n).map(|i| pulse.eval(i as f64 / fs)).collect();
        let energy: f64 = raw.iter().map(|v| v * v).sum();
        pulse.scale = 1.0 / energy.sqrt();
        pulse.samples = raw.into_iter().map(|v| v * pulse.scale).collect();
        Ok(pulse)
    }

    pub fn spec(&self) -> PulseSpec {
        self.spec
    }

    pub fn center_frequency(&self) -> f64 {
        self.spec.center_frequency
    }

    pub fn sample_rate(&self) -> f64 {
        self.spec.sample_rate
    }

    /// Support length `Δ`.
    pub fn duration(&self) -> f64 {
        2.0 * self.half
    }

    /// Standard deviation of the Gaussian envelope, in seconds.
    pub fn sigma_t(&self) -> f64 {
        self.sigma_t
    }

    /// FWHM of the amplitude envelope, in seconds.
    pub fn envelope_fwhm(&self) -> f64 {
        2.0 * (2.0 * 2f64.ln()).sqrt() * self.sigma_t
    }

    /// Samples `h(n T_s)`, `n = 0..⌈Δ f_s⌉`.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// `h(t)`; zero outside `[0, Δ)`.
    pub fn eval(&self, t: f64) -> f64 {
        if !(0.0..self.duration()).contains(&t) {
            return 0.0;
        }
        let u = t - self.half;
        self.scale
            * (-u * u / (2.0 * self.sigma_t * self.sigma_t)).exp()
            * (2.0 * PI * self.spec.center_frequency * u).cos()
    }

    /// Errors unless `Δ` is small against the Fourier period.
    pub fn check_period(&self, period: f64) -> Result<()> {
        if self.duration() >= MAX_DURATION_FRACTION * period {
            return Err(Error::Pulse(format!(
                "pulse duration {:.3e} s is not small against T = {period:.3e} s",
                self.duration()
            )));
        }
        Ok(())
    }

    /// Fourier coefficients `h[k] = (1/N) Σ_n h(n T_s) e^{−i2πkn/N}` over a
    /// record of `n` samples.
    pub fn fourier_coefficients(&self, n: usize) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &s) in buf.iter_mut().zip(&self.samples) {
            b.re = s;
        }
        spectrum::fft_normalized(&mut buf);
        buf
    }
}
