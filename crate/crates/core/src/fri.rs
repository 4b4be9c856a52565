//! Beam recovery from partial Fourier data under the pulse-stream model.
//!
//! The beam is modelled as `Σ_l b_l h(t − l T_s)`, so its coefficients are
//! `c = H D b` with `H = diag(h[k])` and `D` the selected rows of the DFT.
//! Sparse `b` is found by minimizing `‖b‖₁` subject to `‖H D b − c‖₂ ≤ ε`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fdbf::{BeamSpectrum, EffectiveBand};
use crate::geometry::SteeringAngle;
use crate::pulse::Pulse;
use crate::spectrum::{real_from_one_sided, Transform};
use crate::time_bf::{gate_len, Beam};

/// Rows whose pulse coefficient falls below this fraction of the largest are rejected.
pub const MIN_ROW_GAIN: f64 = 1e-6;

/// The operator `A = H D` restricted to a coefficient set `κ`.
#[derive(Debug, Clone)]
pub struct MeasurementSystem {
    kappa: Vec<usize>,
    h: Vec<Complex64>,
    n: usize,
    fs: f64,
    transform: Transform,
    // Internal scaling that makes A A* = diag(d) with max(d) = 1.
    scale: f64,
    d: Vec<f64>,
}

/// Builds `A` for `κ` over an `n`-sample grid at the pulse's sampling rate.
pub fn build_system(pulse: &Pulse, kappa: &[usize], n: usize) -> Result<MeasurementSystem> {
    if kappa.is_empty() {
        return Err(invalid("coefficient set is empty"));
    }
    let mut ks = kappa.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() != kappa.len() {
        return Err(invalid("coefficient set has duplicates"));
    }
    if let Some(&k) = ks.iter().find(|&&k| k >= n) {
        return Err(Error::OutOfBand {
            index: k as i64,
            lo: 0,
            hi: n as i64 - 1,
        });
    }
    system_from_spectrum(&pulse.fourier_coefficients(n), kappa, pulse.sample_rate())
}

fn system_from_spectrum(full: &[Complex64], kappa: &[usize], fs: f64) -> Result<MeasurementSystem> {
    let n = full.len();
    let h: Vec<Complex64> = kappa.iter().map(|&k| full[k]).collect();
    let hmax = full.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for (&k, v) in kappa.iter().zip(&h) {
        if v.norm() < MIN_ROW_GAIN * hmax {
            return Err(Error::IllConditioned {
                k,
                magnitude: v.norm() / hmax,
            });
        }
    }
    let kmax = h.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let scale = 1.0 / ((n as f64).sqrt() * kmax);
    let d = h.iter().map(|c| scale * scale * n as f64 * c.norm_sqr()).collect();
    Ok(MeasurementSystem {
        kappa: kappa.to_vec(),
        h,
        n,
        fs,
        transform: Transform::new(n),
        scale,
        d,
    })
}

impl MeasurementSystem {
    pub fn kappa(&self) -> &[usize] {
        &self.kappa
    }

    pub fn pulse_coefficients(&self) -> &[Complex64] {
        &self.h
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    /// `c = A b`.
    pub fn apply(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut buf = b.to_vec();
        self.transform.forward(&mut buf);
        self.kappa.iter().zip(&self.h).map(|(&k, h)| h * buf[k]).collect()
    }

    /// `A* y`.
    pub fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for ((&k, h), v) in self.kappa.iter().zip(&self.h).zip(y) {
            buf[k] += h.conj() * v;
        }
        self.transform.inverse(&mut buf);
        buf
    }

    fn apply_scaled(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.apply(b).into_iter().map(|v| v * self.scale).collect()
    }

    fn adjoint_scaled(&self, y: &[Complex64]) -> Vec<Complex64> {
        let z: Vec<Complex64> = y.iter().map(|v| v * self.scale).collect();
        self.adjoint(&z)
    }

    /// Euclidean projection of `q` onto `{x : ‖c − A x‖ ≤ eps}` in scaled units.
    fn project(&self, q: &[Complex64], c: &[Complex64], eps: f64) -> Vec<Complex64> {
        let r: Vec<Complex64> = c.iter().zip(self.apply_scaled(q)).map(|(a, b)| a - b).collect();
        let norm = |s: f64| -> f64 {
            r.iter()
                .zip(&self.d)
                .map(|(v, d)| v.norm_sqr() / (1.0 + s * d).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        if norm(0.0) <= eps {
            return q.to_vec();
        }
        let w: Vec<Complex64> = if eps <= 0.0 {
            r.iter().zip(&self.d).map(|(v, d)| v / d).collect()
        } else {
            let mut hi = 1.0;
            while norm(hi) > eps && hi < 1e300 {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if norm(mid) > eps {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * hi {
                    break;
                }
            }
            r.iter().zip(&self.d).map(|(v, d)| v * hi / (1.0 + hi * d)).collect()
        };
        let corr = self.adjoint_scaled(&w);
        q.iter().zip(corr).map(|(a, b)| a + b).collect()
    }
}

/// Continuation schedule and stopping rule of the smoothed ℓ1 solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Largest smoothing parameter, relative to `‖A* c‖∞`.
    pub mu_start: f64,
    /// Smallest smoothing parameter, relative to `‖A* c‖∞`.
    pub mu_end: f64,
    pub stages: usize,
    pub max_iterations: usize,
    /// Relative change of the smoothed objective against its mean over the
    /// last ten iterations at which a stage stops.
    pub tolerance: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            mu_start: 1e-1,
            mu_end: 1e-4,
            stages: 5,
            max_iterations: 2000,
            tolerance: 1e-7,
        }
    }
}

impl SolverParams {
    fn validate(&self) -> Result<()> {
        if !(self.mu_start > 0.0 && self.mu_end > 0.0 && self.mu_end <= self.mu_start) {
            return Err(invalid("need 0 < mu_end <= mu_start"));
        }
        if self.stages == 0 || self.max_iterations == 0 {
            return Err(invalid("stages and max_iterations must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        Ok(())
    }

    /// Smoothing parameters of every stage, relative to `‖A* c‖∞`.
    pub fn schedule(&self) -> Vec<f64> {
        if self.stages == 1 {
            return vec![self.mu_end];
        }
        let r = (self.mu_end / self.mu_start).ln() / (self.stages - 1) as f64;
        (0..self.stages).map(|i| self.mu_start * (r * i as f64).exp()).collect()
    }
}

/// Diagnostics of one continuation stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub mu: f64,
    pub iterations: usize,
    /// Smoothed objective `f_μ` at the stage output.
    pub smoothed_objective: f64,
    /// `‖b‖₁` at the stage output.
    pub l1_norm: f64,
    pub stopped: bool,
}

/// Recovered amplitudes on the `T_s` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBeam {
    pub b: Vec<Complex64>,
    pub residual: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stages: Vec<StageReport>,
}

impl SparseBeam {
    /// Indices of the `count` largest-magnitude entries, ascending.
    pub fn strongest(&self, count: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.b.len()).collect();
        idx.sort_by(|&i, &j| self.b[j].norm().total_cmp(&self.b[i].norm()));
        idx.truncate(count);
        idx.sort_unstable();
        idx
    }
}

fn huber(x: &[Complex64], mu: f64) -> f64 {
    x.iter()
        .map(|v| {
            let a = v.norm();
            if a < mu {
                a * a / (2.0 * mu)
            } else {
                a - mu / 2.0
            }
        })
        .sum()
}

fn l1(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm()).sum()
}

fn l2(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `min ‖b‖₁ s.t. ‖A b − c‖₂ ≤ ε` with Nesterov smoothing and continuation.
pub fn solve_l1(system: &MeasurementSystem, c: &[Complex64], epsilon: f64, params: &SolverParams) -> Result<SparseBeam> {
    params.validate()?;
    if c.len() != system.kappa.len() {
        return Err(invalid(format!(
            "{} measurements for {} rows",
            c.len(),
            system.kappa.len()
        )));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(invalid("epsilon must be finite and non-negative"));
    }
    if c.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(invalid("measurements must be finite"));
    }
    let n = system.n;
    let s = system.scale;
    let cs: Vec<Complex64> = c.iter().map(|v| v * s).collect();
    let eps = epsilon * s * (1.0 - 1e-6);

    // Minimum-norm solution of A x = c.
    let ratio: Vec<Complex64> = cs.iter().zip(&system.d).map(|(v, d)| v / d).collect();
    let mut x = system.adjoint_scaled(&ratio);
    let atc = system.adjoint_scaled(&cs);
    let scale_mu = atc.iter().map(|v| v.norm()).fold(0.0, f64::max);

    let mut stages = Vec::new();
    let mut total = 0;
    let mut converged = true;
    if scale_mu > 0.0 {
        for mu_rel in params.schedule() {
            let mu = mu_rel * scale_mu;
            let lip = 1.0 / mu;
            let x0 = x.clone();
            let mut xk = x.clone();
            let mut acc = vec![Complex64::new(0.0, 0.0); n];
            let mut y = x.clone();
            let mut history: Vec<f64> = Vec::new();
            let mut stopped = false;
            let mut its = 0;
            for k in 0..params.max_iterations {
                its = k + 1;
                let grad: Vec<Complex64> = xk.iter().map(|v| v / v.norm().max(mu)).collect();
                let fmu = huber(&xk, mu);
                let step: Vec<Complex64> = xk.iter().zip(&grad).map(|(a, g)| a - g / lip).collect();
                y = system.project(&step, &cs, eps);
                let w = (k as f64 + 1.0) / 2.0;
                acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g * w);
                let zs: Vec<Complex64> = x0.iter().zip(&acc).map(|(a, g)| a - g / lip).collect();
                let z = system.project(&zs, &cs, eps);
                let tau = 2.0 / (k as f64 + 3.0);
                xk = z.iter().zip(&y).map(|(z, y)| z * tau + y * (1.0 - tau)).collect();
                if history.len() >= 10 {
                    let tail = &history[history.len() - 10..];
                    let mean = tail.iter().sum::<f64>() / 10.0;
                    if mean > 0.0 && ((fmu - mean) / mean).abs() < params.tolerance {
                        stopped = true;
                        history.push(fmu);
                        break;
                    }
                    if mean == 0.0 && fmu == 0.0 {
                        stopped = true;
                        break;
                    }
                }
                history.push(fmu);
            }
            total += its;
            // Earlier stages only warm-start the next; the last one decides.
            converged = stopped;
            x = y;
            stages.push(StageReport {
                mu,
                iterations: its,
                smoothed_objective: huber(&x, mu),
                l1_norm: l1(&x),
                stopped,
            });
        }
    }
    let r: Vec<Complex64> = system.apply(&x).iter().zip(c).map(|(a, b)| a - b).collect();
    let residual = l2(&r);
    if residual > epsilon {
        converged = false;
    }
    Ok(SparseBeam {
        b: x,
        residual,
        epsilon,
        iterations: total,
        converged,
        stages,
    })
}

/// `Φ̂(t) = Re Σ_l b_l h_a(t − l T_s)` on the sampling grid, `h_a` the
/// analytic pulse (equal to `Σ b_l h(t − l T_s)` for real `b`).
pub fn beam_from_sparse(sparse: &SparseBeam, pulse: &Pulse, angle: SteeringAngle, support: f64) -> Beam {
    let n = sparse.b.len();
    let fs = pulse.sample_rate();
    let h = pulse.fourier_coefficients(n);
    let t = Transform::new(n);
    let mut buf = sparse.b.clone();
    t.forward(&mut buf);
    let upper = n.div_ceil(2);
    for (k, v) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || 2 * k == n {
            1.0
        } else if k < upper {
            2.0
        } else {
            0.0
        };
        *v *= h[k] * gain;
    }
    t.inverse(&mut buf);
    let mut beam = Beam {
        angle,
        samples: buf.into_iter().map(|v| v.re).collect(),
        fs,
        support,
    };
    beam.apply_gate();
    beam
}

/// Inverse transform of a full-band spectrum, zero outside `β`, gated to `T_B`.
pub fn beam_from_full_band(spectrum: &BeamSpectrum, band: &EffectiveBand, fs: f64) -> Result<Beam> {
    if spectrum.kappa != band.indices() {
        return Err(invalid("spectrum does not cover the full effective band"));
    }
    let mut samples = real_from_one_sided(spectrum.n, &spectrum.kappa, &spectrum.values);
    let g = gate_len(spectrum.support, fs, spectrum.n);
    samples[g..].iter_mut().for_each(|v| *v = 0.0);
    Ok(Beam {
        angle: spectrum.angle,
        samples,
        fs,
        support: spectrum.support,
    })
}

/// How the data-fit bound `ε` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum EpsilonRule {
    /// `ε = value · ‖c‖₂`.
    Relative(f64),
    /// `ε = √𝒦 · σ_bin` from the noise level of the beam coefficients.
    Noise,
    /// Fixed `ε`.
    Absolute(f64),
}

impl Default for EpsilonRule {
    fn default() -> Self {
        EpsilonRule::Relative(1e-6)
    }
}

impl EpsilonRule {
    /// `σ_bin` is the standard deviation of one beam coefficient's noise.
    pub fn epsilon(&self, c: &[Complex64], sigma_bin: f64) -> f64 {
        match *self {
            EpsilonRule::Relative(r) => r * l2(c),
            EpsilonRule::Noise => (c.len() as f64).sqrt() * sigma_bin,
            EpsilonRule::Absolute(e) => e,
        }
    }
}

/// Per-bin noise std of beam coefficients for white element noise of std
/// `sigma` averaged over `n_rx` elements, on an `n`-sample record.
pub fn coefficient_noise_std(sigma: f64, n: usize, n_rx: usize) -> f64 {
    sigma / ((n * n_rx) as f64).sqrt()
}
