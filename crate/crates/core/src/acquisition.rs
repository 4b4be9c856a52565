//! Low-rate acquisition of element Fourier coefficients and sample accounting.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Element;
use crate::phantom::ElementRecord;
use crate::spectrum::Transform;

/// Contiguous run of Fourier coefficients `c_{m,n}[start .. start + ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientBand {
    pub element: Element,
    pub start: usize,
    pub values: Vec<Complex64>,
}

impl CoefficientBand {
    /// Number of coefficients `ν`.
    pub fn nu(&self) -> usize {
        self.values.len()
    }

    /// Last index held, inclusive.
    pub fn end(&self) -> usize {
        self.start + self.values.len() - 1
    }

    pub fn get(&self, k: i64) -> Result<Complex64> {
        let lo = self.start as i64;
        let hi = lo + self.values.len() as i64 - 1;
        if k < lo || k > hi {
            return Err(Error::OutOfBand { index: k, lo, hi });
        }
        Ok(self.values[(k - lo) as usize])
    }
}

/// Index range `[k1 − L2, k2 + L1]` of element coefficients consumed when the
/// beam coefficients `k1..=k2` are assembled with `Q[l]`, `l ∈ [−L1, L2]`.
pub fn required_band(k1: usize, k2: usize, l1: usize, l2: usize, n: usize) -> Result<(usize, usize)> {
    if k1 > k2 {
        return Err(invalid(format!("empty coefficient range [{k1}, {k2}]")));
    }
    if k1 < l2 || k2 + l1 >= n {
        return Err(Error::OutOfBand {
            index: if k1 < l2 { k1 as i64 - l2 as i64 } else { (k2 + l1) as i64 },
            lo: 0,
            hi: n as i64 - 1,
        });
    }
    Ok((k1 - l2, k2 + l1))
}

/// Demodulate-filter-decimate front end for one band.
///
/// The record is shifted down by `lo` bins, filtered with the ideal
/// `ν`-bin low-pass kernel and kept at `ν` output samples; a `ν`-point DFT
/// of those samples returns `c[lo .. lo + ν)` exactly.
#[derive(Debug, Clone)]
pub struct BandAcquirer {
    n: usize,
    lo: usize,
    nu: usize,
    kernel: Vec<Complex64>,
    transform: Transform,
}

impl BandAcquirer {
    pub fn new(n: usize, lo: usize, hi: usize) -> Result<Self> {
        if lo > hi || hi >= n {
            return Err(Error::OutOfBand {
                index: hi as i64,
                lo: 0,
                hi: n as i64 - 1,
            });
        }
        let nu = hi - lo + 1;
        let nf = n as f64;
        let dirichlet = |x: f64| -> Complex64 {
            let s = (PI * x / nf).sin();
            let mag = if s.abs() < 1e-12 {
                // x is a multiple of N: every term equals ±1.
                let turns = (x / nf).round() as i64;
                if (turns * (nu as i64 - 1)) % 2 == 0 {
                    nu as f64
                } else {
                    -(nu as f64)
                }
            } else {
                (PI * nu as f64 * x / nf).sin() / s
            };
            Complex64::from_polar(1.0, PI * (nu as f64 - 1.0) * x / nf) * mag
        };
        let mut kernel = Vec::with_capacity(nu * n);
        for m in 0..nu {
            let tm = m as f64 * nf / nu as f64;
            for j in 0..n {
                let demod = Complex64::from_polar(1.0 / nf, -2.0 * PI * ((lo * j) % n) as f64 / nf);
                kernel.push(demod * dirichlet(tm - j as f64));
            }
        }
        Ok(Self {
            n,
            lo,
            nu,
            kernel,
            transform: Transform::new(nu),
        })
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    /// First acquired coefficient index.
    pub fn low(&self) -> usize {
        self.lo
    }

    /// The `ν` retained low-rate samples.
    pub fn low_rate_samples(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        if x.len() != self.n {
            return Err(invalid(format!(
                "record has {} samples, acquirer expects {}",
                x.len(),
                self.n
            )));
        }
        Ok(self
            .kernel
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(k, &v)| k * v).sum())
            .collect())
    }

    pub fn acquire(&self, record: &ElementRecord) -> Result<CoefficientBand> {
        let mut z = self.low_rate_samples(&record.samples)?;
        self.transform.forward(&mut z);
        let s = 1.0 / self.nu as f64;
        z.iter_mut().for_each(|c| *c *= s);
        Ok(CoefficientBand {
            element: record.element,
            start: self.lo,
            values: z,
        })
    }
}

/// Coefficients of `record` needed for beam indices `k1..=k2` with truncation `(L1, L2)`.
pub fn acquire_band(record: &ElementRecord, k1: usize, k2: usize, l1: usize, l2: usize) -> Result<CoefficientBand> {
    let n = record.samples.len();
    let (lo, hi) = required_band(k1, k2, l1, l2, n)?;
    BandAcquirer::new(n, lo, hi)?.acquire(record)
}

/// Processing path for sample accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMethod {
    Time,
    Frequency,
}

/// Counting rule for the per-element coefficient count `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuConvention {
    /// `ν = 𝒦 + L1 + L2`.
    #[default]
    Text,
    /// `ν = 𝒦 + L1 + L2 + 1`.
    PlusOne,
}

impl NuConvention {
    pub fn nu(self, kappa: usize, l1: usize, l2: usize) -> usize {
        match self {
            NuConvention::Text => kappa + l1 + l2,
            NuConvention::PlusOne => kappa + l1 + l2 + 1,
        }
    }
}

/// Samples processed per volume.
///
/// Time domain: `lines · N_RX · N`; frequency domain: `lines · N_RX · ν`.
#[allow(clippy::too_many_arguments)]
pub fn sample_budget(
    method: BudgetMethod,
    n_rx: usize,
    lines: usize,
    n: usize,
    kappa: usize,
    l1: usize,
    l2: usize,
    convention: NuConvention,
) -> u64 {
    let per_element = match method {
        BudgetMethod::Time => n,
        BudgetMethod::Frequency => convention.nu(kappa, l1, l2),
    };
    lines as u64 * n_rx as u64 * per_element as u64
}
