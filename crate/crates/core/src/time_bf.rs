//! Dynamic delay-and-sum beamforming in the time domain.

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{beam_support, ArrayGeometry, DelayLaw, Element, SteeringAngle};
use crate::phantom::ElementRecord;

/// One beamformed scan-line sampled at `fs`, zero from `support` on.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub angle: SteeringAngle,
    pub samples: Vec<f64>,
    pub fs: f64,
    pub support: f64,
}

impl Beam {
    pub fn zeros(angle: SteeringAngle, n: usize, fs: f64, support: f64) -> Self {
        Self {
            angle,
            samples: vec![0.0; n],
            fs,
            support,
        }
    }

    /// Number of leading samples with `t < support`.
    pub fn gate_len(&self) -> usize {
        gate_len(self.support, self.fs, self.samples.len())
    }

    /// Zeroes every sample with `t ≥ support`.
    pub fn apply_gate(&mut self) {
        let g = self.gate_len();
        self.samples[g..].iter_mut().for_each(|v| *v = 0.0);
    }
}

pub(crate) fn gate_len(support: f64, fs: f64, n: usize) -> usize {
    ((support * fs).ceil().max(0.0) as usize).min(n)
}

/// Fractional-delay read scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Interpolation {
    Linear,
    /// Lanczos-windowed sinc with `lobes` taps on each side.
    WindowedSinc { lobes: usize },
}

impl Default for Interpolation {
    fn default() -> Self {
        Interpolation::WindowedSinc { lobes: 8 }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

impl Interpolation {
    /// Value of `x` at fractional index `pos`; zero beyond the record.
    pub fn read(&self, x: &[f64], pos: f64) -> f64 {
        let n = x.len();
        if !(pos >= 0.0) || pos > (n - 1) as f64 {
            return 0.0;
        }
        match *self {
            Interpolation::Linear => {
                let i = pos.floor() as usize;
                let f = pos - i as f64;
                if i + 1 < n {
                    x[i] * (1.0 - f) + x[i + 1] * f
                } else {
                    x[i]
                }
            }
            Interpolation::WindowedSinc { lobes } => {
                let a = lobes.max(1) as i64;
                let i0 = pos.floor() as i64;
                let f = pos - i0 as f64;
                if f == 0.0 {
                    return x[i0 as usize];
                }
                let mut acc = 0.0;
                for j in (1 - a)..=a {
                    let idx = i0 + j;
                    if idx < 0 || idx >= n as i64 {
                        continue;
                    }
                    let d = f - j as f64;
                    acc += x[idx as usize] * sinc(d) * sinc(d / a as f64);
                }
                acc
            }
        }
    }
}

/// `Φ(t) = (1/N_RX) Σ φ_{m,n}(τ_{m,n}(t))` on the sampling grid, gated to `[0, T_B)`.
pub fn beamform_time(
    records: &[ElementRecord],
    geom: &ArrayGeometry,
    angle: SteeringAngle,
    fs: f64,
    interp: Interpolation,
) -> Result<Beam> {
    let n = check_records(records, geom)?;
    let period = n as f64 / fs;
    let support = beam_support(geom, angle, period)?;
    let gate = gate_len(support, fs, n);
    let dir = angle.direction_cosines();
    // Fixed-size chunks summed in order keep the result independent of scheduling.
    let partials: Vec<Vec<f64>> = records
        .par_chunks(16)
        .map(|chunk| {
            let mut out = vec![0.0; n];
            for r in chunk {
                let law = DelayLaw::new(geom.gammas(r.element), dir);
                for (j, o) in out.iter_mut().enumerate().take(gate) {
                    let t = j as f64 / fs;
                    *o += interp.read(&r.samples, law.tau(t) * fs);
                }
            }
            out
        })
        .collect();
    let mut sum = vec![0.0; n];
    for p in partials {
        sum.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / records.len() as f64;
    Ok(Beam {
        angle,
        samples: sum.into_iter().map(|v| v * scale).collect(),
        fs,
        support,
    })
}

/// Verifies that `records` covers exactly the active set with equal lengths.
pub(crate) fn check_records(records: &[ElementRecord], geom: &ArrayGeometry) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| invalid("no element records"))?;
    let n = first.samples.len();
    if n < 2 {
        return Err(invalid("records need at least two samples"));
    }
    if records.iter().any(|r| r.samples.len() != n) {
        return Err(invalid("records differ in length"));
    }
    if records.len() != geom.n_rx() {
        return Err(invalid(format!(
            "{} records for {} active elements",
            records.len(),
            geom.n_rx()
        )));
    }
    let active: HashMap<Element, ()> = geom.active().iter().map(|&e| (e, ())).collect();
    let mut seen = HashMap::new();
    for r in records {
        if !active.contains_key(&r.element) {
            return Err(invalid(format!(
                "record for inactive element ({}, {})",
                r.element.m, r.element.n
            )));
        }
        if seen.insert(r.element, ()).is_some() {
            return Err(invalid(format!(
                "duplicate record for element ({}, {})",
                r.element.m, r.element.n
            )));
        }
    }
    Ok(n)
}

/// Elements on the two main diagonals of a square grid.
pub fn diagonal_subset(rows: usize, cols: usize) -> Result<Vec<Element>> {
    if rows != cols {
        return Err(Error::Geometry(format!(
            "diagonal subset needs a square grid, got {rows}x{cols}"
        )));
    }
    if rows == 0 {
        return Err(Error::Geometry("empty grid".into()));
    }
    let mut out = Vec::with_capacity(2 * rows);
    for i in 0..rows {
        out.push(Element::new(i, i));
        let j = rows - 1 - i;
        if j != i {
            out.push(Element::new(i, j));
        }
    }
    Ok(out)
}
