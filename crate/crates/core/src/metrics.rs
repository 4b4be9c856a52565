//! Point-spread-function measurements, beam SNR and summary tables.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectrum::envelope;

/// Level below the peak that a main-lobe null must reach, in dB.
pub const NULL_DEPTH_DB: f64 = -20.0;

/// Orientation of a PSF curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsfAxis {
    Lateral,
    Axial,
}

/// How a beam is reduced to a non-negative profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    /// Magnitude of the analytic signal.
    #[default]
    Envelope,
    /// Magnitude of the RF samples.
    Rf,
}

impl Detection {
    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        match self {
            Detection::Envelope => envelope(x),
            Detection::Rf => x.iter().map(|v| v.abs()).collect(),
        }
    }
}

/// Profile of a point reflector with its width and side-lobe statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsfReport {
    pub axis: PsfAxis,
    pub positions: Vec<f64>,
    pub curve: Vec<f64>,
    /// Full width at half maximum, in the units of `positions`.
    pub fwhm: f64,
    /// Mean side-lobe power relative to the peak, dB; `None` without side lobes.
    pub average_sidelobe_db: Option<f64>,
    /// Highest of the two side lobes adjacent to the main lobe, dB.
    pub first_sidelobe_db: Option<f64>,
}

fn argmax(y: &[f64]) -> usize {
    y.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Width of the peak of `y` at half its maximum, with linear interpolation of
/// the crossings.
pub fn fwhm(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(invalid("FWHM needs matching abscissa and at least 3 points"));
    }
    let p = argmax(y);
    let peak = y[p];
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument("no main lobe above zero".into()));
    }
    let half = peak / 2.0;
    let cross = |i: usize, j: usize| x[i] + (half - y[i]) * (x[j] - x[i]) / (y[j] - y[i]);
    let mut left = None;
    for i in (0..p).rev() {
        if y[i] <= half {
            left = Some(cross(i, i + 1));
            break;
        }
    }
    let mut right = None;
    for (i, v) in y.iter().enumerate().skip(p + 1) {
        if *v <= half {
            right = Some(cross(i - 1, i));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok((r - l).abs()),
        _ => Err(Error::InvalidArgument(
            "main lobe does not fall to half maximum inside the curve".into(),
        )),
    }
}

/// Main-lobe edges: first local minima below `NULL_DEPTH_DB` on each side.
fn main_lobe(y: &[f64], p: usize) -> (Option<usize>, Option<usize>) {
    let thr = y[p] * 10f64.powf(NULL_DEPTH_DB / 20.0);
    let is_min = |i: usize| {
        let l = if i > 0 { y[i - 1] } else { f64::INFINITY };
        let r = if i + 1 < y.len() { y[i + 1] } else { f64::INFINITY };
        y[i] <= l && y[i] <= r
    };
    let left = (0..p).rev().find(|&i| y[i] < thr && is_min(i) && i > 0);
    let right = (p + 1..y.len()).find(|&i| y[i] < thr && is_min(i) && i + 1 < y.len());
    (left, right)
}

/// Side-lobe statistics of a non-negative profile normalized to peak 1.
fn sidelobes(y: &[f64]) -> (Option<f64>, Option<f64>) {
    let p = argmax(y);
    let peak = y[p];
    let (l, r) = main_lobe(y, p);
    let mut region: Vec<f64> = Vec::new();
    let mut firsts: Vec<f64> = Vec::new();
    if let Some(l) = l {
        region.extend_from_slice(&y[..l]);
        let first = y[..l].iter().enumerate().rev().find(|&(i, v)| i == 0 || *v >= y[i - 1]);
        if let Some((_, v)) = first {
            firsts.push(*v);
        }
    }
    if let Some(r) = r {
        region.extend_from_slice(&y[r + 1..]);
        let first = y[r + 1..]
            .iter()
            .enumerate()
            .find(|&(i, v)| r + 1 + i + 1 >= y.len() || *v >= y[r + 2 + i]);
        if let Some((_, v)) = first {
            firsts.push(*v);
        }
    }
    if region.is_empty() {
        return (None, None);
    }
    let mean_power = region.iter().map(|v| v * v).sum::<f64>() / region.len() as f64 / (peak * peak);
    let avg = 10.0 * mean_power.max(1e-300).log10();
    let first = firsts
        .into_iter()
        .fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))))
        .map(|v| 20.0 * (v / peak).max(1e-300).log10());
    (Some(avg), first)
}

/// Lateral PSF along a constant-depth arc.
///
/// `theta` are the beam angles (any unit) and `profiles` the detected beams
/// in the same order; the arc is read at `focus_sample`, taking the largest
/// value within `±window` samples. The curve is normalized to maximum 1.
pub fn lateral_psf(theta: &[f64], profiles: &[Vec<f64>], focus_sample: usize, window: usize) -> Result<PsfReport> {
    if theta.len() != profiles.len() {
        return Err(invalid("one profile per angle required"));
    }
    let mut curve = Vec::with_capacity(theta.len());
    for p in profiles {
        if focus_sample >= p.len() {
            return Err(invalid("focus sample outside the beam"));
        }
        let lo = focus_sample.saturating_sub(window);
        let hi = (focus_sample + window).min(p.len() - 1);
        curve.push(p[lo..=hi].iter().copied().fold(0.0, f64::max));
    }
    let peak = curve.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument("no main lobe above the noise floor".into()));
    }
    curve.iter_mut().for_each(|v| *v /= peak);
    let width = fwhm(theta, &curve)?;
    let (avg, first) = sidelobes(&curve);
    Ok(PsfReport {
        axis: PsfAxis::Lateral,
        positions: theta.to_vec(),
        curve,
        fwhm: width,
        average_sidelobe_db: avg,
        first_sidelobe_db: first,
    })
}

/// Axial PSF of a detected beam around its peak.
///
/// `positions` are the depths (or times) of the samples in `profile`; the
/// curve keeps `±half_window` samples around the peak and is scaled to unit
/// energy.
pub fn axial_psf(positions: &[f64], profile: &[f64], half_window: usize) -> Result<PsfReport> {
    if positions.len() != profile.len() || profile.len() < 3 {
        return Err(invalid("axial profile and positions must match"));
    }
    let p = argmax(profile);
    if !(profile[p] > 0.0) {
        return Err(Error::InvalidArgument("no main lobe above the noise floor".into()));
    }
    let lo = p.saturating_sub(half_window);
    let hi = (p + half_window).min(profile.len() - 1);
    let mut curve = profile[lo..=hi].to_vec();
    let energy = curve.iter().map(|v| v * v).sum::<f64>().sqrt();
    curve.iter_mut().for_each(|v| *v /= energy);
    let xs = positions[lo..=hi].to_vec();
    let width = fwhm(&xs, &curve)?;
    let (avg, first) = sidelobes(&curve);
    Ok(PsfReport {
        axis: PsfAxis::Axial,
        positions: xs,
        curve,
        fwhm: width,
        average_sidelobe_db: avg,
        first_sidelobe_db: first,
    })
}

/// Number of samples spanning a depth segment of `length` metres.
pub fn segment_samples(length: f64, speed_of_sound: f64, fs: f64) -> usize {
    (2.0 * length / speed_of_sound * fs).round() as usize
}

/// `10 log10(E_clean / E_noise)`: clean energy over a `segment`-sample window
/// centred on the clean peak against the energy of `noisy − clean` over the
/// whole beam. Returns `+∞` when the beams coincide.
pub fn beam_snr(clean: &[f64], noisy: &[f64], segment: usize) -> Result<f64> {
    if clean.len() != noisy.len() || clean.is_empty() {
        return Err(invalid("beams must have equal non-zero length"));
    }
    if segment == 0 {
        return Err(invalid("segment must span at least one sample"));
    }
    let p = argmax(&clean.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let lo = p.saturating_sub(segment / 2);
    let hi = (lo + segment).min(clean.len());
    let signal: f64 = clean[lo..hi].iter().map(|v| v * v).sum();
    if !(signal > 0.0) {
        return Err(Error::InvalidArgument("clean beam has no detectable peak".into()));
    }
    let noise: f64 = clean.iter().zip(noisy).map(|(a, b)| (b - a) * (b - a)).sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Plain-text table with aligned columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: impl Into<String>, header: &[&str]) -> Self {
        Self {
            title: title.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let cols = self.header.len();
        let mut width = vec![0; cols];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |r: &Vec<String>| {
            r.iter()
                .zip(&width)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\n{}\n", self.title, line(&self.header));
        out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

/// Formats a dB value, writing `inf` for the infinite sentinel.
pub fn format_db(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x:.2}"),
        None => "-".into(),
    }
}
