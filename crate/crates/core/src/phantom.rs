//! Point-reflector phantoms and per-element echo synthesis.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{ArrayGeometry, DelayLaw, Element, SamplingGrid, SteeringAngle};
use crate::pulse::Pulse;

/// One point scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    /// Round-trip arrival time at the reference point, seconds.
    pub arrival: f64,
    pub amplitude: f64,
    pub theta_x: f64,
    pub theta_y: f64,
}

impl Reflector {
    /// Reflector at `depth` metres along the direction `(θx, θy)` given in degrees.
    pub fn at_depth(depth: f64, theta_x_deg: f64, theta_y_deg: f64, amplitude: f64, c: f64) -> Self {
        Self {
            arrival: 2.0 * depth / c,
            amplitude,
            theta_x: theta_x_deg.to_radians(),
            theta_y: theta_y_deg.to_radians(),
        }
    }

    pub fn depth(&self, c: f64) -> f64 {
        self.arrival * c / 2.0
    }

    pub fn angle(&self) -> Result<SteeringAngle> {
        SteeringAngle::new(self.theta_x, self.theta_y)
    }
}

/// Collection of reflectors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub reflectors: Vec<Reflector>,
}

impl Phantom {
    pub fn new(reflectors: Vec<Reflector>) -> Self {
        Self { reflectors }
    }

    /// Three unit reflectors at 26, 31.5 and 37 mm, steered −7.5°, 0° and 7.5° in θx.
    pub fn three_point(c: f64) -> Self {
        Self::new(vec![
            Reflector::at_depth(0.026, -7.5, 0.0, 1.0, c),
            Reflector::at_depth(0.0315, 0.0, 0.0, 1.0, c),
            Reflector::at_depth(0.037, 7.5, 0.0, 1.0, c),
        ])
    }

    /// One unit reflector on axis at `depth`.
    pub fn single_point(depth: f64, c: f64) -> Self {
        Self::new(vec![Reflector::at_depth(depth, 0.0, 0.0, 1.0, c)])
    }

    /// `count` reflectors with uniform depths in `[min_depth, max_depth]`,
    /// angles in `±half_angle` (radians) and Gaussian amplitudes.
    pub fn dense_random(
        count: usize,
        min_depth: f64,
        max_depth: f64,
        half_angle: f64,
        c: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0 < min_depth && min_depth < max_depth) {
            return Err(Error::Phantom("need 0 < min_depth < max_depth".into()));
        }
        SteeringAngle::new(half_angle, half_angle)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let reflectors = (0..count)
            .map(|_| Reflector {
                arrival: 2.0 * rng.random_range(min_depth..max_depth) / c,
                amplitude: normal.sample(&mut rng),
                theta_x: rng.random_range(-half_angle..=half_angle),
                theta_y: rng.random_range(-half_angle..=half_angle),
            })
            .collect();
        Ok(Self::new(reflectors))
    }

    /// Checks the phantom against a geometry, pulse and record period.
    pub fn validate(&self, geom: &ArrayGeometry, pulse: &Pulse, period: f64) -> Result<()> {
        let near = geom
            .active()
            .iter()
            .map(|&e| geom.gammas(e).iter().map(|g| g.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        for (i, r) in self.reflectors.iter().enumerate() {
            if !r.amplitude.is_finite() || !r.arrival.is_finite() {
                return Err(Error::Phantom(format!("reflector {i} is not finite")));
            }
            r.angle()?;
            if r.arrival < 0.0 || r.arrival + 2.0 * pulse.duration() > period {
                return Err(Error::Phantom(format!(
                    "reflector {i} arrival {:.4e} s does not fit in [0, T - 2Δ]",
                    r.arrival
                )));
            }
            if r.arrival < 2.0 * near {
                return Err(Error::Phantom(format!(
                    "reflector {i} lies in the near field of the aperture ({:.4e} s < {:.4e} s)",
                    r.arrival,
                    2.0 * near
                )));
            }
        }
        Ok(())
    }
}

/// Received signal of one element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementRecord {
    pub element: Element,
    pub samples: Vec<f64>,
    pub noise_std: Option<f64>,
}

/// Additive white Gaussian noise settings. `stream` separates independent
/// draws (e.g. one per steering angle) under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub std: f64,
    pub seed: u64,
    pub stream: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            std: 0.0,
            seed: 0,
            stream: 0,
        }
    }

    pub fn new(std: f64, seed: u64) -> Self {
        Self { std, seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    fn rng(&self, element_index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream.wrapping_mul(1 << 24).wrapping_add(element_index as u64));
        rng
    }
}

/// Arrival time of reflector `r` at element `e`: the pulse leaves unsteered,
/// reaches the reflector and returns to the element.
pub fn echo_arrival(geom: &ArrayGeometry, e: Element, r: &Reflector) -> Result<f64> {
    let law = geom.delay_law(e, r.angle()?);
    Ok(law.tau(r.arrival))
}

/// Synthesizes one record per active element.
///
/// `angle` is the receive steering direction the frame belongs to; echoes
/// depend only on the reflector positions. Reflectors whose echo would not
/// end before `T` at some element are dropped for that element.
pub fn synthesize_element_signals(
    geom: &ArrayGeometry,
    phantom: &Phantom,
    pulse: &Pulse,
    grid: SamplingGrid,
    _angle: SteeringAngle,
    noise: NoiseSpec,
) -> Result<Vec<ElementRecord>> {
    if !(noise.std >= 0.0) || !noise.std.is_finite() {
        return Err(invalid("noise std must be finite and non-negative"));
    }
    let period = grid.period();
    let fs = grid.fs;
    let n = grid.n_samples;
    let delta = pulse.duration();
    let dist = if noise.std > 0.0 {
        Some(Normal::new(0.0, noise.std).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let laws: Vec<Vec<(DelayLaw, f64)>> = {
        let dirs: Vec<_> = phantom
            .reflectors
            .iter()
            .map(|r| r.angle().map(|a| a.direction_cosines()))
            .collect::<Result<_>>()?;
        geom.active()
            .iter()
            .map(|&e| {
                let g = geom.gammas(e);
                dirs.iter()
                    .zip(&phantom.reflectors)
                    .map(|(&d, r)| (DelayLaw::new(g, d), r.amplitude))
                    .collect()
            })
            .collect()
    };
    let records: Vec<(ElementRecord, usize)> = geom
        .active()
        .par_iter()
        .enumerate()
        .map(|(i, &e)| {
            let mut x = vec![0.0; n];
            let mut dropped = 0;
            for ((law, amp), r) in laws[i].iter().zip(&phantom.reflectors) {
                let start = law.tau(r.arrival);
                if start + delta > period {
                    dropped += 1;
                    continue;
                }
                let first = (start * fs).ceil() as usize;
                let last = (((start + delta) * fs).floor() as usize).min(n - 1);
                for (j, v) in x.iter_mut().enumerate().take(last + 1).skip(first) {
                    *v += amp * pulse.eval(j as f64 / fs - start);
                }
            }
            if let Some(d) = dist {
                let mut rng = noise.rng(i);
                for v in &mut x {
                    *v += d.sample(&mut rng);
                }
            }
            let rec = ElementRecord {
                element: e,
                samples: x,
                noise_std: dist.map(|_| noise.std),
            };
            (rec, dropped)
        })
        .collect();
    let dropped: usize = records.iter().map(|r| r.1).sum();
    if dropped > 0 {
        warn!("{dropped} echoes end after the penetration time and were dropped");
    }
    Ok(records.into_iter().map(|r| r.0).collect())
}

/// `σ_{l,m,n}`: local stretch of the aligned echo at `t_l`.
pub fn sigma(geom: &ArrayGeometry, e: Element, angle: SteeringAngle, arrival: f64) -> f64 {
    geom.delay_law(e, angle).tau_derivative(arrival)
}

/// Interval `[t_l, t_end)` over which the echo of a reflector arriving at `t_l`
/// occupies the beam after alignment with `τ_{m,n}`.
pub fn aligned_support(
    geom: &ArrayGeometry,
    e: Element,
    angle: SteeringAngle,
    arrival: f64,
    duration: f64,
) -> Result<(f64, f64)> {
    let law = geom.delay_law(e, angle);
    let end = law.tau_inverse(law.tau(arrival) + duration)?;
    Ok((arrival, end))
}
