//! Transducer grid, steering geometry and the dynamic receive delays.
//!
//! Element offsets are measured from a reference point that need not coincide
//! with an element. Delays are expressed in seconds through the normalized
//! offsets `γ = δ / c`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// Smallest admissible denominator of the inverse delay law, in seconds.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-15;

/// Receive steering direction, both angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringAngle {
    pub theta_x: f64,
    pub theta_y: f64,
}

impl SteeringAngle {
    pub fn new(theta_x: f64, theta_y: f64) -> Result<Self> {
        for (name, v) in [("theta_x", theta_x), ("theta_y", theta_y)] {
            if !v.is_finite() || v.abs() >= FRAC_PI_2 {
                return Err(invalid(format!("{name} = {v} rad is outside (-pi/2, pi/2)")));
            }
        }
        Ok(Self { theta_x, theta_y })
    }

    pub fn from_degrees(theta_x: f64, theta_y: f64) -> Result<Self> {
        Self::new(theta_x.to_radians(), theta_y.to_radians())
    }

    pub fn broadside() -> Self {
        Self {
            theta_x: 0.0,
            theta_y: 0.0,
        }
    }

    /// Unit propagation direction `(x_θ, y_θ, z_θ)` of the steered pulse.
    pub fn direction_cosines(&self) -> [f64; 3] {
        direction_cosines(*self)
    }
}

/// Direction cosines of a pulse steered by `(θx, θy)`.
pub fn direction_cosines(angle: SteeringAngle) -> [f64; 3] {
    let (sx, cx) = angle.theta_x.sin_cos();
    let (sy, cy) = angle.theta_y.sin_cos();
    let d = (1.0 - sx * sx * sy * sy).sqrt();
    [sx * cy / d, cx * sy / d, cx * cy / d]
}

/// Grid coordinates of one transducer, zero-based (`m` along x, `n` along y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Element {
    pub m: usize,
    pub n: usize,
}

impl Element {
    pub fn new(m: usize, n: usize) -> Self {
        Self { m, n }
    }
}

/// Delay law of one element for one steering direction.
///
/// Holds `|γ|²` and the projection `γ_m x_θ + γ_n y_θ + γ^z z_θ`; every delay
/// quantity of the beamformers is a closed form in these two numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayLaw {
    pub norm_sq: f64,
    pub projection: f64,
}

impl DelayLaw {
    /// Law of the reference point: `τ(t) = t`.
    pub fn identity() -> Self {
        Self {
            norm_sq: 0.0,
            projection: 0.0,
        }
    }

    pub fn new(gamma: [f64; 3], direction: [f64; 3]) -> Self {
        Self {
            norm_sq: gamma.iter().map(|g| g * g).sum(),
            projection: gamma.iter().zip(direction).map(|(g, d)| g * d).sum(),
        }
    }

    /// `|γ|` in seconds.
    pub fn gamma_norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }

    // (t - 2p)^2 + 4(|γ|^2 - p^2) is the radicand rewritten so that it cannot
    // go negative through cancellation.
    fn root(&self, t: f64) -> f64 {
        let a = t - 2.0 * self.projection;
        let b = (self.norm_sq - self.projection * self.projection).max(0.0);
        (a * a + 4.0 * b).sqrt()
    }

    /// Element time at which the echo aligned with reference time `t` arrives.
    pub fn tau(&self, t: f64) -> f64 {
        0.5 * (t + self.root(t))
    }

    /// `dτ/dt`, always in `[0, 1]`-ish and exactly 1 for the reference.
    pub fn tau_derivative(&self, t: f64) -> f64 {
        let r = self.root(t);
        if r <= f64::MIN_POSITIVE {
            return 0.5;
        }
        0.5 * (1.0 + (t - 2.0 * self.projection) / r)
    }

    /// Inverse of [`DelayLaw::tau`] for `t ≥ |γ|`.
    pub fn tau_inverse(&self, t: f64) -> Result<f64> {
        let g = self.gamma_norm();
        if t < g * (1.0 - 1e-12) {
            return Err(invalid(format!(
                "inverse delay needs t >= |gamma| ({t:e} < {g:e})"
            )));
        }
        let den = t - self.projection;
        if den < DEGENERATE_DENOMINATOR {
            return Err(Error::Geometry(format!(
                "degenerate inverse delay: t - projection = {den:e}"
            )));
        }
        Ok(((t * t - self.norm_sq) / den).max(0.0))
    }
}

/// An `M × N` transducer grid with its active receive subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    rows: usize,
    cols: usize,
    pitch_x: f64,
    pitch_y: f64,
    z_offsets: Vec<f64>,
    reference: (f64, f64),
    speed_of_sound: f64,
    active: Vec<Element>,
}

impl ArrayGeometry {
    /// Planar grid with every element active and the reference point at the
    /// geometric centre (virtual when a dimension is even).
    pub fn planar(rows: usize, cols: usize, pitch_x: f64, pitch_y: f64, speed_of_sound: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Geometry("grid must have at least one element".into()));
        }
        if !(pitch_x > 0.0 && pitch_y > 0.0) {
            return Err(Error::Geometry("pitches must be positive".into()));
        }
        if !(speed_of_sound > 0.0) || !speed_of_sound.is_finite() {
            return Err(Error::Geometry("speed of sound must be positive".into()));
        }
        let active = (0..rows)
            .flat_map(|m| (0..cols).map(move |n| Element::new(m, n)))
            .collect();
        Ok(Self {
            rows,
            cols,
            pitch_x,
            pitch_y,
            z_offsets: vec![0.0; rows * cols],
            reference: ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0),
            speed_of_sound,
            active,
        })
    }

    /// Replaces the active receive set. Duplicates are removed, order is kept.
    pub fn with_active(mut self, active: Vec<Element>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut list = Vec::with_capacity(active.len());
        for e in active {
            if e.m >= self.rows || e.n >= self.cols {
                return Err(Error::Geometry(format!(
                    "element ({}, {}) lies outside the {}x{} grid",
                    e.m, e.n, self.rows, self.cols
                )));
            }
            if seen.insert(e) {
                list.push(e);
            }
        }
        if list.is_empty() {
            return Err(Error::Geometry("active set is empty".into()));
        }
        self.active = list;
        Ok(self)
    }

    /// Moves the reference point, in (possibly fractional) grid coordinates.
    pub fn with_reference(mut self, m0: f64, n0: f64) -> Result<Self> {
        if !m0.is_finite() || !n0.is_finite() {
            return Err(Error::Geometry("reference must be finite".into()));
        }
        self.reference = (m0, n0);
        Ok(self)
    }

    /// Per-element heights along z (row-major, metres).
    pub fn with_z_offsets(mut self, z: Vec<f64>) -> Result<Self> {
        if z.len() != self.rows * self.cols {
            return Err(Error::Geometry(format!(
                "expected {} z offsets, got {}",
                self.rows * self.cols,
                z.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("z offsets must be finite".into()));
        }
        self.z_offsets = z;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pitch(&self) -> (f64, f64) {
        (self.pitch_x, self.pitch_y)
    }

    pub fn reference(&self) -> (f64, f64) {
        self.reference
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    pub fn active(&self) -> &[Element] {
        &self.active
    }

    /// `N_RX`, the number of receiving elements.
    pub fn n_rx(&self) -> usize {
        self.active.len()
    }

    pub fn contains(&self, e: Element) -> bool {
        e.m < self.rows && e.n < self.cols
    }

    /// Offsets `(δ_m, δ_n, δ^z)` in metres.
    pub fn offsets(&self, e: Element) -> [f64; 3] {
        [
            (e.m as f64 - self.reference.0) * self.pitch_x,
            (e.n as f64 - self.reference.1) * self.pitch_y,
            self.z_offsets[e.m * self.cols + e.n],
        ]
    }

    /// Offsets divided by the speed of sound, in seconds.
    pub fn gammas(&self, e: Element) -> [f64; 3] {
        self.offsets(e).map(|d| d / self.speed_of_sound)
    }

    pub fn delay_law(&self, e: Element, angle: SteeringAngle) -> DelayLaw {
        DelayLaw::new(self.gammas(e), angle.direction_cosines())
    }

    /// Feeds a canonical byte encoding into `hasher`.
    pub(crate) fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update((self.rows as u64).to_le_bytes());
        hasher.update((self.cols as u64).to_le_bytes());
        for v in [
            self.pitch_x,
            self.pitch_y,
            self.reference.0,
            self.reference.1,
            self.speed_of_sound,
        ] {
            hasher.update(v.to_le_bytes());
        }
        for z in &self.z_offsets {
            hasher.update(z.to_le_bytes());
        }
        hasher.update((self.active.len() as u64).to_le_bytes());
        for e in &self.active {
            hasher.update((e.m as u64).to_le_bytes());
            hasher.update((e.n as u64).to_le_bytes());
        }
    }
}

fn check_element(geom: &ArrayGeometry, e: Element) -> Result<()> {
    if geom.contains(e) {
        Ok(())
    } else {
        Err(Error::Geometry(format!("element ({}, {}) not in grid", e.m, e.n)))
    }
}

/// `τ_{m,n}(t; θx, θy)`: element time aligned with reference time `t`.
pub fn delay_tau(geom: &ArrayGeometry, e: Element, angle: SteeringAngle, t: f64) -> Result<f64> {
    check_element(geom, e)?;
    if !(t >= 0.0) {
        return Err(invalid(format!("delay needs t >= 0, got {t}")));
    }
    let law = geom.delay_law(e, angle);
    let radicand = t * t + 4.0 * law.norm_sq - 4.0 * t * law.projection;
    if radicand < -1e-12 * (t * t + law.norm_sq) {
        return Err(Error::Geometry(format!("negative delay radicand {radicand:e}")));
    }
    Ok(law.tau(t))
}

/// `τ⁻¹_{m,n}(t; θx, θy)` for `t ≥ |γ_{m,n}|`.
pub fn delay_tau_inverse(geom: &ArrayGeometry, e: Element, angle: SteeringAngle, t: f64) -> Result<f64> {
    check_element(geom, e)?;
    geom.delay_law(e, angle).tau_inverse(t)
}

/// Upper bound `T_B` on the support of the beamformed signal.
pub fn beam_support(geom: &ArrayGeometry, angle: SteeringAngle, period: f64) -> Result<f64> {
    if !(period > 0.0) {
        return Err(invalid("penetration time must be positive"));
    }
    if geom.active.is_empty() {
        return Err(Error::Geometry("active set is empty".into()));
    }
    let dir = angle.direction_cosines();
    let mut tb = f64::INFINITY;
    for &e in &geom.active {
        let law = DelayLaw::new(geom.gammas(e), dir);
        tb = tb.min(law.tau_inverse(period)?);
    }
    Ok(tb)
}

/// Sampling of one record: rate `f_s` and `N` samples spanning `T = N / f_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub fs: f64,
    pub n_samples: usize,
}

impl SamplingGrid {
    pub fn new(fs: f64, n_samples: usize) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(invalid("sampling rate must be positive"));
        }
        if n_samples < 2 {
            return Err(invalid("need at least two samples per record"));
        }
        Ok(Self { fs, n_samples })
    }

    /// Grid for a round trip to `depth` metres: `N = round(2 depth / c · f_s)`.
    pub fn for_depth(depth: f64, speed_of_sound: f64, fs: f64) -> Result<Self> {
        if !(depth > 0.0) {
            return Err(invalid("depth must be positive"));
        }
        let n = (2.0 * depth / speed_of_sound * fs).round() as usize;
        Self::new(fs, n)
    }

    /// Fourier period `T`.
    pub fn period(&self) -> f64 {
        self.n_samples as f64 / self.fs
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }
}

/// Rectangular raster of steering angles, `θx`-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPattern {
    nx: usize,
    ny: usize,
    theta_x: Vec<f64>,
    theta_y: Vec<f64>,
    period: f64,
}

impl ScanPattern {
    /// `nx × ny` uniform raster spanning `±half_x`, `±half_y` radians.
    pub fn raster(nx: usize, ny: usize, half_x: f64, half_y: f64, period: f64) -> Result<Self> {
        fn axis(n: usize, half: f64) -> Vec<f64> {
            if n == 1 {
                vec![0.0]
            } else {
                (0..n)
                    .map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64)
                    .collect()
            }
        }
        Self::from_axes(axis(nx, half_x), axis(ny, half_y), period)
    }

    pub fn from_axes(theta_x: Vec<f64>, theta_y: Vec<f64>, period: f64) -> Result<Self> {
        if theta_x.is_empty() || theta_y.is_empty() {
            return Err(invalid("scan raster must not be empty"));
        }
        if !(period > 0.0) {
            return Err(invalid("penetration time must be positive"));
        }
        for &t in theta_x.iter().chain(&theta_y) {
            SteeringAngle::new(t, 0.0)?;
        }
        Ok(Self {
            nx: theta_x.len(),
            ny: theta_y.len(),
            theta_x,
            theta_y,
            period,
        })
    }

    /// Single steering direction.
    pub fn single(angle: SteeringAngle, period: f64) -> Result<Self> {
        Self::from_axes(vec![angle.theta_x], vec![angle.theta_y], period)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn theta_x_axis(&self) -> &[f64] {
        &self.theta_x
    }

    pub fn theta_y_axis(&self) -> &[f64] {
        &self.theta_y
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    pub fn angle(&self, index: usize) -> SteeringAngle {
        let (ix, iy) = (index / self.ny, index % self.ny);
        SteeringAngle {
            theta_x: self.theta_x[ix],
            theta_y: self.theta_y[iy],
        }
    }

    pub fn angles(&self) -> impl Iterator<Item = SteeringAngle> + '_ {
        (0..self.len()).map(|i| self.angle(i))
    }

    pub(crate) fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update((self.nx as u64).to_le_bytes());
        hasher.update((self.ny as u64).to_le_bytes());
        for v in self.theta_x.iter().chain(&self.theta_y) {
            hasher.update(v.to_le_bytes());
        }
        hasher.update(self.period.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid32() -> ArrayGeometry {
        ArrayGeometry::planar(32, 32, 140e-6, 140e-6, 1540.0).unwrap()
    }

    #[test]
    fn broadside_direction() {
        assert_eq!(direction_cosines(SteeringAngle::broadside()), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn planar_reduction() {
        let a = SteeringAngle::new(0.4, 0.0).unwrap();
        let [x, y, z] = a.direction_cosines();
        assert!((x - 0.4f64.sin()).abs() < 1e-15);
        assert_eq!(y, 0.0);
        assert!((z - 0.4f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn rejects_grazing_angles() {
        assert!(SteeringAngle::new(FRAC_PI_2, 0.0).is_err());
        assert!(SteeringAngle::new(0.0, -2.0).is_err());
    }

    #[test]
    fn reference_law_is_identity() {
        let law = DelayLaw::identity();
        for t in [0.0, 1e-6, 3.3e-5] {
            assert_eq!(law.tau(t), t);
            assert_eq!(law.tau_inverse(t.max(1e-9)).unwrap(), t.max(1e-9));
        }
    }

    #[test]
    fn delay_at_zero_is_gamma_norm() {
        let g = grid32();
        let a = SteeringAngle::new(0.1, -0.2).unwrap();
        for e in [Element::new(0, 0), Element::new(31, 5), Element::new(16, 16)] {
            let law = g.delay_law(e, a);
            let tau0 = delay_tau(&g, e, a, 0.0).unwrap();
            assert!((tau0 - law.gamma_norm()).abs() < 1e-18);
        }
    }

    #[test]
    fn inverse_rejects_short_times_and_degenerate_rays() {
        let g = grid32();
        let a = SteeringAngle::broadside();
        assert!(delay_tau_inverse(&g, Element::new(0, 0), a, 0.0).is_err());
        // Element exactly on the steering ray: projection equals |γ|.
        let law = DelayLaw {
            norm_sq: 1e-12,
            projection: 1e-6,
        };
        assert!(matches!(law.tau_inverse(1e-6), Err(Error::Geometry(_))));
    }

    #[test]
    fn support_of_reference_only_aperture_is_period() {
        let g = ArrayGeometry::planar(1, 1, 1e-4, 1e-4, 1540.0).unwrap();
        let a = SteeringAngle::new(0.2, 0.1).unwrap();
        assert_eq!(beam_support(&g, a, 7e-5).unwrap(), 7e-5);
    }

    #[test]
    fn active_set_validation() {
        let g = grid32();
        assert!(g.clone().with_active(vec![]).is_err());
        assert!(g.clone().with_active(vec![Element::new(32, 0)]).is_err());
        let g2 = g.with_active(vec![Element::new(1, 1), Element::new(1, 1)]).unwrap();
        assert_eq!(g2.n_rx(), 1);
    }

    #[test]
    fn sampling_grid_matches_reference_setup() {
        let s = SamplingGrid::for_depth(0.055, 1540.0, 18.25e6).unwrap();
        assert_eq!(s.n_samples, 1304);
    }

    #[test]
    fn raster_indexing() {
        let s = ScanPattern::raster(3, 2, 0.1, 0.05, 1e-4).unwrap();
        assert_eq!(s.len(), 6);
        let a = s.angle(s.index(2, 0));
        assert!((a.theta_x - 0.1).abs() < 1e-15);
        assert!((a.theta_y + 0.05).abs() < 1e-15);
    }
}
