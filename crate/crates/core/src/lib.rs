//! Volumetric ultrasound beamforming from sub-Nyquist Fourier data.
//!
//! The crate simulates echo signals of point-reflector phantoms on a 2D
//! transducer grid, beamforms them with a dynamic delay-and-sum reference in
//! time, and computes the same beams in the frequency domain from a narrow band
//! of per-element Fourier coefficients. Partial spectra are turned back into
//! beams with an ℓ1 (FRI) recovery. The [`metrics`] module measures point
//! spread functions and beam SNR, and [`pipeline`] ties everything into the
//! `volbeam` command-line tool.

pub mod acquisition;
pub mod config;
pub mod error;
pub mod fdbf;
pub mod fri;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod pulse;
pub mod spectrum;
pub mod time_bf;

pub use error::{Error, Result};
pub use geometry::{ArrayGeometry, Element, SamplingGrid, ScanPattern, SteeringAngle};
