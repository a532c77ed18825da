//! Ptychographic phase retrieval on a regular grid scan.
//!
//! The crate provides the far-field forward model and its overlap-add
//! pseudoinverse ([`forward`]), the amplitude and consistency projections with
//! the alternating-projections and difference-map solvers ([`projections`]),
//! a learned residual refiner built from amplitude-gated 4D complex
//! convolutions ([`dip`]), training-time noise models ([`noise`]), error
//! metrics ([`metrics`]) and a benchmark harness ([`bench`]).

pub mod bench;
pub mod data;
pub mod dip;
pub mod error;
pub mod forward;
pub mod grid;
pub mod metrics;
pub mod noise;
pub mod projections;
pub mod recon;
pub mod seed;

pub use error::{Error, Result};
pub use forward::{make_gaussian_probe, make_scan_grid, Probe, Ptychography, ScanGrid};
pub use grid::{ComplexGrid2D, ComplexGrid4D, RealGrid4D, C64};
pub use recon::{run_reconstruction, Method, ReconConfig, ReconRequest, Trajectory};
