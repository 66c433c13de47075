//! Fourier neural solver workbench.
//!
//! Linear systems from 5-point/9-point stencils on the unit square are solved
//! by a stationary smoother combined with a trainable correction applied in
//! frequency space. The crate also provides local Fourier analysis of the
//! smoothers, the offline training loop, and Krylov baselines.

pub mod checkpoint;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod lfa;
pub mod problems;
pub mod smoothers;
pub mod spectral;
pub mod training;
mod transform;

pub use error::{FnsError, Result};
pub use grid::{ComplexGrid, Grid, Stencil3x3};
pub use rustfft::num_complex::Complex64;
pub use transform::{dst2, fft2, idst2, ifft2};
