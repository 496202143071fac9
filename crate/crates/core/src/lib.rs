//! Fractional-noise stability toolkit: fBm sampling, fractional calculus on
//! grid functions, Hilbert-space noise, fractional OU modes, a Galerkin
//! primitive-equation model and the stability experiment built on top.

pub mod error;
pub mod fbm;
pub mod frac_calc;
pub mod fractional_ou;
pub mod galerkin;
pub mod grid;
pub mod hilbert_noise;
pub mod seed;
pub mod stability;

pub use error::{Error, Result};
pub use fbm::{FbmMethod, FbmPath, FbmSampler, HurstParam};
pub use frac_calc::FracOrder;
pub use fractional_ou::{EnvelopeKind, ForcingEnvelope, OuTrajectory};
pub use galerkin::{ModelOperators, ModelParams, StructuralConstants};
pub use grid::{GridFunction, TimeGrid};
pub use hilbert_noise::{HilbertFbm, SpectralBasis};
