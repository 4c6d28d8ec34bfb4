//! Spectral asymptotics of tensor products of compact operators whose
//! counting functions have the almost regular form φ(1/t)·s(ln(1/t))/t^{1/p},
//! and the logarithmic L₂ small-ball asymptotics they induce.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]

pub mod error;
pub mod fft;
pub mod periodic;
pub mod smalldev;
pub mod quad;
pub mod spectrum;
pub mod svf;
pub mod tensor;

pub use error::{Error, Result};
pub use periodic::{PeriodRelation, PeriodicComponent, PeriodicSpec, RhoFamily, SampledPeriodicFn};
pub use quad::QuadratureSettings;
pub use smalldev::{EigenSource, SmallDevModel};
pub use spectrum::{MarginalSpectrum, SpectrumSpec};
pub use svf::SlowlyVaryingFn;
pub use tensor::{AsymptoticPrediction, CaseKind, CaseTag};
