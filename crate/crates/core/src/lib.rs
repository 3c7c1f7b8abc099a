//! Intensity estimation for nonhomogeneous spatial Poisson processes.
//!
//! Grid cells are clustered by a mixture-of-finite-mixtures (MFM) prior on
//! their Poisson intensities. A collapsed Gibbs sampler infers the number of
//! clusters, the cell assignments, and the per-cluster intensities jointly.
//!
//! Pipeline:
//!
//! 1. [`geo`] parses event catalogs, maps them to the unit square and bins
//!    them into an `r × r` grid of counts.
//! 2. [`model`] holds the prior on the number of components, the `V_n(t)`
//!    coefficient table and the Gamma–Poisson marginal.
//! 3. [`sampler`] runs the chain and stores post burn-in draws.
//! 4. [`summary`] reduces draws to a least-squares (Dahl) clustering, a
//!    posterior-mean intensity surface and the posterior on `k`.
//! 5. [`assess`] computes the Rand index, MAE and LPML.
//! 6. [`sim`] generates synthetic scenarios and runs replicated experiments.

pub mod assess;
pub mod error;
pub mod geo;
pub mod model;
pub mod sampler;
pub mod sim;
pub mod summary;

pub use error::{Error, Result};
pub use geo::{GridCounts, PointPattern, RawEvent, SourceFrame};
pub use model::{KPrior, LogVnTable, MfmConfig};
pub use sampler::{run_chain, ChainOptions, ChainState, Draw, PosteriorDraws, ScanOrder};
pub use summary::{FitSummary, MembershipMean};
