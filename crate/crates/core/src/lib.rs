//! Quality-weighted Gaussian process regression for heterogeneous
//! weather station networks.
//!
//! A small number of trusted reference stations is fused with a much
//! larger set of volunteered (citizen) stations of unknown reliability.
//! Each station carries a quality score `q` in `(0, 1]` that scales a
//! per-observation noise term `lambda / q^2` on the diagonal of the
//! Gram matrix, so that doubtful stations are softly downweighted
//! instead of discarded. The scores themselves are learned by an
//! evolutionary search ([`evolve`]) that minimises the squared
//! prediction error of held-out reference stations.
//!
//! Module map:
//!
//! * [`geo`] - stations, observations, datasets, distance metrics
//! * [`kernel`] - Matern covariance plus the quality noise kernel
//! * [`gpr`] - Cholesky-based GP regression on a combined kernel
//! * [`evolve`] - evolutionary search for per-station qualities
//! * [`dataio`] - CSV ingestion/serialisation and synthetic scenarios
//! * [`evaluate`] - k-fold cross-validated model comparison
//! * [`grid`] - prediction grids and heatmap rendering

pub mod dataio;
pub mod evaluate;
pub mod evolve;
mod fsutil;
pub mod geo;
pub mod gpr;
pub mod grid;
pub mod kernel;
pub mod pixmap;
