//! Trajectory similarity toolkit.
//!
//! Two halves, one crate:
//!
//! - **Exact heuristic distances** ([`heuristics`]): SSPD, point-set Hausdorff
//!   and discrete Fréchet, plus a parallel all-pairs ground-truth matrix
//!   builder with a binary on-disk format.
//! - **Learned similarity** ([`sam`], [`ddbm`], [`ranking`], [`train`]): a
//!   dual-scale attention encoder over GPS and grid features, trained with a
//!   diffusion-bridge reconstruction objective and fine-tuned against the
//!   heuristic ground truth with MSE plus list-wise ranking losses, all on a
//!   small f64 reverse-mode tape ([`autodiff`]) whose gradients are verified
//!   by finite differences.
//!
//! [`retrieval`] evaluates the learned embeddings against the ground truth
//! with top-k hit ratio and recall metrics.

pub mod autodiff;
pub mod config;
pub mod ddbm;
pub mod error;
pub mod heuristics;
pub mod ranking;
pub mod retrieval;
pub mod sam;
pub mod synth;
pub mod traj;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use heuristics::{DistanceMatrix, DistanceMode, MetricTag};
pub use traj::{BoundingBox, DatasetSplit, GridSequence, GridSpec, Point, Trajectory};
