//! Logistic disjunctive normal networks (LDNN).
//!
//! An `N x M` LDNN approximates the positive region of a binary problem as a
//! union of `N` convex polytopes, each the intersection of `M` soft
//! half-spaces. Conjunctions are products of logistic sigmoids and the
//! disjunction is a soft NAND of their negations, so the whole network is
//! differentiable and trains with plain per-sample gradient descent.
//!
//! - [`model`]: parameters, forward pass, losses and analytic gradients
//! - [`dnf`]: the hard half-space DNF the network converges to under scaling
//! - [`init`]: k-means / farthest-first clustering and pairwise-centroid init
//! - [`train`]: SGD with momentum, annealing and validation-based stopping
//! - [`modn`]: the pairwise-trained min/max modular baseline
//! - [`conv`]: convolution + max-pool feature stacks trained jointly with LDNN heads
//! - [`data`]: generators, CSV/IDX readers, normalization, splits
//! - [`eval`]: error rates, repeated trials, decision-boundary rasters
//! - [`gradcheck`]: finite-difference verification of every analytic gradient

pub mod conv;
pub mod data;
pub mod dnf;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod init;
pub mod model;
pub mod modn;
pub mod seed;
pub mod train;

pub use data::Dataset;
pub use dnf::{dnf_classify, saturation_agreement, DiscreteDnf};
pub use error::{LdnnError, Result};
pub use init::{Clustering, InitMode};
pub use model::{ForwardTrace, Gradient, LdnnModel, LossKind, MulticlassModel};

pub use train::{fit, fit_multiclass, History, TrainConfig};
