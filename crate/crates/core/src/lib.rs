//! Sector-cone query embeddings over knowledge graphs.
//!
//! Entities and first-order logic queries are embedded as Cartesian products
//! of two-dimensional sector-cones; conjunction, disjunction, negation, and
//! relation traversal become geometric operations on those cones. The crate
//! provides:
//!
//! - [`geometry`]: the pure cone kernel (parameterization, complement,
//!   angular distances, overlap measures, membership decisions);
//! - [`autodiff`]: a small reverse-mode tape sufficient for the operators
//!   and the training loss;
//! - [`ops`]: the differentiable logical operators and model parameters;
//! - [`dsl`]: the textual query language, computation graphs, and DNF
//!   rewriting;
//! - [`store`]: triple ingestion and the three nested graph tiers;
//! - [`oracle`]: exact query answering by traversal, a brute-force
//!   cross-check, and ground-query sampling;
//! - [`train`]: negative-sampling training with Adam and checkpointing;
//! - [`eval`]: filtered-rank MRR, correlation analyses, and the
//!   set-approximation experiments.

pub mod autodiff;
pub mod geometry;
pub mod ops;
