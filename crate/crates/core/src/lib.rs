//! Turn analytical natural-language text into two-dimensional chart
//! specifications.
//!
//! The work is split into three learned stages plus plumbing around them:
//!
//! 1. [`tagger`] labels every token as an x entity, a y entity or neither.
//! 2. [`mapper`] assigns each x entity its y entity, either with the
//!    distance-likelihood baseline or a random forest over pairwise
//!    distance features.
//! 3. [`chart_type`] decides whether pie and/or line charts fit the text
//!    (bar always does).
//!
//! [`pipeline`] chains the stages, [`render`] turns the result into SVG and
//! [`metrics`] scores every stage.

pub mod chart_type;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod mapper;
pub mod metrics;
pub mod model_file;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod tagger;

pub use error::{Error, Result};
