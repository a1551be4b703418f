//! Core algorithms for three-class (clean / offensive / hate) comment
//! classification: text canonicalization, tokenizers and embeddings, five
//! neural classifiers trained with a class-weighted loss, a stacking
//! ensemble over their probability outputs, and evaluation utilities.

pub mod augment;
pub mod embed;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod models;
pub mod nn;
pub mod textnorm;
pub mod tokenize;
pub mod types;

pub use error::{Error, Result};
pub use types::{ClassLabel, ClassWeights, LabeledComment, ProbabilityTriple, NUM_CLASSES};
