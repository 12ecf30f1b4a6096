//! Unsupervised constituency parsing with an inside-outside span autoencoder,
//! trained with reconstruction and optional partial-structure supervision
//! from span constraints.

pub mod chart;
pub mod constraints;
pub mod corpus;
pub mod decode;
pub mod diff;
pub mod error;
pub mod eval;
pub mod objective;
pub mod synth;
pub mod train;
pub mod tree;
pub mod vocab;

pub use chart::Chart;
pub use constraints::{ConstraintSet, ConstraintSource, SpanConstraint};
pub use corpus::{GoldTree, Sentence};
pub use decode::{ccky, cky, CckyMode};
pub use diff::ModelParams;
pub use error::{Error, Result};
pub use objective::{PsSvmConfig, PsSvmVariant};
pub use tree::{BinaryTree, Span};
pub use vocab::Vocab;
