//! Procedural Raven-style puzzles with known rules.
//!
//! Attributes (shape, size, fill, number, position) follow row-wise rules;
//! the missing panel is surrounded by seven distractors that each change
//! exactly one attribute of the answer. A rule-inference solver re-derives
//! the answer from the symbolic panels and rejects ambiguous puzzles.

mod attrs;
mod distractor;
mod puzzle;
mod raster;
mod rules;
mod solver;

pub use attrs::{masks_with_count, Attribute, AttributeVector, Config, ShapeType};
pub use distractor::make_distractors;
pub use puzzle::{generate_dataset, generate_puzzle, puzzle_rng, GenOptions, Provenance, Puzzle};
pub use raster::{fill_gray, rasterize, Image};
pub use rules::{
    feasible_rows, instantiate_matrix, sample_ruleset, valid_kinds, ArithOp, Matrix, Rule, RuleKind, RuleSet, SetOp,
};
pub use solver::{solve_attributes, solve_by_rules, InferredRules};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("too many consecutive rejections while sampling {0}")]
    TooManyRejections(&'static str),
    #[error("ambiguous puzzle: {satisfying} choices satisfy the inferred rules")]
    Ambiguous { satisfying: usize },
    #[error("puzzle has no symbolic provenance")]
    MissingProvenance,
    #[error("attribute space too small for seven distinct distractors")]
    DistractorSpace,
    #[error("{0}")]
    Invalid(String),
}
