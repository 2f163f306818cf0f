//! Rule-inference solver used to validate generated puzzles.
//!
//! It never looks at the generating rule set. For each attribute it tries
//! every rule in the vocabulary against the two complete rows, keeps the
//! ones that fit, and lets each surviving rule predict the missing value
//! from the first two panels of the third row.

use std::collections::BTreeSet;

use super::attrs::{Attribute, AttributeVector, Config};
use super::rules::{valid_kinds, ArithOp, RuleKind};
use super::{GenError, Puzzle};

fn rotate(row: [u8; 3], k: usize) -> [u8; 3] {
    [row[k % 3], row[(1 + k) % 3], row[(2 + k) % 3]]
}

/// Third-row value predicted by `kind`, or `None` if the two complete rows
/// (or the partial third row) contradict it.
fn predict(kind: RuleKind, r1: [u8; 3], r2: [u8; 3], g: u8, h: u8) -> Option<i32> {
    let [a, b, c] = r1.map(i32::from);
    let [d, e, f] = r2.map(i32::from);
    let (gi, hi) = (g as i32, h as i32);
    match kind {
        RuleKind::Constant => (a == b && b == c && d == e && e == f && g == h).then_some(gi),
        RuleKind::Progression(s) => {
            let s = s as i32;
            (b - a == s && c - b == s && e - d == s && f - e == s && hi - gi == s).then_some(hi + s)
        }
        RuleKind::Arithmetic(ArithOp::Plus) => (c == a + b && f == d + e).then_some(gi + hi),
        RuleKind::Arithmetic(ArithOp::Minus) => (c == a - b && f == d - e).then_some(gi - hi),
        RuleKind::SetOp(op) => {
            (c as u8 == op.apply(a as u8, b as u8) && f as u8 == op.apply(d as u8, e as u8))
                .then(|| op.apply(g, h) as i32)
        }
        RuleKind::DistributeThree => {
            if a == b || b == c || a == c {
                return None;
            }
            [1usize, 2].into_iter().find_map(|k| {
                let third = rotate(r1, 2 * k);
                (rotate(r1, k) == r2 && third[0] == g && third[1] == h).then_some(third[2] as i32)
            })
        }
    }
}

/// Legal values the missing panel may take for one attribute.
fn predictions(attr: Attribute, config: Config, ctx: &[AttributeVector; 8]) -> BTreeSet<u8> {
    let v = |i: usize| ctx[i].get(attr);
    let r1 = [v(0), v(1), v(2)];
    let r2 = [v(3), v(4), v(5)];
    let (lo, hi) = attr.range(config);
    valid_kinds(attr)
        .into_iter()
        .filter_map(|k| predict(k, r1, r2, v(6), v(7)))
        .filter(|&p| p >= lo as i32 && p <= hi as i32)
        .map(|p| p as u8)
        .collect()
}

/// Everything the inferred rules allow for the missing panel.
#[derive(Debug, Clone)]
pub struct InferredRules {
    shape: BTreeSet<u8>,
    size: BTreeSet<u8>,
    fill: BTreeSet<u8>,
    count: BTreeSet<u8>,
    positions: BTreeSet<u8>,
}

impl InferredRules {
    pub fn infer(config: Config, context: &[AttributeVector; 8]) -> Self {
        Self {
            shape: predictions(Attribute::Shape, config, context),
            size: predictions(Attribute::Size, config, context),
            fill: predictions(Attribute::Fill, config, context),
            count: predictions(Attribute::Number, config, context),
            positions: predictions(Attribute::Position, config, context),
        }
    }

    pub fn accepts(&self, cand: &AttributeVector) -> bool {
        self.shape.contains(&cand.shape.index())
            && self.size.contains(&cand.size)
            && self.fill.contains(&cand.fill)
            && (self.positions.contains(&cand.positions) || self.count.contains(&cand.count))
    }
}

/// Index of the unique choice satisfying the inferred rules.
pub fn solve_attributes(
    config: Config,
    context: &[AttributeVector; 8],
    choices: &[AttributeVector; 8],
) -> Result<usize, GenError> {
    let inferred = InferredRules::infer(config, context);
    let accepted: Vec<usize> = (0..8).filter(|&i| inferred.accepts(&choices[i])).collect();
    match accepted.as_slice() {
        [only] => Ok(*only),
        _ => Err(GenError::Ambiguous { satisfying: accepted.len() }),
    }
}

/// Answers a puzzle from its symbolic provenance alone.
pub fn solve_by_rules(puzzle: &Puzzle) -> Result<usize, GenError> {
    let prov = puzzle.provenance.as_ref().ok_or(GenError::MissingProvenance)?;
    let context: [AttributeVector; 8] = std::array::from_fn(|i| prov.matrix[i]);
    solve_attributes(prov.rules.config, &context, &prov.choices)
}
