use rand::seq::SliceRandom;
use rand::Rng;

use super::attrs::{masks_with_count, Attribute, AttributeVector, Config};
use super::solver::InferredRules;
use super::GenError;

/// Attributes a distractor may perturb. Layout perturbations change the
/// object count so count-based rules cannot accept them.
fn perturbable(config: Config) -> &'static [Attribute] {
    match config {
        Config::Center => &[Attribute::Shape, Attribute::Size, Attribute::Fill],
        Config::Grid2x2 => &[Attribute::Shape, Attribute::Size, Attribute::Fill, Attribute::Number],
    }
}

/// Values of `attr` reachable from `target` in direction `dir`, nearest first.
fn walk(target: &AttributeVector, attr: Attribute, dir: i32, config: Config) -> Vec<u8> {
    let (lo, hi) = attr.range(config);
    let start = target.get(attr) as i32;
    (1..)
        .map(|d| start + dir * d)
        .take_while(|&v| v >= lo as i32 && v <= hi as i32)
        .map(|v| v as u8)
        .collect()
}

/// One-attribute variants of `target` that the inferred rules reject.
///
/// Each distractor picks an attribute and a direction at random and takes
/// the nearest value in that direction not already used; if that direction
/// is exhausted it tries the other one.
pub fn make_distractors<R: Rng + ?Sized>(
    target: &AttributeVector,
    context: &[AttributeVector; 8],
    config: Config,
    rng: &mut R,
) -> Result<Vec<(AttributeVector, Attribute)>, GenError> {
    let inferred = InferredRules::infer(config, context);
    if !inferred.accepts(target) {
        return Err(GenError::Invalid("target does not satisfy the context rules".into()));
    }
    let attrs = perturbable(config);
    let mut out: Vec<(AttributeVector, Attribute)> = Vec::with_capacity(7);
    let mut attempts = 0;
    while out.len() < 7 {
        attempts += 1;
        if attempts > 200 {
            return Err(GenError::DistractorSpace);
        }
        let attr = *attrs.choose(rng).expect("attributes");
        let first = if rng.gen_bool(0.5) { 1 } else { -1 };
        let found = [first, -first].into_iter().find_map(|dir| {
            walk(target, attr, dir, config).into_iter().find_map(|v| {
                let mut cand = *target;
                if attr == Attribute::Number {
                    let masks = masks_with_count(config.slots(), v);
                    cand.set_positions(*masks.choose(rng).expect("count in range"));
                } else {
                    cand.set(attr, v);
                }
                let fresh = cand != *target && out.iter().all(|(d, _)| *d != cand);
                (fresh && !inferred.accepts(&cand)).then_some(cand)
            })
        });
        if let Some(cand) = found {
            out.push((cand, attr));
        }
    }
    Ok(out)
}
