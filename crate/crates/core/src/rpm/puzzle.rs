use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::attrs::{Attribute, AttributeVector, Config};
use super::distractor::make_distractors;
use super::raster::{rasterize, Image};
use super::rules::{instantiate_matrix, sample_ruleset, RuleSet};
use super::solver::solve_by_rules;
use super::GenError;

/// Symbolic record of how a synthetic puzzle was built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub rules: RuleSet,
    /// Full 3x3 matrix, row-major; entry 8 is the answer panel.
    pub matrix: [AttributeVector; 9],
    pub choices: [AttributeVector; 8],
    /// Attribute perturbed to make each choice; `None` for the answer.
    pub perturbed: [Option<Attribute>; 8],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Puzzle {
    /// The eight known panels, row-major.
    pub context: Vec<Image>,
    pub choices: Vec<Image>,
    pub answer: u8,
    pub image_size: usize,
    pub provenance: Option<Provenance>,
}

impl Puzzle {
    /// Panels 0..16: the context followed by the choices.
    pub fn panel(&self, i: usize) -> &Image {
        if i < 8 {
            &self.context[i]
        } else {
            &self.choices[i - 8]
        }
    }

    pub fn validate_shape(&self) -> Result<(), GenError> {
        let n = self.image_size * self.image_size;
        if self.context.len() != 8 || self.choices.len() != 8 {
            return Err(GenError::Invalid("puzzle needs 8 context panels and 8 choices".into()));
        }
        if self.context.iter().chain(&self.choices).any(|im| im.len() != n) {
            return Err(GenError::Invalid(format!("every panel must be {0}x{0}", self.image_size)));
        }
        if self.answer > 7 {
            return Err(GenError::Invalid(format!("answer {} out of range", self.answer)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    pub config: Config,
    pub image_size: usize,
    /// ±1 px per-object jitter.
    pub jitter: bool,
}

const PUZZLE_ATTEMPTS: usize = 100;

/// Builds one validated puzzle from `rng`.
pub fn generate_puzzle<R: Rng + ?Sized>(opts: &GenOptions, rng: &mut R) -> Result<Puzzle, GenError> {
    if opts.image_size < 16 {
        return Err(GenError::Invalid(format!("image size {} below 16", opts.image_size)));
    }
    let mut last = GenError::TooManyRejections("puzzle");
    for _ in 0..PUZZLE_ATTEMPTS {
        match try_puzzle(opts, rng) {
            Ok(p) => return Ok(p),
            Err(e @ (GenError::Ambiguous { .. } | GenError::DistractorSpace | GenError::TooManyRejections(_))) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

fn try_puzzle<R: Rng + ?Sized>(opts: &GenOptions, rng: &mut R) -> Result<Puzzle, GenError> {
    let rules = sample_ruleset(opts.config, rng)?;
    let grid = instantiate_matrix(&rules, rng)?;
    let matrix: [AttributeVector; 9] = std::array::from_fn(|i| grid[i / 3][i % 3]);
    let context: [AttributeVector; 8] = std::array::from_fn(|i| matrix[i]);
    let target = matrix[8];
    let distractors = make_distractors(&target, &context, opts.config, rng)?;

    let answer = rng.gen_range(0..8usize);
    let mut choices = [target; 8];
    let mut perturbed = [None; 8];
    let mut it = distractors.into_iter();
    for i in (0..8).filter(|&i| i != answer) {
        let (d, attr) = it.next().expect("seven distractors");
        choices[i] = d;
        perturbed[i] = Some(attr);
    }

    let draw = |a: &AttributeVector, rng: &mut R| {
        if opts.jitter {
            rasterize(a, opts.config, opts.image_size, Some(rng))
        } else {
            rasterize::<R>(a, opts.config, opts.image_size, None)
        }
    };
    let context_imgs = context.iter().map(|a| draw(a, rng)).collect();
    let choice_imgs = choices.iter().map(|a| draw(a, rng)).collect();
    let puzzle = Puzzle {
        context: context_imgs,
        choices: choice_imgs,
        answer: answer as u8,
        image_size: opts.image_size,
        provenance: Some(Provenance { rules, matrix, choices, perturbed }),
    };
    let solved = solve_by_rules(&puzzle)?;
    if solved != answer {
        return Err(GenError::Invalid(format!("oracle picked {solved}, generator stored {answer}")));
    }
    Ok(puzzle)
}

/// Per-puzzle generator: an independent ChaCha stream of the master seed.
pub fn puzzle_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n` validated puzzles. Output depends only on `(n, opts, seed)`; puzzles
/// are built in parallel and returned in index order.
pub fn generate_dataset(n: usize, opts: &GenOptions, seed: u64) -> Result<Vec<Puzzle>, GenError> {
    if n == 0 {
        return Err(GenError::Invalid("dataset size must be at least 1".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_puzzle(opts, &mut puzzle_rng(seed, i)))
        .collect()
}
