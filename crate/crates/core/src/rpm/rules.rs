use rand::seq::SliceRandom;
use rand::Rng;

use super::attrs::{masks_with_count, Attribute, AttributeVector, Config, ShapeType};
use super::GenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetOp {
    And,
    Or,
    Xor,
}

impl SetOp {
    pub fn apply(self, a: u8, b: u8) -> u8 {
        match self {
            SetOp::And => a & b,
            SetOp::Or => a | b,
            SetOp::Xor => a ^ b,
        }
    }
}

/// Relation an attribute obeys along every row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    /// One value for the whole matrix.
    Constant,
    /// `v, v+step, v+2·step` within each row; step in {-2,-1,1,2}.
    Progression(i8),
    /// Third value is the sum or difference of the first two.
    Arithmetic(ArithOp),
    /// Three distinct values, each row a cyclic shift of the previous one.
    DistributeThree,
    /// Third mask is a set operation of the first two (positions only).
    SetOp(SetOp),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rule {
    pub attribute: Attribute,
    pub kind: RuleKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub config: Config,
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn rule_for(&self, attr: Attribute) -> Option<RuleKind> {
        self.rules.iter().find(|r| r.attribute == attr).map(|r| r.kind)
    }
}

pub type Matrix = [[AttributeVector; 3]; 3];

const STEPS: [i8; 4] = [-2, -1, 1, 2];

/// Rule kinds meaningful for an attribute.
pub fn valid_kinds(attr: Attribute) -> Vec<RuleKind> {
    let progressions = STEPS.iter().map(|&s| RuleKind::Progression(s));
    let arith = [RuleKind::Arithmetic(ArithOp::Plus), RuleKind::Arithmetic(ArithOp::Minus)];
    let mut kinds = vec![RuleKind::Constant];
    match attr {
        Attribute::Shape => kinds.extend(progressions),
        Attribute::Size | Attribute::Fill | Attribute::Number => {
            kinds.extend(progressions);
            kinds.extend(arith);
        }
        Attribute::Position => {
            kinds.extend([SetOp::And, SetOp::Or, SetOp::Xor].map(RuleKind::SetOp));
        }
    }
    kinds.push(RuleKind::DistributeThree);
    kinds
}

fn legal_values(attr: Attribute, config: Config) -> Vec<u8> {
    let (lo, hi) = attr.range(config);
    (lo..=hi).collect()
}

/// Every in-range row `(a, b, c)` obeying a row-local rule. `None` for rules
/// that constrain across rows (Constant, DistributeThree).
pub fn feasible_rows(attr: Attribute, kind: RuleKind, config: Config) -> Option<Vec<[u8; 3]>> {
    let vals = legal_values(attr, config);
    let (lo, hi) = attr.range(config);
    let ok = |v: i32| v >= lo as i32 && v <= hi as i32;
    let mut rows = Vec::new();
    match kind {
        RuleKind::Constant | RuleKind::DistributeThree => return None,
        RuleKind::Progression(s) => {
            for &a in &vals {
                let (b, c) = (a as i32 + s as i32, a as i32 + 2 * s as i32);
                if ok(b) && ok(c) {
                    rows.push([a, b as u8, c as u8]);
                }
            }
        }
        RuleKind::Arithmetic(op) => {
            for &a in &vals {
                for &b in &vals {
                    let c = match op {
                        ArithOp::Plus => a as i32 + b as i32,
                        ArithOp::Minus => a as i32 - b as i32,
                    };
                    if ok(c) {
                        rows.push([a, b, c as u8]);
                    }
                }
            }
        }
        RuleKind::SetOp(op) => {
            for &a in &vals {
                for &b in &vals {
                    let c = op.apply(a, b);
                    if ok(c as i32) && a != b {
                        rows.push([a, b, c]);
                    }
                }
            }
        }
    }
    Some(rows)
}

fn kind_is_feasible(attr: Attribute, kind: RuleKind, config: Config) -> bool {
    match kind {
        RuleKind::Constant => true,
        RuleKind::DistributeThree => legal_values(attr, config).len() >= 3,
        _ => feasible_rows(attr, kind, config).is_some_and(|r| !r.is_empty()),
    }
}

const MAX_REJECTIONS: usize = 1000;

/// Draws 1..=4 rules (capped by the attributes the configuration has) on
/// distinct attributes, with Number and Position mutually exclusive.
pub fn sample_ruleset<R: Rng + ?Sized>(config: Config, rng: &mut R) -> Result<RuleSet, GenError> {
    // Number and Position are two views of one layout field.
    let mut fields: Vec<Vec<Attribute>> =
        vec![vec![Attribute::Shape], vec![Attribute::Size], vec![Attribute::Fill]];
    if config == Config::Grid2x2 {
        fields.push(vec![Attribute::Number, Attribute::Position]);
    }
    for _ in 0..MAX_REJECTIONS {
        let n = rng.gen_range(1..=fields.len().min(4));
        let chosen: Vec<&Vec<Attribute>> = fields.choose_multiple(rng, n).collect();
        let mut rules = Vec::with_capacity(n);
        for field in chosen {
            let attribute = *field.choose(rng).expect("non-empty field");
            let kind = *valid_kinds(attribute).choose(rng).expect("non-empty kinds");
            rules.push(Rule { attribute, kind });
        }
        if rules.iter().all(|r| kind_is_feasible(r.attribute, r.kind, config)) {
            rules.sort_by_key(|r| r.attribute);
            return Ok(RuleSet { config, rules });
        }
    }
    Err(GenError::TooManyRejections("rule set"))
}

/// Values of one scalar field over the 3x3 grid.
fn field_values<R: Rng + ?Sized>(
    attr: Attribute,
    kind: Option<RuleKind>,
    config: Config,
    rng: &mut R,
) -> Result<[[u8; 3]; 3], GenError> {
    let vals = legal_values(attr, config);
    let mut grid = [[0u8; 3]; 3];
    match kind {
        None => {
            for row in &mut grid {
                *row = [*vals.choose(rng).expect("values"); 3];
            }
        }
        Some(RuleKind::Constant) => grid = [[*vals.choose(rng).expect("values"); 3]; 3],
        Some(RuleKind::DistributeThree) => {
            let three: Vec<u8> = vals.choose_multiple(rng, 3).copied().collect();
            if three.len() < 3 {
                return Err(GenError::TooManyRejections("distribute-three values"));
            }
            let shift = if rng.gen_bool(0.5) { 1 } else { 2 };
            for (r, row) in grid.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = three[(c + r * shift) % 3];
                }
            }
        }
        Some(k) => {
            let rows = feasible_rows(attr, k, config).unwrap_or_default();
            if rows.is_empty() {
                return Err(GenError::TooManyRejections("row instantiation"));
            }
            for row in &mut grid {
                *row = *rows.choose(rng).expect("non-empty rows");
            }
        }
    }
    Ok(grid)
}

/// Fills a 3x3 attribute matrix obeying every rule row-wise. Ungoverned
/// attributes take a random value per row, constant within the row.
pub fn instantiate_matrix<R: Rng + ?Sized>(rules: &RuleSet, rng: &mut R) -> Result<Matrix, GenError> {
    let config = rules.config;
    let shape = field_values(Attribute::Shape, rules.rule_for(Attribute::Shape), config, rng)?;
    let size = field_values(Attribute::Size, rules.rule_for(Attribute::Size), config, rng)?;
    let fill = field_values(Attribute::Fill, rules.rule_for(Attribute::Fill), config, rng)?;
    let masks: [[u8; 3]; 3] = match config {
        Config::Center => [[1; 3]; 3],
        Config::Grid2x2 => match (rules.rule_for(Attribute::Number), rules.rule_for(Attribute::Position)) {
            (Some(k), _) => {
                let counts = field_values(Attribute::Number, Some(k), config, rng)?;
                counts.map(|row| row.map(|c| *masks_with_count(4, c).choose(rng).expect("count in range")))
            }
            (None, k) => field_values(Attribute::Position, k, config, rng)?,
        },
    };
    let mut m = [[AttributeVector::new(ShapeType::Circle, 1, 1, 1); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = AttributeVector::new(
                ShapeType::from_index(shape[r][c]).expect("shape in range"),
                size[r][c],
                fill[r][c],
                masks[r][c],
            );
        }
    }
    if m.iter().flatten().any(|a| !a.is_valid(config)) {
        return Err(GenError::Invalid("attribute left its range".into()));
    }
    Ok(m)
}
