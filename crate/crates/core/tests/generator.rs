use std::collections::HashSet;

use dcnet::rpm::{
    generate_dataset, sample_ruleset, solve_attributes, solve_by_rules, ArithOp, Attribute, AttributeVector, Config,
    GenError, GenOptions, RuleKind, SetOp,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn opts(config: Config) -> GenOptions {
    GenOptions { config, image_size: 16, jitter: false }
}

#[test]
fn every_rule_kind_is_sampled() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = HashSet::new();
    for _ in 0..10_000 {
        for r in sample_ruleset(Config::Grid2x2, &mut rng).unwrap().rules {
            seen.insert(r.kind);
        }
    }
    let mut want = vec![RuleKind::Constant, RuleKind::DistributeThree];
    want.extend([-2, -1, 1, 2].map(RuleKind::Progression));
    want.extend([ArithOp::Plus, ArithOp::Minus].map(RuleKind::Arithmetic));
    want.extend([SetOp::And, SetOp::Or, SetOp::Xor].map(RuleKind::SetOp));
    for k in want {
        assert!(seen.contains(&k), "{k:?} never sampled");
    }
}

#[test]
fn generated_puzzles_are_sound() {
    for config in [Config::Center, Config::Grid2x2] {
        let puzzles = generate_dataset(300, &opts(config), 17).unwrap();
        for p in &puzzles {
            p.validate_shape().unwrap();
            let prov = p.provenance.as_ref().unwrap();
            assert_eq!(solve_by_rules(p).unwrap(), p.answer as usize);
            let target = prov.matrix[8];
            assert_eq!(prov.choices[p.answer as usize], target);
            let context: [AttributeVector; 8] = std::array::from_fn(|i| prov.matrix[i]);
            for (i, c) in prov.choices.iter().enumerate() {
                assert!(c.is_valid(config));
                if i == p.answer as usize {
                    continue;
                }
                assert_eq!(c.distance(&target), 1);
                assert!(prov.perturbed[i].is_some());
                // Putting this distractor in the answer slot must not satisfy the oracle.
                let mut swapped = prov.choices;
                swapped.swap(i, p.answer as usize);
                swapped[p.answer as usize] = *c;
                swapped[i] = *c;
                assert!(matches!(solve_attributes(config, &context, &swapped), Err(GenError::Ambiguous { satisfying: 0 })));
            }
            let distinct: HashSet<_> = prov.choices.iter().collect();
            assert_eq!(distinct.len(), 8);
            for r in &prov.rules.rules {
                if config == Config::Center {
                    assert!(!r.attribute.is_layout());
                }
            }
        }
    }
}

#[test]
fn rule_rows_hold_in_the_matrix() {
    for p in generate_dataset(200, &opts(Config::Grid2x2), 5).unwrap() {
        let prov = p.provenance.unwrap();
        for rule in &prov.rules.rules {
            let v = |i: usize| prov.matrix[i].get(rule.attribute) as i32;
            for r in 0..3 {
                let (a, b, c) = (v(3 * r), v(3 * r + 1), v(3 * r + 2));
                match rule.kind {
                    RuleKind::Constant => assert!(a == v(0) && b == v(0) && c == v(0)),
                    RuleKind::Progression(s) => assert!(b - a == s as i32 && c - b == s as i32),
                    RuleKind::Arithmetic(ArithOp::Plus) => assert_eq!(c, a + b),
                    RuleKind::Arithmetic(ArithOp::Minus) => assert_eq!(c, a - b),
                    RuleKind::SetOp(op) => assert_eq!(c as u8, op.apply(a as u8, b as u8)),
                    RuleKind::DistributeThree => {
                        let mut row = [a, b, c];
                        let mut first = [v(0), v(1), v(2)];
                        row.sort();
                        first.sort();
                        assert_eq!(row, first);
                    }
                }
            }
        }
        let governed: Vec<Attribute> = prov.rules.rules.iter().map(|r| r.attribute).collect();
        for attr in [Attribute::Shape, Attribute::Size, Attribute::Fill] {
            if !governed.contains(&attr) {
                for r in 0..3 {
                    let row: HashSet<u8> = (0..3).map(|c| prov.matrix[3 * r + c].get(attr)).collect();
                    assert_eq!(row.len(), 1, "free attribute must be constant in a row");
                }
            }
        }
    }
}

#[test]
fn replaced_answer_is_rejected() {
    let p = &generate_dataset(1, &opts(Config::Center), 2).unwrap()[0];
    let mut broken = p.clone();
    let prov = broken.provenance.as_mut().unwrap();
    let other = (p.answer as usize + 1) % 8;
    prov.choices[p.answer as usize] = prov.choices[other];
    assert!(matches!(solve_by_rules(&broken), Err(GenError::Ambiguous { .. })));
}

#[test]
fn answers_are_balanced() {
    let puzzles = generate_dataset(1000, &opts(Config::Center), 7).unwrap();
    let mut counts = [0usize; 8];
    for p in &puzzles {
        counts[p.answer as usize] += 1;
    }
    assert!(counts.iter().all(|&c| (90..=160).contains(&c)), "{counts:?}");
}

#[test]
fn generation_is_deterministic() {
    let a = generate_dataset(20, &GenOptions { jitter: true, ..opts(Config::Grid2x2) }, 9).unwrap();
    let b = generate_dataset(20, &GenOptions { jitter: true, ..opts(Config::Grid2x2) }, 9).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(20, &GenOptions { jitter: true, ..opts(Config::Grid2x2) }, 10).unwrap();
    assert_ne!(a, c);
}
