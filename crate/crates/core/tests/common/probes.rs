//! Measurements of the model's structural invariants.

use dcnet::model::*;
use dcnet::rpm::{generate_dataset, Config, GenOptions, Puzzle};
use dcnet::tensor::{Mode, Tape, Tensor};
use rand::rngs::mock::StepRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_cfg() -> DcnetConfig {
    DcnetConfig { channels: ChannelPlan { stem: 4, out: 8 }, hidden: 16, ..DcnetConfig::desk() }
}

pub fn puzzles(n: usize, seed: u64) -> Vec<Puzzle> {
    generate_dataset(n, &GenOptions { config: Config::Center, image_size: 32, jitter: false }, seed).unwrap()
}

/// A model whose running statistics come from one training batch, so
/// eval-mode batch norm is not the identity.
pub fn warmed(cfg: DcnetConfig, data: &[Puzzle]) -> Dcnet {
    let mut net = Dcnet::new(cfg).unwrap();
    let mut tape = Tape::new();
    let refs: Vec<&Puzzle> = data.iter().take(4).collect();
    let x = tape.constant(batch_triples(&refs).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pass = Pass::new(Mode::Train, &mut rng);
    net.forward(&mut tape, x, &mut pass).unwrap();
    let updates = std::mem::take(&mut pass.updates);
    net.commit(updates);
    net
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn all(data: &[Puzzle]) -> Vec<&Puzzle> {
    data.iter().collect()
}

/// Max |s(P·x)_k - s(x)_{perm[k]}| over `n` puzzles with random candidate
/// permutations, in eval mode.
pub fn permutation_error(n: usize, seed: u64) -> f64 {
    let data = puzzles(n, seed);
    let net = warmed(small_cfg(), &data);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perms = Vec::new();
    let mut permuted = Vec::new();
    for p in &data {
        let mut perm = [0, 1, 2, 3, 4, 5, 6, 7];
        perm.shuffle(&mut rng);
        permuted.push(permute_choices(p, &perm));
        perms.push(perm);
    }
    let a = net.scores(&all(&data)).unwrap();
    let b = net.scores(&all(&permuted)).unwrap();
    let mut worst = 0.0f64;
    for (i, perm) in perms.iter().enumerate() {
        for k in 0..8 {
            worst = worst.max((b.data()[i * 8 + k] - a.data()[i * 8 + perm[k]]).abs());
        }
    }
    worst
}

/// Max score change when the 3x3 context is transposed, over `n` puzzles.
pub fn transposition_error(n: usize, seed: u64) -> f64 {
    let data = puzzles(n, seed);
    let net = warmed(small_cfg(), &data);
    let transposed: Vec<Puzzle> = data.iter().map(transpose_context).collect();
    let a = net.scores(&all(&data)).unwrap();
    let b = net.scores(&all(&transposed)).unwrap();
    a.max_abs_diff(&b)
}

/// Largest |g| for candidates placed exactly at the centroid of the first
/// two rows, over `n` random feature tensors.
pub fn centroid_residual(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h) = (3, 2);
    let plane = c * h * h;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let mut f = random_tensor(&[1, 10, c, h, h], &mut rng);
        for i in 0..plane {
            let centre = 0.5 * (f.data()[i] + f.data()[plane + i]);
            for j in 2..10 {
                f.data_mut()[j * plane + i] = centre;
            }
        }
        let mut tape = Tape::new();
        let v = tape.constant(f);
        let g = rule_contrast(&mut tape, v, Ablation::Full).unwrap();
        worst = tape.value(g).data().iter().fold(worst, |m, v| m.max(v.abs()));
    }
    worst
}

/// Largest |Σ_j h_j| per position under identity φ, over `n` random inputs.
pub fn centering_error(n: usize, seed: u64) -> f64 {
    let net = Dcnet::new(DcnetConfig { identity_phi: true, ..small_cfg() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = 12;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let g = random_tensor(&[2, 8, 3, 2, 2], &mut rng);
        let mut tape = Tape::new();
        let v = tape.constant(g);
        let mut step = StepRng::new(0, 0);
        let h = net.choice_contrast(&mut tape, v, &mut Pass::new(Mode::Eval, &mut step)).unwrap();
        let h = tape.value(h);
        for m in 0..2 {
            for i in 0..plane {
                let s: f64 = (0..8).map(|j| h.data()[(m * 8 + j) * plane + i]).sum();
                worst = worst.max(s.abs());
            }
        }
    }
    worst
}
