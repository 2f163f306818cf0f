//! Acceptance report: one PASS/FAIL line per headline criterion.
//!
//! The desk-scale learning and few-shot criteria train nine models and take
//! far longer than everything else; set `DCNET_SKIP_LEARNING=1` to report
//! them as SKIP.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::fixture::{fixture_level, write_raven_fixture, FIXTURE_ANSWERS};
use common::naive;
use common::probes;
use dcnet::dataset::{from_bytes, import_external, load, save, to_bytes};
use dcnet::gradsuite::{layer_checks, model_check, TOLERANCE};
use dcnet::model::{Ablation, Dcnet, DcnetConfig};
use dcnet::rpm::{generate_dataset, solve_by_rules, Config, GenOptions, InferredRules, Puzzle};
use dcnet::tensor::{Mode, Tape, Tensor};
use dcnet::train::{run_ablation, run_few_shot, TrainConfig, Trainer};
use rand::rngs::mock::StepRng;

/// Epoch budget for the desk-scale learning runs.
const DESK_EPOCHS: usize = 30;
const DESK_SEEDS: [u64; 3] = [1, 2, 3];

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Line {
    verdict: Verdict,
    name: &'static str,
    detail: String,
}

fn line(name: &'static str, pass: bool, detail: String) -> Line {
    Line { verdict: if pass { Verdict::Pass } else { Verdict::Fail }, name, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_suite() -> Line {
    let start = Instant::now();
    let mut lines = layer_checks(1).expect("layer checks run");
    lines.push(model_check(1).expect("model check runs"));
    let elapsed = start.elapsed();
    let worst = lines.iter().map(|l| l.report.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed()).map(|l| l.name).collect();
    let pass = failed.is_empty() && elapsed < Duration::from_secs(120);
    let mut detail = format!("{} checks, max rel error {worst:.2e} (< {TOLERANCE:e}), {}", lines.len(), secs(elapsed));
    if !failed.is_empty() {
        detail += &format!("; failed: {}", failed.join(", "));
    }
    line("gradient suite", pass, detail)
}

fn oracle_equivalence() -> Line {
    const CASES: usize = 100;
    let errors = [
        ("conv2d", naive::conv2d_error(11, CASES)),
        ("maxpool2d", naive::maxpool2d_error(12, CASES)),
        ("adaptive_avg_pool2d", naive::adaptive_avg_pool2d_error(13, CASES)),
        ("batchnorm2d", naive::batchnorm2d_error(14, CASES)),
        ("linear", naive::linear_error(15, CASES)),
    ];
    let pass = errors.iter().all(|(_, e)| *e <= 1e-10);
    let detail = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    line("oracle equivalence", pass, format!("{CASES} cases each, max abs error: {detail}"))
}

fn shape_contract() -> Line {
    let cfg = DcnetConfig::default();
    let net = Dcnet::new(cfg.clone()).expect("standard model");
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 3, 96, 96], 0.5));
    let mut rng = StepRng::new(0, 0);
    let f = net.encode(&mut tape, x, &mut dcnet::model::Pass::new(Mode::Eval, &mut rng)).expect("encode");
    let shape = tape.shape(f).to_vec();
    let pass = shape == [1, 128, 24, 24] && cfg.mlp_input_dim() == 512;
    line("architecture shape contract", pass, format!("encoder {:?}, mlp input {}", &shape[1..], cfg.mlp_input_dim()))
}

fn structural_invariants() -> Line {
    let perm = probes::permutation_error(100, 21);
    let trans = probes::transposition_error(100, 22);
    let centroid = probes::centroid_residual(100, 23);
    let centering = probes::centering_error(100, 24);
    let pass = perm <= 1e-12 && trans <= 1e-9 && centroid == 0.0 && centering <= 1e-12;
    line(
        "structural invariants",
        pass,
        format!(
            "permutation {perm:.1e} (<= 1e-12), transposition {trans:.1e} (<= 1e-9), centroid {centroid:e} (exact), centering {centering:.1e} (<= 1e-12)"
        ),
    )
}

fn dataset_soundness() -> Line {
    let mut pass = true;
    let mut parts = Vec::new();
    for config in [Config::Center, Config::Grid2x2] {
        let data = generate_dataset(1000, &GenOptions { config, image_size: 32, jitter: false }, 31).expect("generate");
        let agree = data.iter().filter(|p| matches!(solve_by_rules(p), Ok(a) if a == p.answer as usize)).count();
        let mut leaked = 0;
        let mut counts = [0usize; 8];
        for p in &data {
            counts[p.answer as usize] += 1;
            let prov = p.provenance.as_ref().expect("generated puzzles carry provenance");
            let context = std::array::from_fn(|i| prov.matrix[i]);
            let rules = InferredRules::infer(config, &context);
            leaked += (0..8).filter(|&i| i != p.answer as usize && rules.accepts(&prov.choices[i])).count();
        }
        let balanced = counts.iter().all(|c| (90..=160).contains(c));
        pass &= agree == 1000 && leaked == 0 && balanced;
        parts.push(format!("{config}: oracle {agree}/1000, accepted distractors {leaked}, answer counts {counts:?}"));
    }
    line("dataset soundness", pass, parts.join("; "))
}

fn loss_anchor() -> Line {
    let data = probes::puzzles(32, 41);
    let want = 8.0 * std::f64::consts::LN_2;
    let mut worst = 0.0f64;
    for ablation in Ablation::ALL {
        let model = Dcnet::new(DcnetConfig { zero_head: true, ablation, ..DcnetConfig::desk() }).expect("model");
        let cfg = TrainConfig { batch_size: data.len(), epochs: 1, ..TrainConfig::default() };
        let stats = Trainer::new(model, cfg).expect("trainer").train_epoch(&data).expect("epoch");
        worst = worst.max((stats.loss - want).abs());
    }
    line("analytic loss anchor", worst <= 1e-6, format!("|loss - 8 ln 2| = {worst:.1e} (<= 1e-6) for every variant"))
}

fn desk_data() -> (Vec<Puzzle>, Vec<Puzzle>) {
    let opts = GenOptions { config: Config::Center, image_size: 32, jitter: false };
    (generate_dataset(2000, &opts, 100).expect("train set"), generate_dataset(500, &opts, 200).expect("test set"))
}

fn desk_train_config() -> TrainConfig {
    TrainConfig { epochs: DESK_EPOCHS, ..TrainConfig::default() }
}

fn progress(s: String) {
    eprintln!("  {s}");
}

/// Returns the learning line and the per-seed accuracies of the full model.
fn desk_learning(train: &[Puzzle], test: &[Puzzle]) -> (Line, Vec<f64>) {
    let start = Instant::now();
    let variants = [Ablation::Full, Ablation::NoChoiceContrast];
    let table = run_ablation(&variants, &DcnetConfig::desk(), &desk_train_config(), train, test, &DESK_SEEDS, &progress)
        .expect("ablation runs");
    let elapsed = start.elapsed();
    let full = table.mean(Ablation::Full).expect("full rows");
    let ncc = table.mean(Ablation::NoChoiceContrast).expect("ablation rows");
    let per_seed: Vec<f64> = table.rows.iter().filter(|r| r.variant == Ablation::Full).map(|r| r.test_acc).collect();
    let pass = full >= 0.70 && full >= 5.0 * 0.125 && full - ncc >= 0.10;
    let detail = format!(
        "full {full:.3} (>= 0.70) per seed {per_seed:.3?}, no_choice_contrast {ncc:.3}, margin {:.3} (>= 0.10), {} epochs, {} for 6 runs",
        full - ncc,
        DESK_EPOCHS,
        secs(elapsed)
    );
    (line("desk-scale learning", pass, detail), per_seed)
}

/// Fraction 1.0 is the full-data run already trained for the learning
/// criterion with the same seeds.
fn few_shot(train: &[Puzzle], test: &[Puzzle], full_runs: &[f64]) -> Line {
    let table =
        run_few_shot(&[0.0625], &DcnetConfig::desk(), &desk_train_config(), train, test, &DESK_SEEDS, &progress)
            .expect("few-shot runs");
    let small = table.mean(0.0625).expect("fraction rows");
    let full = full_runs.iter().sum::<f64>() / full_runs.len() as f64;
    line("few-shot direction", full >= small, format!("fraction 1.0 {full:.3} >= fraction 0.0625 {small:.3}"))
}

fn format_fidelity() -> Line {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut ok = true;
    let data = generate_dataset(50, &GenOptions { config: Config::Grid2x2, image_size: 32, jitter: true }, 51).expect("data");
    let path = dir.path().join("d.rpmd");
    save(&data, &path).expect("save");
    let file = std::fs::read(&path).expect("read");
    let back = load(&path).expect("load");
    let dataset_exact = back == data && to_bytes(&back).expect("serialise") == file;
    ok &= dataset_exact;

    let net = probes::warmed(probes::small_cfg(), &probes::puzzles(4, 52));
    let mut bytes = Vec::new();
    net.save(&mut bytes).expect("save checkpoint");
    let mut fresh = Dcnet::new(DcnetConfig { seed: 7, ..probes::small_cfg() }).expect("model");
    fresh.load(&mut bytes.as_slice()).expect("load checkpoint");
    let mut again = Vec::new();
    fresh.save(&mut again).expect("save again");
    let ckpt_exact = again == bytes;
    ok &= ckpt_exact;

    let fixture = tempfile::tempdir().expect("temp dir");
    write_raven_fixture(fixture.path());
    let (imported, _) = import_external(fixture.path(), 96).expect("import");
    let import_ok = imported.len() == 3
        && imported.iter().enumerate().all(|(r, p)| {
            p.answer == FIXTURE_ANSWERS[r]
                && p.image_size == 96
                && (0..16).all(|i| p.panel(i).len() == 96 * 96 && p.panel(i).iter().all(|&v| v == fixture_level(r, i)))
        })
        && from_bytes(&to_bytes(&imported).expect("serialise")).expect("parse").1 == imported;
    ok &= import_ok;
    line(
        "format fidelity",
        ok,
        format!(
            "dataset byte-exact {dataset_exact}, checkpoint byte-exact {ckpt_exact}, fixture 3x(160x160 -> 96x96) answers {FIXTURE_ANSWERS:?} {import_ok}"
        ),
    )
}

fn main() -> ExitCode {
    let skip_learning = std::env::var("DCNET_SKIP_LEARNING").is_ok_and(|v| v == "1");
    let mut lines = vec![
        gradient_suite(),
        oracle_equivalence(),
        shape_contract(),
        structural_invariants(),
        dataset_soundness(),
        loss_anchor(),
    ];
    if skip_learning {
        for name in ["desk-scale learning", "few-shot direction"] {
            lines.push(Line { verdict: Verdict::Skip, name, detail: "DCNET_SKIP_LEARNING=1".into() });
        }
    } else {
        let (train, test) = desk_data();
        let (learning, full_runs) = desk_learning(&train, &test);
        lines.push(learning);
        lines.push(few_shot(&train, &test, &full_runs));
    }
    lines.push(format_fidelity());

    let mut failed = 0;
    for l in &lines {
        let tag = match l.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("{tag} {}: {}", l.name, l.detail);
    }
    println!("acceptance: {} criteria, {failed} failed", lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
