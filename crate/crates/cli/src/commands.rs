use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use dcnet::dataset::{self, DatasetError};
use dcnet::gradsuite::{layer_checks, model_check, GradCheckLine};
use dcnet::model::{Ablation, Dcnet, DcnetConfig, ModelError};
use dcnet::rpm::{generate_dataset, solve_by_rules, GenError, GenOptions, Puzzle};
use dcnet::train::{evaluate, run_ablation, run_few_shot, train_model, TrainConfig, TrainError};

use crate::args::{
    AblationArgs, Command, EvalArgs, FewShotArgs, GenArgs, GradcheckArgs, ImportArgs, ModelArgs, OptimArgs, TrainArgs,
};
use crate::Failure;

type Result<T> = std::result::Result<T, Failure>;

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn dataset_err(e: DatasetError) -> Failure {
    input(e)
}

fn model_err(e: ModelError) -> Failure {
    if e.is_numerical() {
        Failure::Numerical(e.into())
    } else {
        input(e)
    }
}

fn train_err(e: TrainError) -> Failure {
    match e {
        e if e.is_numerical() => Failure::Numerical(e.into()),
        TrainError::Model(m) => model_err(m),
        e => input(e),
    }
}

fn gen_err(e: GenError) -> Failure {
    match e {
        GenError::Invalid(_) => input(e),
        e => Failure::Failed(e.into()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| input(anyhow!("{}: {e}", path.display())))
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        println!("seed: {s} (drawn from entropy)");
        s
    })
}

fn seeds_or_entropy(seeds: &[u64]) -> Vec<u64> {
    if !seeds.is_empty() {
        return seeds.to_vec();
    }
    let base = rand::random::<u64>();
    let out: Vec<u64> = (0..3).map(|i| base.wrapping_add(i)).collect();
    println!("seeds: {} (drawn from entropy)", out.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    out
}

/// `<checkpoint>.cfg`: the model configuration needed to rebuild the network.
pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s: OsString = ckpt.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

fn load_data(path: &Path) -> Result<Vec<Puzzle>> {
    let data = dataset::load(path).map_err(dataset_err)?;
    if data.is_empty() {
        return Err(input(anyhow!("{}: dataset is empty", path.display())));
    }
    Ok(data)
}

fn load_pair(train: &Path, test: Option<&Path>) -> Result<(Vec<Puzzle>, Option<Vec<Puzzle>>)> {
    let train_data = load_data(train)?;
    let test_data = test.map(load_data).transpose()?;
    if let Some(t) = &test_data {
        if t[0].image_size != train_data[0].image_size {
            return Err(input(anyhow!(
                "image size mismatch: training data {}, test data {}",
                train_data[0].image_size,
                t[0].image_size
            )));
        }
    }
    Ok((train_data, test_data))
}

fn model_config(m: &ModelArgs, image_size: usize, ablation: Ablation, seed: u64) -> Result<DcnetConfig> {
    let cfg = DcnetConfig {
        image_size,
        channels: m.channels,
        hidden: m.hidden,
        dropout_p: m.dropout_p,
        ablation,
        seed,
        ..DcnetConfig::default()
    };
    cfg.validate().map_err(model_err)?;
    Ok(cfg)
}

fn train_config(o: &OptimArgs, seed: u64, eval_every: usize) -> Result<TrainConfig> {
    let cfg = TrainConfig { batch_size: o.batch_size, lr: o.lr, epochs: o.epochs, seed, eval_every, ..TrainConfig::default() };
    cfg.validate().map_err(train_err)?;
    if cfg.epochs == 0 {
        return Err(input(anyhow!("--epochs must be at least 1")));
    }
    Ok(cfg)
}

pub fn run(cli: crate::args::Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Import(a) => import(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablation(a) => ablation(a),
        Command::Fewshot(a) => fewshot(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    if a.n == 0 {
        return Err(input(anyhow!("--n must be at least 1")));
    }
    let seed = seed_or_entropy(a.seed);
    let opts = GenOptions { config: a.config, image_size: a.size, jitter: a.jitter };
    let puzzles = generate_dataset(a.n, &opts, seed).map_err(gen_err)?;
    let mut histogram = [0usize; 8];
    let mut validated = 0;
    for p in &puzzles {
        histogram[p.answer as usize] += 1;
        if matches!(solve_by_rules(p), Ok(i) if i == p.answer as usize) {
            validated += 1;
        }
    }
    println!("generated {} puzzles ({}, {}x{}, seed {seed})", a.n, a.config, a.size, a.size);
    println!("answer histogram: {histogram:?}");
    println!("oracle validation: {validated}/{}", a.n);
    if validated != a.n {
        return Err(Failure::Failed(anyhow!("{} puzzles failed oracle validation", a.n - validated)));
    }
    dataset::save(&puzzles, &a.out).map_err(dataset_err)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn import(a: ImportArgs) -> Result<()> {
    let (puzzles, report) = dataset::import_external(&a.dir, a.size).map_err(dataset_err)?;
    for (name, reason) in &report.rejected {
        eprintln!("rejected {name}: {reason}");
    }
    println!("imported {}/{} files from {}", report.imported.len(), report.total(), a.dir.display());
    if puzzles.is_empty() {
        return Err(input(anyhow!("{}: no importable puzzles", a.dir.display())));
    }
    dataset::save(&puzzles, &a.out).map_err(dataset_err)?;
    println!("wrote {} ({}x{} panels)", a.out.display(), a.size, a.size);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let (train_data, test_data) = load_pair(&a.data, a.test.as_deref())?;
    let seed = seed_or_entropy(a.seed);
    let mcfg = model_config(&a.model, train_data[0].image_size, a.ablation, seed)?;
    let tcfg = train_config(&a.optim, seed, a.eval_every)?;
    println!(
        "train: ablation={} seed={seed} epochs={} batch_size={} lr={} channels={} hidden={} dropout_p={} image_size={} train={} test={}",
        mcfg.ablation,
        tcfg.epochs,
        tcfg.batch_size,
        tcfg.lr,
        mcfg.channels,
        mcfg.hidden,
        mcfg.dropout_p,
        mcfg.image_size,
        train_data.len(),
        test_data.as_ref().map_or(0, Vec::len)
    );
    let (model, metrics) = train_model(&mcfg, &tcfg, &train_data, test_data.as_deref(), |m| {
        let test = m.test_acc.map(|t| format!(" test_acc {t:.6}")).unwrap_or_default();
        println!(
            "epoch {:>3}: loss {:.6} train_acc {:.6}{test} ({:.1}s)",
            m.epoch, m.train_loss, m.train_acc, m.seconds
        );
    })
    .map_err(train_err)?;
    let mut bytes = Vec::new();
    model.save(&mut bytes).map_err(model_err)?;
    write_file(&a.out_ckpt, &bytes)?;
    write_file(&sidecar_path(&a.out_ckpt), model.config().to_kv().as_bytes())?;
    write_file(&a.metrics, metrics.to_csv().as_bytes())?;
    println!("wrote {}, {} and {}", a.out_ckpt.display(), sidecar_path(&a.out_ckpt).display(), a.metrics.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let bytes = std::fs::read(&a.ckpt).map_err(|e| input(anyhow!("{}: {e}", a.ckpt.display())))?;
    let side = sidecar_path(&a.ckpt);
    let text = std::fs::read_to_string(&side).map_err(|e| input(anyhow!("{}: {e}", side.display())))?;
    let cfg = DcnetConfig::from_kv(&text).map_err(|e| input(anyhow!("{}: {e}", side.display())))?;
    let mut model = Dcnet::new(cfg).map_err(model_err)?;
    model.load(&mut bytes.as_slice()).map_err(|e| input(anyhow!("{}: {e}", a.ckpt.display())))?;
    let data = load_data(&a.data)?;
    if data[0].image_size != model.config().image_size {
        return Err(input(anyhow!(
            "dataset has {}px panels, checkpoint expects {}px",
            data[0].image_size,
            model.config().image_size
        )));
    }
    let acc = evaluate(&model, &data).map_err(train_err)?;
    let hits = (acc * data.len() as f64).round() as usize;
    println!("ablation: {}", model.config().ablation);
    println!("accuracy: {acc:.6} ({hits}/{})", data.len());
    Ok(())
}

fn ablation(a: AblationArgs) -> Result<()> {
    let (train_data, test_data) = load_pair(&a.data, Some(&a.test))?;
    let test_data = test_data.expect("test path given");
    let seeds = seeds_or_entropy(&a.seeds);
    let mcfg = model_config(&a.model, train_data[0].image_size, Ablation::Full, 0)?;
    let tcfg = train_config(&a.optim, 0, a.optim.epochs.max(1))?;
    let variants: Vec<String> = a.variants.iter().map(ToString::to_string).collect();
    println!(
        "ablation: variants={} seeds={:?} epochs={} channels={} hidden={} dropout_p={}",
        variants.join(","),
        seeds,
        tcfg.epochs,
        mcfg.channels,
        mcfg.hidden,
        mcfg.dropout_p
    );
    let table = run_ablation(&a.variants, &mcfg, &tcfg, &train_data, &test_data, &seeds, &|s| eprintln!("{s}"))
        .map_err(train_err)?;
    let csv = table.to_csv();
    print!("{csv}");
    write_file(&a.out, csv.as_bytes())
}

fn fewshot(a: FewShotArgs) -> Result<()> {
    let (train_data, test_data) = load_pair(&a.data, Some(&a.test))?;
    let test_data = test_data.expect("test path given");
    let seeds = seeds_or_entropy(&a.seeds);
    let mcfg = model_config(&a.model, train_data[0].image_size, a.ablation, 0)?;
    let tcfg = train_config(&a.optim, 0, a.optim.epochs.max(1))?;
    println!("fewshot: fractions={:?} seeds={:?} ablation={} epochs={}", a.fractions, seeds, a.ablation, tcfg.epochs);
    let table = run_few_shot(&a.fractions, &mcfg, &tcfg, &train_data, &test_data, &seeds, &|s| eprintln!("{s}"))
        .map_err(train_err)?;
    let csv = table.to_csv();
    print!("{csv}");
    write_file(&a.out, csv.as_bytes())
}

fn report(line: &GradCheckLine) -> bool {
    let verdict = if line.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict} {:<32} max_rel_error {:.3e} ({} coords, {} kinks skipped)",
        line.name,
        line.report.max_rel_error,
        line.report.checked,
        line.report.excluded.len()
    );
    line.passed()
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let seed = seed_or_entropy(a.seed);
    let mut lines = layer_checks(seed).map_err(|e| model_err(e.into()))?;
    lines.push(model_check(seed).map_err(model_err)?);
    let failed = lines.iter().map(report).filter(|ok| !ok).count();
    if failed > 0 {
        return Err(Failure::Numerical(anyhow!("{failed} gradient checks exceeded tolerance")));
    }
    Ok(())
}
