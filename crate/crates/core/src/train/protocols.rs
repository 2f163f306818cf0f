use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;

use crate::dataset::subsample;
use crate::model::{Ablation, DcnetConfig};
use crate::rpm::Puzzle;

use super::{train_model, Result, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Ablation,
    pub seed: u64,
    pub test_acc: f64,
    /// Echo of the model configuration the variant was trained with.
    pub config: DcnetConfig,
}

/// Final test accuracy per variant and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const CSV_HEADER: &'static str = "variant,seed,test_acc";

    pub fn mean(&self, variant: Ablation) -> Option<f64> {
        mean(self.rows.iter().filter(|r| r.variant == variant).map(|r| r.test_acc))
    }

    fn variants(&self) -> Vec<Ablation> {
        let mut v: Vec<Ablation> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.variant) {
                v.push(r.variant);
            }
        }
        v
    }

    /// One line per run, then one `mean` line per variant.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6}", r.variant, r.seed, r.test_acc);
        }
        for v in self.variants() {
            let _ = writeln!(out, "{v},mean,{:.6}", self.mean(v).expect("variant has rows"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotRow {
    pub fraction: f64,
    pub seed: u64,
    pub n_train: usize,
    pub test_acc: f64,
}

/// Final test accuracy per training fraction and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotTable {
    pub rows: Vec<FewShotRow>,
}

impl FewShotTable {
    pub const CSV_HEADER: &'static str = "fraction,n_train,mean_test_acc,test_acc_per_seed";

    pub fn mean(&self, fraction: f64) -> Option<f64> {
        mean(self.rows.iter().filter(|r| r.fraction == fraction).map(|r| r.test_acc))
    }

    pub fn fractions(&self) -> Vec<f64> {
        let mut seen: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.fraction) {
                seen.push(r.fraction);
            }
        }
        seen
    }

    /// One line per fraction; per-seed accuracies are `;`-separated in seed order.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for f in self.fractions() {
            let rows: Vec<&FewShotRow> = self.rows.iter().filter(|r| r.fraction == f).collect();
            let per_seed: Vec<String> = rows.iter().map(|r| format!("{:.6}", r.test_acc)).collect();
            let _ = writeln!(
                out,
                "{f},{},{:.6},{}",
                rows[0].n_train,
                self.mean(f).expect("fraction has rows"),
                per_seed.join(";")
            );
        }
        out
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn fingerprint(p: &Puzzle) -> u64 {
    let mut h = DefaultHasher::new();
    p.context.hash(&mut h);
    p.choices.hash(&mut h);
    h.finish()
}

/// Fails if any test puzzle also appears in the training set.
pub fn check_disjoint(train: &[Puzzle], test: &[Puzzle]) -> Result<()> {
    let seen: HashSet<u64> = train.iter().map(fingerprint).collect();
    match test.iter().position(|p| seen.contains(&fingerprint(p))) {
        Some(i) => Err(TrainError::Invalid(format!("test puzzle {i} also occurs in the training set"))),
        None => Ok(()),
    }
}

/// Trains every variant once per seed on identical data and reports the
/// final test accuracies. Runs are independent and execute in parallel.
pub fn run_ablation(
    variants: &[Ablation],
    model_cfg: &DcnetConfig,
    cfg: &TrainConfig,
    train: &[Puzzle],
    test: &[Puzzle],
    seeds: &[u64],
    log: &(dyn Fn(String) + Sync),
) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(TrainError::Invalid("ablation needs at least one variant and one seed".into()));
    }
    check_disjoint(train, test)?;
    let jobs: Vec<(Ablation, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let mcfg = DcnetConfig { ablation: variant, ..model_cfg.clone() };
            let tcfg = TrainConfig { seed, eval_every: cfg.epochs.max(1), ..cfg.clone() };
            let (model, metrics) = train_model(&mcfg, &tcfg, train, Some(test), |m| {
                log(format!("{variant} seed {seed} epoch {}: loss {:.4} train acc {:.3}", m.epoch, m.train_loss, m.train_acc))
            })?;
            let test_acc = metrics.final_test_acc().expect("last epoch is evaluated");
            log(format!("{variant} seed {seed}: test acc {test_acc:.4}"));
            Ok(AblationRow { variant, seed, test_acc, config: model.config().clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}

/// Trains a fresh model per fraction and seed on a seeded subsample of
/// `train`, always evaluating on the full `test` set.
pub fn run_few_shot(
    fractions: &[f64],
    model_cfg: &DcnetConfig,
    cfg: &TrainConfig,
    train: &[Puzzle],
    test: &[Puzzle],
    seeds: &[u64],
    log: &(dyn Fn(String) + Sync),
) -> Result<FewShotTable> {
    if fractions.is_empty() || seeds.is_empty() {
        return Err(TrainError::Invalid("few-shot needs at least one fraction and one seed".into()));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TrainError::Invalid("fractions must be strictly increasing".into()));
    }
    check_disjoint(train, test)?;
    let mut jobs = Vec::new();
    for &fraction in fractions {
        for &seed in seeds {
            jobs.push((fraction, seed, subsample(train, fraction, seed)?));
        }
    }
    let rows = jobs
        .par_iter()
        .map(|(fraction, seed, subset)| {
            let tcfg = TrainConfig { seed: *seed, eval_every: cfg.epochs.max(1), ..cfg.clone() };
            let (_, metrics) = train_model(model_cfg, &tcfg, subset, Some(test), |_| {})?;
            let test_acc = metrics.final_test_acc().expect("last epoch is evaluated");
            log(format!("fraction {fraction} seed {seed} ({} puzzles): test acc {test_acc:.4}", subset.len()));
            Ok(FewShotRow { fraction: *fraction, seed: *seed, n_train: subset.len(), test_acc })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FewShotTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_csv_has_mean_rows() {
        let row = |variant, seed, test_acc| AblationRow { variant, seed, test_acc, config: DcnetConfig::desk() };
        let t = AblationTable {
            rows: vec![
                row(Ablation::Full, 1, 0.5),
                row(Ablation::Full, 2, 0.7),
                row(Ablation::NoChoiceContrast, 1, 0.2),
                row(Ablation::NoChoiceContrast, 2, 0.2),
            ],
        };
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 1 + 4 + 2);
        assert!(csv.contains("full,mean,0.600000"));
        assert!((t.mean(Ablation::Full).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn few_shot_csv_has_one_row_per_fraction() {
        let row = |fraction, seed, n_train, test_acc| FewShotRow { fraction, seed, n_train, test_acc };
        let t = FewShotTable {
            rows: vec![row(0.5, 1, 10, 0.25), row(0.5, 2, 10, 0.75), row(1.0, 1, 20, 0.5), row(1.0, 2, 20, 0.5)],
        };
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("\n0.5,10,0.500000,0.250000;0.750000\n"));
    }
}
