//! Training loop, evaluation and the ablation / few-shot protocols.

mod protocols;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::model::{argmax_rows, batch_triples, Dcnet, DcnetConfig, ModelError, Pass, CHOICES};
use crate::rpm::Puzzle;
use crate::tensor::{bce_with_logits, scale, Adam, Mode, Tape, Tensor, TensorError};

pub use protocols::{check_disjoint, run_ablation, run_few_shot, AblationRow, AblationTable, FewShotRow, FewShotTable};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("non-finite value in epoch {epoch}, batch {batch}: {detail}")]
    NonFinite { epoch: usize, batch: usize, detail: String },
    #[error("diverged in epoch {epoch}, batch {batch}: |score| reached {max_abs:e} (limit {limit:e})")]
    Diverged { epoch: usize, batch: usize, max_abs: f64, limit: f64 },
    #[error("{0}")]
    Invalid(String),
}

impl TrainError {
    /// NaN/Inf or divergence, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            TrainError::NonFinite { .. } | TrainError::Diverged { .. } => true,
            TrainError::Model(e) => e.is_numerical(),
            _ => false,
        }
    }
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Test accuracy is measured every this many epochs and after the last.
    pub eval_every: usize,
    /// Training stops with [`TrainError::Diverged`] once any score exceeds this.
    pub divergence_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 32, lr: 0.001, epochs: 30, seed: 0, eval_every: 1, divergence_limit: 1e4 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(TrainError::Invalid(format!("batch size {} must be at least 2", self.batch_size)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if self.eval_every == 0 {
            return Err(TrainError::Invalid("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of the per-epoch metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `None` on epochs without a test evaluation.
    pub test_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,test_acc,seconds";

    /// CSV with [`Self::CSV_HEADER`]; a missing test accuracy is left empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for m in &self.epochs {
            let test = m.test_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.9},{:.6},{},{:.3}", m.epoch, m.train_loss, m.train_acc, test, m.seconds);
        }
        out
    }

    pub fn final_test_acc(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|m| m.test_acc)
    }
}

/// One-hot `[N,8]` targets.
pub fn make_targets(answers: &[usize]) -> Result<Tensor> {
    if answers.is_empty() {
        return Err(TrainError::Invalid("no answers".into()));
    }
    let mut data = vec![0.0; answers.len() * CHOICES];
    for (i, &a) in answers.iter().enumerate() {
        if a >= CHOICES {
            return Err(TrainError::Invalid(format!("answer index {a} outside 0..{CHOICES}")));
        }
        data[i * CHOICES + a] = 1.0;
    }
    Ok(Tensor::new(vec![answers.len(), CHOICES], data).map_err(ModelError::from)?)
}

/// Generator driving the shuffle and dropout of `epoch` (1-based) under
/// master seed `seed`: a distinct ChaCha stream per epoch.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Mean per-puzzle loss and accuracy over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// A model together with its optimizer state.
pub struct Trainer {
    pub model: Dcnet,
    pub cfg: TrainConfig,
    adam: Adam,
    step: u64,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Dcnet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let step = model.params().iter().map(|p| p.step).max().unwrap_or(0);
        Ok(Self { model, adam: Adam::new(cfg.lr), cfg, step, epoch: 0 })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Shuffles `data` with the epoch's generator and takes one Adam step
    /// per mini-batch.
    pub fn train_epoch(&mut self, data: &[Puzzle]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(TrainError::Invalid("empty training set".into()));
        }
        self.epoch += 1;
        let epoch = self.epoch;
        let mut rng = epoch_rng(self.cfg.seed, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch, idx) in order.chunks(self.cfg.batch_size).enumerate() {
            let numeric = |e: TensorError| match e {
                TensorError::NonFinite { op } => {
                    TrainError::NonFinite { epoch, batch, detail: format!("produced by {op}") }
                }
                e => TrainError::Model(e.into()),
            };
            let model_err = |e: ModelError| match e {
                ModelError::Tensor(t) => numeric(t),
                e => TrainError::Model(e),
            };
            let puzzles: Vec<&Puzzle> = idx.iter().map(|&i| &data[i]).collect();
            let answers: Vec<usize> = puzzles.iter().map(|p| p.answer as usize).collect();
            let mut tape = Tape::new();
            let x = tape.constant(batch_triples(&puzzles)?);
            let mut pass = Pass::new(Mode::Train, &mut rng);
            let scores = self.model.forward(&mut tape, x, &mut pass).map_err(model_err)?;
            let updates = std::mem::take(&mut pass.updates);
            let s = tape.value(scores);
            let max_abs = s.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if max_abs > self.cfg.divergence_limit {
                return Err(TrainError::Diverged { epoch, batch, max_abs, limit: self.cfg.divergence_limit });
            }
            correct += argmax_rows(s).iter().zip(&answers).filter(|(p, a)| p == a).count();
            let total = bce_with_logits(&mut tape, scores, &make_targets(&answers)?).map_err(|e| {
                let (lo, hi) = s_range(tape.value(scores));
                match e {
                    TensorError::NonFinite { op } => TrainError::NonFinite {
                        epoch,
                        batch,
                        detail: format!("{op}; scores in [{lo:e}, {hi:e}]"),
                    },
                    e => numeric(e),
                }
            })?;
            let loss = scale(&mut tape, total, 1.0 / idx.len() as f64).map_err(numeric)?;
            loss_sum += tape.value(total).item().expect("scalar");
            let grads = tape.backward(loss).map_err(numeric)?;
            let store = self.model.params_mut();
            store.accumulate(&tape, &grads);
            if let Some(p) = store.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
                return Err(TrainError::NonFinite { epoch, batch, detail: format!("gradient of {}", p.name) });
            }
            self.step += 1;
            self.adam.step(store, self.step).map_err(numeric)?;
            self.model.commit(updates);
        }
        Ok(EpochStats { loss: loss_sum / data.len() as f64, accuracy: correct as f64 / data.len() as f64 })
    }

    /// Trains for `cfg.epochs` epochs, evaluating on `test` when given.
    pub fn fit(&mut self, train: &[Puzzle], test: Option<&[Puzzle]>, mut log: impl FnMut(&EpochMetrics)) -> Result<RunMetrics> {
        let mut metrics = RunMetrics::default();
        for e in 0..self.cfg.epochs {
            let start = Instant::now();
            let stats = self.train_epoch(train)?;
            let due = (e + 1) % self.cfg.eval_every == 0 || e + 1 == self.cfg.epochs;
            let test_acc = match test {
                Some(t) if due => Some(evaluate(&self.model, t)?),
                _ => None,
            };
            let m = EpochMetrics {
                epoch: self.epoch,
                train_loss: stats.loss,
                train_acc: stats.accuracy,
                test_acc,
                seconds: start.elapsed().as_secs_f64(),
            };
            log(&m);
            metrics.epochs.push(m);
        }
        Ok(metrics)
    }
}

fn s_range(t: &Tensor) -> (f64, f64) {
    t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Puzzles per evaluation batch.
const EVAL_BATCH: usize = 50;

/// Eval-mode predictions for every puzzle, in order.
pub fn predict_all(model: &Dcnet, data: &[Puzzle]) -> Result<Vec<usize>> {
    let chunks: Vec<Vec<usize>> = data
        .par_chunks(EVAL_BATCH)
        .map(|c| model.predict(&c.iter().collect::<Vec<_>>()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(chunks.concat())
}

/// Fraction of puzzles whose prediction equals the stored answer.
pub fn evaluate(model: &Dcnet, data: &[Puzzle]) -> Result<f64> {
    if data.is_empty() {
        return Err(TrainError::Invalid("cannot evaluate on an empty dataset".into()));
    }
    let pred = predict_all(model, data)?;
    let hits = pred.iter().zip(data).filter(|(p, d)| **p == d.answer as usize).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Builds a fresh model from `model_cfg` (seeded with `cfg.seed`), trains it
/// and returns it with its metrics.
pub fn train_model(
    model_cfg: &DcnetConfig,
    cfg: &TrainConfig,
    train: &[Puzzle],
    test: Option<&[Puzzle]>,
    log: impl FnMut(&EpochMetrics),
) -> Result<(Dcnet, RunMetrics)> {
    let model = Dcnet::new(DcnetConfig { seed: cfg.seed, ..model_cfg.clone() })?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let metrics = trainer.fit(train, test, log)?;
    Ok((trainer.model, metrics))
}
