use std::io::{Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::rpm::Puzzle;
use crate::tensor::{
    adaptive_avg_pool2d, add, batchnorm2d, conv2d, dropout, expand_axis, flatten, linear, maxpool2d, mean_over,
    narrow, read_checkpoint, relu, reshape, sub, write_checkpoint, BatchNormConfig, BatchStats, Mode,
    ParamId, ParamStore, Parameter, RunningStats, Tape, Tensor, Var,
};

use super::config::{Ablation, DcnetConfig, POOLED};
use super::triples::{batch_triples, TRIPLES};
use super::ModelError;

type Result<T> = std::result::Result<T, ModelError>;

/// Candidates per puzzle.
pub const CHOICES: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    out: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct Bn {
    gamma: ParamId,
    beta: ParamId,
    slot: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    stem: Conv,
    stem_bn: Bn,
    res_conv1: Conv,
    res_bn1: Bn,
    res_conv2: Conv,
    res_bn2: Bn,
    shortcut: Conv,
    shortcut_bn: Bn,
    phi: Option<(Conv, Bn)>,
    fc1: Dense,
    fc2: Dense,
}

/// Batch-norm statistics gathered by a train-mode pass, waiting to be
/// folded into the running averages with [`Dcnet::commit`].
#[derive(Debug, Clone, Default)]
pub struct BnUpdates(Vec<(usize, BatchStats)>);

impl BnUpdates {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Mode, dropout randomness and collected batch statistics of one pass.
pub struct Pass<'a> {
    pub mode: Mode,
    pub rng: &'a mut dyn RngCore,
    pub updates: BnUpdates,
    bound: Option<Vec<Var>>,
}

impl<'a> Pass<'a> {
    pub fn new(mode: Mode, rng: &'a mut dyn RngCore) -> Self {
        Self { mode, rng, updates: BnUpdates::default(), bound: None }
    }

    /// Uses `params[i]` in place of parameter `ParamId(i)` of the store, so
    /// gradients flow to caller-owned variables (for gradient checking).
    pub fn with_params(mode: Mode, rng: &'a mut dyn RngCore, params: Vec<Var>) -> Self {
        Self { bound: Some(params), ..Self::new(mode, rng) }
    }
}

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
    bn_names: Vec<String>,
    running: Vec<RunningStats>,
}

impl Builder {
    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(&mut self.rng)).collect()).expect("shape")
    }

    /// Bias-free: every convolution feeds a batch norm. `gain` is 2 for
    /// layers feeding a ReLU, 1 otherwise.
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, gain: f64) -> Conv {
        let std = (gain / (cin * k * k) as f64).sqrt();
        let w = self.normal(&[cout, cin, k, k], std);
        let w = self.store.add(format!("{name}.weight"), w).expect("unique name");
        Conv { w, out: cout, stride, pad }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        let gamma = self.store.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0)).expect("unique name");
        let beta = self.store.add(format!("{name}.beta"), Tensor::zeros(&[c])).expect("unique name");
        self.bn_names.push(name.to_string());
        self.running.push(RunningStats::identity(c));
        Bn { gamma, beta, slot: self.running.len() - 1 }
    }

    fn dense(&mut self, name: &str, din: usize, dout: usize, gain: f64) -> Dense {
        let w = if gain == 0.0 { Tensor::zeros(&[din, dout]) } else { self.normal(&[din, dout], (gain / din as f64).sqrt()) };
        let w = self.store.add(format!("{name}.weight"), w).expect("unique name");
        let b = self.store.add(format!("{name}.bias"), Tensor::zeros(&[dout])).expect("unique name");
        Dense { w, b }
    }
}

/// The dual-contrast network: shared triple encoder, rule contrast, choice
/// contrast and an MLP scoring head.
#[derive(Debug, Clone)]
pub struct Dcnet {
    cfg: DcnetConfig,
    bn_cfg: BatchNormConfig,
    store: ParamStore,
    bn_names: Vec<String>,
    running: Vec<RunningStats>,
    layers: Layers,
}

impl Dcnet {
    pub fn new(cfg: DcnetConfig) -> Result<Self> {
        cfg.validate()?;
        let (c1, c2) = (cfg.channels.stem, cfg.channels.out);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            bn_names: Vec::new(),
            running: Vec::new(),
        };
        let stem = b.conv("encoder.stem", 3, c1, 7, 2, 3, 2.0);
        let stem_bn = b.bn("encoder.stem_bn", c1);
        let res_conv1 = b.conv("encoder.res.conv1", c1, c2, 3, 1, 1, 2.0);
        let res_bn1 = b.bn("encoder.res.bn1", c2);
        let res_conv2 = b.conv("encoder.res.conv2", c2, c2, 3, 1, 1, 2.0);
        let res_bn2 = b.bn("encoder.res.bn2", c2);
        let shortcut = b.conv("encoder.res.shortcut", c1, c2, 1, 1, 0, 1.0);
        let shortcut_bn = b.bn("encoder.res.shortcut_bn", c2);
        let phi = (cfg.ablation != Ablation::NoChoiceContrast && !cfg.identity_phi)
            .then(|| (b.conv("phi.conv", c2, c2, 3, 1, 1, 1.0), b.bn("phi.bn", c2)));
        let fc1 = b.dense("head.fc1", cfg.mlp_input_dim(), cfg.hidden, 2.0);
        let fc2 = b.dense("head.fc2", cfg.hidden, 1, if cfg.zero_head { 0.0 } else { 1.0 });
        let layers = Layers {
            stem,
            stem_bn,
            res_conv1,
            res_bn1,
            res_conv2,
            res_bn2,
            shortcut,
            shortcut_bn,
            phi,
            fc1,
            fc2,
        };
        Ok(Self { cfg, bn_cfg: BatchNormConfig::default(), store: b.store, bn_names: b.bn_names, running: b.running, layers })
    }

    pub fn config(&self) -> &DcnetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Running statistics of every batch-norm layer, by layer name.
    pub fn running_stats(&self) -> impl Iterator<Item = (&str, &RunningStats)> {
        self.bn_names.iter().map(String::as_str).zip(&self.running)
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn commit(&mut self, updates: BnUpdates) {
        for (slot, stats) in updates.0 {
            self.running[slot].update(&stats, self.bn_cfg.momentum);
        }
    }

    fn param(&self, tape: &mut Tape, pass: &Pass, id: ParamId) -> Result<Var> {
        match &pass.bound {
            None => Ok(tape.param(&self.store, id)),
            Some(vars) => {
                let v = *vars.get(id.0).ok_or_else(|| ModelError::Input(format!("no bound variable for {id:?}")))?;
                if tape.shape(v) != self.store.get(id).tensor.shape() {
                    return Err(ModelError::Input(format!("bound {} has the wrong shape", self.store.get(id).name)));
                }
                Ok(v)
            }
        }
    }

    fn conv(&self, tape: &mut Tape, x: Var, c: Conv, pass: &Pass) -> Result<Var> {
        let (w, b) = (self.param(tape, pass, c.w)?, tape.constant(Tensor::zeros(&[c.out])));
        Ok(conv2d(tape, x, w, b, c.stride, c.pad)?)
    }

    fn bn(&self, tape: &mut Tape, x: Var, bn: Bn, pass: &mut Pass) -> Result<Var> {
        let (g, b) = (self.param(tape, pass, bn.gamma)?, self.param(tape, pass, bn.beta)?);
        let (y, stats) = batchnorm2d(tape, x, g, b, &self.running[bn.slot], pass.mode, self.bn_cfg)?;
        if let Some(stats) = stats {
            pass.updates.0.push((bn.slot, stats));
        }
        Ok(y)
    }

    fn dense(&self, tape: &mut Tape, x: Var, d: Dense, pass: &Pass) -> Result<Var> {
        let (w, b) = (self.param(tape, pass, d.w)?, self.param(tape, pass, d.b)?);
        Ok(linear(tape, x, w, b)?)
    }

    /// `[N,3,S,S]` triples to `[N,C2,S/4,S/4]` features.
    pub fn encode(&self, tape: &mut Tape, x: Var, pass: &mut Pass) -> Result<Var> {
        let l = self.layers;
        let y = self.conv(tape, x, l.stem, pass)?;
        let y = self.bn(tape, y, l.stem_bn, pass)?;
        let y = relu(tape, y)?;
        let y = maxpool2d(tape, y, 3, 2, 1)?;
        let r = self.conv(tape, y, l.res_conv1, pass)?;
        let r = self.bn(tape, r, l.res_bn1, pass)?;
        let r = relu(tape, r)?;
        let r = self.conv(tape, r, l.res_conv2, pass)?;
        let r = self.bn(tape, r, l.res_bn2, pass)?;
        let s = self.conv(tape, y, l.shortcut, pass)?;
        let s = self.bn(tape, s, l.shortcut_bn, pass)?;
        let out = add(tape, r, s)?;
        Ok(relu(tape, out)?)
    }

    /// `[M,8,C,h,w]` to `[M,8,C,h,w]`: subtracts the adapted mean over the
    /// candidates from each candidate. Identity under the ablation.
    pub fn choice_contrast(&self, tape: &mut Tape, g: Var, pass: &mut Pass) -> Result<Var> {
        if self.cfg.ablation == Ablation::NoChoiceContrast {
            return Ok(g);
        }
        let m = mean_over(tape, g, 1)?;
        let p = match self.layers.phi {
            Some((conv, bn)) => {
                let p = self.conv(tape, m, conv, pass)?;
                self.bn(tape, p, bn, pass)?
            }
            None => m,
        };
        let p = expand_axis(tape, p, 1, CHOICES)?;
        Ok(sub(tape, g, p)?)
    }

    /// `[B,8,C,h,w]` to `[B,8]` scores.
    pub fn score_head(&self, tape: &mut Tape, s: Var, pass: &mut Pass) -> Result<Var> {
        let shape = tape.shape(s).to_vec();
        let b = shape[0];
        let x = reshape(tape, s, &[b * CHOICES, shape[2], shape[3], shape[4]])?;
        let x = adaptive_avg_pool2d(tape, x, POOLED, POOLED)?;
        let x = flatten(tape, x, 1)?;
        let x = self.dense(tape, x, self.layers.fc1, pass)?;
        let x = relu(tape, x)?;
        let x = dropout(tape, x, self.cfg.dropout_p, pass.mode, &mut *pass.rng)?;
        let x = self.dense(tape, x, self.layers.fc2, pass)?;
        Ok(reshape(tape, x, &[b, CHOICES])?)
    }

    /// Full pass from stacked triples `[B*20,3,S,S]` (see [`batch_triples`])
    /// to scores `[B,8]`.
    pub fn forward(&self, tape: &mut Tape, input: Var, pass: &mut Pass) -> Result<Var> {
        let shape = tape.shape(input).to_vec();
        let s = self.cfg.image_size;
        if shape.len() != 4 || shape[0] % (2 * TRIPLES) != 0 || shape[1..] != [3, s, s] {
            return Err(ModelError::Input(format!("expected [B*20,3,{s},{s}] input, got {shape:?}")));
        }
        let b = shape[0] / (2 * TRIPLES);
        let (c, h) = (self.cfg.channels.out, self.cfg.feature_side());
        let f = self.encode(tape, input, pass)?;
        let f = reshape(tape, f, &[b * 2, TRIPLES, c, h, h])?;
        let g = rule_contrast(tape, f, self.cfg.ablation)?;
        let hc = self.choice_contrast(tape, g, pass)?;
        let hc = reshape(tape, hc, &[b, 2, CHOICES, c, h, h])?;
        let rows = narrow(tape, hc, 1, 0, 1)?;
        let cols = narrow(tape, hc, 1, 1, 1)?;
        let sum = add(tape, rows, cols)?;
        let sum = reshape(tape, sum, &[b, CHOICES, c, h, h])?;
        self.score_head(tape, sum, pass)
    }

    /// Eval-mode scores `[B,8]` for a batch of puzzles.
    pub fn scores(&self, puzzles: &[&Puzzle]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(batch_triples(puzzles)?);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut pass = Pass::new(Mode::Eval, &mut rng);
        let s = self.forward(&mut tape, x, &mut pass)?;
        Ok(tape.value(s).clone())
    }

    /// Predicted answer index for each puzzle.
    pub fn predict(&self, puzzles: &[&Puzzle]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.scores(puzzles)?))
    }

    /// Parameters, Adam state and running statistics.
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        let mut records: Vec<Parameter> = self.store.iter().cloned().collect();
        for (name, rs) in self.running_stats() {
            for (suffix, v) in [("running_mean", &rs.mean), ("running_var", &rs.var)] {
                let mut p = Parameter::new(format!("{name}.{suffix}"), Tensor::new(vec![v.len()], v.clone())?);
                p.trainable = false;
                records.push(p);
            }
        }
        write_checkpoint(w, &records)?;
        Ok(())
    }

    /// Restores a checkpoint written by [`Dcnet::save`] for the same
    /// configuration. Every record must match a tensor of this network.
    pub fn load(&mut self, r: &mut impl Read) -> Result<()> {
        let records = read_checkpoint(r)?;
        let expected = self.store.len() + 2 * self.running.len();
        if records.len() != expected {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint has {} tensors, network has {expected}",
                records.len()
            )));
        }
        let mut running = self.running.clone();
        let mut store = self.store.clone();
        for rec in records {
            if let Some(id) = store.find(&rec.name) {
                let p = store.get_mut(id);
                if p.tensor.shape() != rec.tensor.shape() {
                    return Err(ModelError::Checkpoint(format!(
                        "{}: shape {:?}, expected {:?}",
                        rec.name,
                        rec.tensor.shape(),
                        p.tensor.shape()
                    )));
                }
                p.tensor = rec.tensor;
                p.adam_m = rec.adam_m;
                p.adam_v = rec.adam_v;
                p.step = rec.step;
                p.grad.iter_mut().for_each(|g| *g = 0.0);
                continue;
            }
            let (layer, field) = rec
                .name
                .rsplit_once('.')
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor {}", rec.name)))?;
            let slot = self
                .bn_names
                .iter()
                .position(|n| n == layer)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor {}", rec.name)))?;
            let dst = match field {
                "running_mean" => &mut running[slot].mean,
                "running_var" => &mut running[slot].var,
                _ => return Err(ModelError::Checkpoint(format!("unknown tensor {}", rec.name))),
            };
            if rec.tensor.shape() != [dst.len()] {
                return Err(ModelError::Checkpoint(format!("{}: wrong length", rec.name)));
            }
            dst.copy_from_slice(rec.tensor.data());
        }
        self.store = store;
        self.running = running;
        Ok(())
    }
}

/// `[M,10,C,h,w]` to `[M,8,C,h,w]`: each candidate triple minus the mean
/// of the two context triples. Under the ablation the candidates pass
/// through unchanged.
pub fn rule_contrast(tape: &mut Tape, f: Var, ablation: Ablation) -> Result<Var> {
    let cand = narrow(tape, f, 1, 2, CHOICES)?;
    if ablation == Ablation::NoRuleContrast {
        return Ok(cand);
    }
    let ctx = narrow(tape, f, 1, 0, 2)?;
    let centroid = mean_over(tape, ctx, 1)?;
    let centroid = expand_axis(tape, centroid, 1, CHOICES)?;
    Ok(sub(tape, cand, centroid)?)
}

/// Row-wise argmax of `[B,K]` scores; ties go to the lowest index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let k = *scores.shape().last().expect("rank >= 1");
    scores
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect()
}
