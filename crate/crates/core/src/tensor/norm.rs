use super::tape::{Backward, GradSink};
use super::{ensure_finite, expect_rank, Mode, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self { momentum: 0.1, eps: 1e-5 }
    }
}

/// Per-channel statistics of one training batch (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Running mean/variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    initialized: bool,
}

impl RunningStats {
    /// Placeholder stats; eval mode refuses them until the first update.
    pub fn uninitialized(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels], initialized: false }
    }

    /// Explicit mean 0 / var 1 initialisation, usable in eval mode at once.
    pub fn identity(channels: usize) -> Self {
        Self { initialized: true, ..Self::uninitialized(channels) }
    }

    pub fn from_parts(mean: Vec<f64>, var: Vec<f64>) -> Self {
        Self { mean, var, initialized: true }
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving average with weight `momentum` on the new batch.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        self.initialized = true;
    }
}

struct BnBack {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    dims: [usize; 3],
    train: bool,
}

impl Backward for BnBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gamma, self.beta]
    }

    fn backward(&self, tape: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        let [n, c, plane] = self.dims;
        let m = (n * plane) as f64;
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for k in off..off + plane {
                    sum_g[ch] += g[k];
                    sum_gx[ch] += g[k] * self.xhat[k];
                }
            }
        }
        if let Some(gb) = sink.slot(self.beta) {
            gb.iter_mut().zip(&sum_g).for_each(|(d, v)| *d += v);
        }
        if let Some(gg) = sink.slot(self.gamma) {
            gg.iter_mut().zip(&sum_gx).for_each(|(d, v)| *d += v);
        }
        let gamma = tape.value(self.gamma).data().to_vec();
        let Some(gx) = sink.slot(self.x) else { return };
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                let k_scale = gamma[ch] * self.inv_std[ch];
                if self.train {
                    let (mg, mgx) = (sum_g[ch] / m, sum_gx[ch] / m);
                    for k in off..off + plane {
                        gx[k] += k_scale * (g[k] - mg - self.xhat[k] * mgx);
                    }
                } else {
                    for k in off..off + plane {
                        gx[k] += k_scale * g[k];
                    }
                }
            }
        }
    }
}

/// Batch normalisation over `[N,C,H,W]`.
///
/// Train mode normalises with the batch's own per-channel mean and biased
/// variance and returns those statistics so the caller can fold them into
/// `running`. Eval mode is a fixed affine map built from `running`.
pub fn batchnorm2d(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    running: &RunningStats,
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<(Var, Option<BatchStats>)> {
    let t = tape.value(x);
    expect_rank("batchnorm2d", t.shape(), 4)?;
    let (n, c, plane) = (t.shape()[0], t.shape()[1], t.shape()[2] * t.shape()[3]);
    for (name, v) in [("gamma", gamma), ("beta", beta)] {
        if tape.shape(v) != [c] {
            return Err(TensorError::Shape {
                op: "batchnorm2d",
                detail: format!("{name} {:?} for {c} channels", tape.shape(v)),
            });
        }
    }
    if running.channels() != c {
        return Err(TensorError::Shape {
            op: "batchnorm2d",
            detail: format!("running stats for {} channels, input has {c}", running.channels()),
        });
    }
    let xd = t.data();
    let (mean, var, stats) = match mode {
        Mode::Train => {
            let m = n * plane;
            if m < 2 {
                return Err(TensorError::Invalid {
                    op: "batchnorm2d",
                    detail: format!("train mode needs at least 2 values per channel, got {m}"),
                });
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for s in 0..n {
                for ch in 0..c {
                    mean[ch] += xd[(s * c + ch) * plane..][..plane].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m as f64);
            for s in 0..n {
                for ch in 0..c {
                    let mu = mean[ch];
                    var[ch] += xd[(s * c + ch) * plane..][..plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m as f64);
            let stats = BatchStats { mean: mean.clone(), var: var.clone() };
            (mean, var, Some(stats))
        }
        Mode::Eval => {
            if !running.is_initialized() {
                return Err(TensorError::Invalid {
                    op: "batchnorm2d",
                    detail: "eval mode before running statistics were initialised or updated".into(),
                });
            }
            (running.mean.clone(), running.var.clone(), None)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();
    let (gd, bd) = (tape.value(gamma).data(), tape.value(beta).data());
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            for k in off..off + plane {
                xhat[k] = (xd[k] - mean[ch]) * inv_std[ch];
                out[k] = gd[ch] * xhat[k] + bd[ch];
            }
        }
    }
    ensure_finite("batchnorm2d", &out)?;
    let shape = t.shape().to_vec();
    let back = BnBack { x, gamma, beta, xhat, inv_std, dims: [n, c, plane], train: mode == Mode::Train };
    Ok((tape.push(Tensor { shape, data: out }, back), stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(tape: &mut Tape, c: usize) -> (Var, Var) {
        (tape.constant(Tensor::full(&[c], 1.0)), tape.constant(Tensor::zeros(&[c])))
    }

    #[test]
    fn constant_channel_normalises_to_zero() {
        let mut tape = Tape::new();
        let mut data = vec![3.0; 2 * 2 * 4];
        data[8..].fill(-7.0);
        let x = tape.constant(Tensor::new(vec![1, 2, 2, 4], data).unwrap());
        let (g, b) = affine(&mut tape, 2);
        let rs = RunningStats::uninitialized(2);
        let (y, stats) = batchnorm2d(&mut tape, x, g, b, &rs, Mode::Train, Default::default()).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(stats.unwrap().mean, vec![3.0, -7.0]);
    }

    #[test]
    fn eval_requires_initialised_stats() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let (g, b) = affine(&mut tape, 1);
        let cfg = BatchNormConfig::default();
        assert!(batchnorm2d(&mut tape, x, g, b, &RunningStats::uninitialized(1), Mode::Eval, cfg).is_err());
        assert!(batchnorm2d(&mut tape, x, g, b, &RunningStats::identity(1), Mode::Eval, cfg).is_ok());
    }

    #[test]
    fn eval_identity_with_unit_stats() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..8).map(|i| i as f64 * 0.37 - 1.0).collect();
        let x = tape.constant(Tensor::new(vec![2, 1, 2, 2], data.clone()).unwrap());
        let (g, b) = affine(&mut tape, 1);
        let cfg = BatchNormConfig { eps: 0.0, ..Default::default() };
        let (y, _) = batchnorm2d(&mut tape, x, g, b, &RunningStats::identity(1), Mode::Eval, cfg).unwrap();
        assert_eq!(tape.value(y).data(), data.as_slice());
    }

    #[test]
    fn train_needs_two_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let (g, b) = affine(&mut tape, 1);
        let rs = RunningStats::identity(1);
        assert!(batchnorm2d(&mut tape, x, g, b, &rs, Mode::Train, Default::default()).is_err());
    }

    #[test]
    fn running_update_is_ema() {
        let mut rs = RunningStats::uninitialized(1);
        rs.update(&BatchStats { mean: vec![2.0], var: vec![3.0] }, 0.1);
        assert!((rs.mean[0] - 0.2).abs() < 1e-15);
        assert!((rs.var[0] - (0.9 + 0.3)).abs() < 1e-15);
        assert!(rs.is_initialized());
    }
}
