//! Nested-loop reference implementations and randomized sweeps against them.

use dcnet::tensor::{
    adaptive_avg_pool2d, batchnorm2d, bce_with_logits, conv2d, linear, maxpool2d, mul, sum, BatchNormConfig, Mode,
    RunningStats, Tape, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

fn at(t: &Tensor, idx: [usize; 4]) -> f64 {
    let s = t.shape();
    t.data()[((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]]
}

fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [o, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for s in 0..n {
        for k in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.data()[k];
                    for ch in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let y = (i * stride + u) as isize - pad as isize;
                                let xx = (j * stride + v) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                    acc += at(x, [s, ch, y as usize, xx as usize]) * at(w, [k, ch, u, v]);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

fn naive_maxpool(x: &Tensor, k: usize, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = Vec::new();
    for s in 0..n {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for u in 0..k {
                        for v in 0..k {
                            let y = (i * stride + u) as isize - pad as isize;
                            let xx = (j * stride + v) as isize - pad as isize;
                            if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                best = best.max(at(x, [s, ch, y as usize, xx as usize]));
                            }
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

fn naive_adaptive_avg(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let mut out = Vec::new();
    for s in 0..n {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let (y0, y1) = (i * h / oh, ((i + 1) * h).div_ceil(oh));
                    let (x0, x1) = (j * w / ow, ((j + 1) * w).div_ceil(ow));
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            acc += at(x, [s, ch, y, xx]);
                        }
                    }
                    out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

fn naive_batchnorm(x: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Tensor {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let mut out = Vec::new();
    for s in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = at(x, [s, ch, y, xx]);
                    out.push(gamma[ch] * (v - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch]);
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

fn batch_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let m = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        for s in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    mean[ch] += at(x, [s, ch, y, xx]);
                }
            }
        }
        mean[ch] /= m;
        for s in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    var[ch] += (at(x, [s, ch, y, xx]) - mean[ch]).powi(2);
                }
            }
        }
        var[ch] /= m;
    }
    (mean, var)
}


/// Largest deviation of `conv2d` from the nested-loop reference over `cases`
/// random geometries (kernel 1..5, stride 1..3, padding below the kernel).
pub fn conv2d_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, c, o) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let k = rng.gen_range(1..6);
        let stride = rng.gen_range(1..4);
        let pad = rng.gen_range(0..k.min(4));
        let h = rng.gen_range(k..10);
        let w = rng.gen_range(k..10);
        let (x, wt, b) = (random(&mut rng, &[n, c, h, w]), random(&mut rng, &[o, c, k, k]), random(&mut rng, &[o]));
        let mut tape = Tape::new();
        let (vx, vw, vb) = (tape.constant(x.clone()), tape.constant(wt.clone()), tape.constant(b.clone()));
        let y = conv2d(&mut tape, vx, vw, vb, stride, pad).unwrap();
        let want = naive_conv(&x, &wt, &b, stride, pad);
        assert_eq!(tape.value(y).shape(), want.shape());
        worst = worst.max(tape.value(y).max_abs_diff(&want));
    }
    worst
}

pub fn maxpool2d_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = rng.gen_range(1..5);
        let stride = rng.gen_range(1..4);
        let pad = rng.gen_range(0..=k / 2);
        let (h, w) = (rng.gen_range(k..11), rng.gen_range(k..11));
        let shape = [rng.gen_range(1..3), rng.gen_range(1..4), h, w];
        let x = random(&mut rng, &shape);
        let mut tape = Tape::new();
        let vx = tape.constant(x.clone());
        let y = maxpool2d(&mut tape, vx, k, stride, pad).unwrap();
        let want = naive_maxpool(&x, k, stride, pad);
        assert_eq!(tape.value(y).shape(), want.shape());
        worst = worst.max(tape.value(y).max_abs_diff(&want));
    }
    worst
}

pub fn adaptive_avg_pool2d_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (h, w) = (rng.gen_range(1..13), rng.gen_range(1..13));
        let (oh, ow) = (rng.gen_range(1..=h), rng.gen_range(1..=w));
        let shape = [rng.gen_range(1..3), rng.gen_range(1..4), h, w];
        let x = random(&mut rng, &shape);
        let mut tape = Tape::new();
        let vx = tape.constant(x.clone());
        let y = adaptive_avg_pool2d(&mut tape, vx, oh, ow).unwrap();
        let want = naive_adaptive_avg(&x, oh, ow);
        assert_eq!(tape.value(y).shape(), want.shape());
        worst = worst.max(tape.value(y).max_abs_diff(&want));
    }
    worst
}

/// Alternates eval mode (running statistics) and train mode (batch
/// statistics, which are compared as well).
pub fn batchnorm2d_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = BatchNormConfig::default();
    let mut worst = 0.0f64;
    for case in 0..cases {
        let c = rng.gen_range(1..5);
        let shape = [rng.gen_range(1..4), c, rng.gen_range(1..6), rng.gen_range(2..6)];
        let x = random(&mut rng, &shape);
        let gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rmean: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rvar: Vec<f64> = (0..c).map(|_| rng.gen_range(0.1..3.0)).collect();
        let running = RunningStats::from_parts(rmean.clone(), rvar.clone());
        let mode = if case % 2 == 0 { Mode::Eval } else { Mode::Train };
        let mut tape = Tape::new();
        let vx = tape.constant(x.clone());
        let vg = tape.constant(Tensor::new(vec![c], gamma.clone()).unwrap());
        let vb = tape.constant(Tensor::new(vec![c], beta.clone()).unwrap());
        let (y, stats) = batchnorm2d(&mut tape, vx, vg, vb, &running, mode, cfg).unwrap();
        let want = match mode {
            Mode::Eval => naive_batchnorm(&x, &gamma, &beta, &rmean, &rvar, cfg.eps),
            Mode::Train => {
                let (mean, var) = batch_moments(&x);
                let stats = stats.expect("train mode reports batch statistics");
                for ch in 0..c {
                    worst = worst.max((stats.mean[ch] - mean[ch]).abs()).max((stats.var[ch] - var[ch]).abs());
                }
                naive_batchnorm(&x, &gamma, &beta, &mean, &var, cfg.eps)
            }
        };
        worst = worst.max(tape.value(y).max_abs_diff(&want));
    }
    worst
}

pub fn linear_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, d, k) = (rng.gen_range(1..6), rng.gen_range(1..20), rng.gen_range(1..10));
        let (x, w, b) = (random(&mut rng, &[n, d]), random(&mut rng, &[d, k]), random(&mut rng, &[k]));
        let mut want = Vec::new();
        for i in 0..n {
            for j in 0..k {
                let mut acc = b.data()[j];
                for m in 0..d {
                    acc += x.data()[i * d + m] * w.data()[m * k + j];
                }
                want.push(acc);
            }
        }
        let mut tape = Tape::new();
        let (vx, vw, vb) = (tape.constant(x), tape.constant(w), tape.constant(b));
        let y = linear(&mut tape, vx, vw, vb).unwrap();
        worst = worst.max(tape.value(y).max_abs_diff(&Tensor::new(vec![n, k], want).unwrap()));
    }
    worst
}

/// Deviation of `bce_with_logits` from `-[y ln σ(s) + (1-y) ln σ(-s)]` for
/// scores in [-30, 30], always including an endpoint.
pub fn bce_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = |s: f64| 1.0 / (1.0 + (-s).exp());
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.gen_range(1..5);
        let mut scores: Vec<f64> = (0..n * 8).map(|_| rng.gen_range(-30.0..=30.0)).collect();
        scores[0] = if rng.gen() { 30.0 } else { -30.0 };
        let mut targets = vec![0.0; n * 8];
        for r in 0..n {
            targets[r * 8 + rng.gen_range(0..8)] = 1.0;
        }
        let want: f64 =
            scores.iter().zip(&targets).map(|(&s, &y)| -(y * sigma(s).ln() + (1.0 - y) * sigma(-s).ln())).sum();
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::new(vec![n, 8], scores).unwrap());
        let loss = bce_with_logits(&mut tape, v, &Tensor::new(vec![n, 8], targets).unwrap()).unwrap();
        worst = worst.max((tape.value(loss).item().unwrap() - want).abs());
    }
    worst
}

/// Deviation of the conv2d input and weight gradients of `sum(r * conv(x))`
/// from their nested-loop adjoints.
pub fn conv2d_grad_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, c, o) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let k = rng.gen_range(1..6);
        let stride = rng.gen_range(1..4);
        let pad = rng.gen_range(0..k.min(4));
        let h = rng.gen_range(k..10);
        let w = rng.gen_range(k..10);
        let (x, wt) = (random(&mut rng, &[n, c, h, w]), random(&mut rng, &[o, c, k, k]));
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let r = random(&mut rng, &[n, o, oh, ow]);
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; wt.len()];
        for s in 0..n {
            for q in 0..o {
                for i in 0..oh {
                    for j in 0..ow {
                        let g = at(&r, [s, q, i, j]);
                        for ch in 0..c {
                            for u in 0..k {
                                for v in 0..k {
                                    let y = (i * stride + u) as isize - pad as isize;
                                    let xx = (j * stride + v) as isize - pad as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                        let xi = ((s * c + ch) * h + y as usize) * w + xx as usize;
                                        let wi = ((q * c + ch) * k + u) * k + v;
                                        gx[xi] += g * wt.data()[wi];
                                        gw[wi] += g * x.data()[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut tape = Tape::new();
        let (vx, vw) = (tape.variable(x), tape.variable(wt));
        let vb = tape.constant(Tensor::zeros(&[o]));
        let vr = tape.constant(r);
        let y = conv2d(&mut tape, vx, vw, vb, stride, pad).unwrap();
        let prod = mul(&mut tape, y, vr).unwrap();
        let loss = sum(&mut tape, prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (got, want) in [(grads.get(vx).unwrap(), &gx), (grads.get(vw).unwrap(), &gw)] {
            worst = got.iter().zip(want).fold(worst, |m, (a, b)| m.max((a - b).abs()));
        }
    }
    worst
}
