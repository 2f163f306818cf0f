use super::tape::{Backward, GradSink};
use super::{expect_rank, Result, Tape, Tensor, TensorError, Var};

struct MaxPoolBack {
    x: Var,
    argmax: Vec<usize>,
}

impl Backward for MaxPoolBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        if let Some(s) = sink.slot(self.x) {
            for (&src, gv) in self.argmax.iter().zip(g) {
                s[src] += gv;
            }
        }
    }
}

/// Windowed max over `[N,C,H,W]`. Padding cells never win. The gradient goes
/// to the first maximal element of each window in row-major order.
pub fn maxpool2d(tape: &mut Tape, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
    let t = tape.value(x);
    expect_rank("maxpool2d", t.shape(), 4)?;
    let [n, c, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]];
    if kernel == 0 || stride == 0 {
        return Err(TensorError::Invalid { op: "maxpool2d", detail: "kernel and stride must be >= 1".into() });
    }
    if kernel > h + 2 * padding || kernel > w + 2 * padding {
        return Err(TensorError::Shape {
            op: "maxpool2d",
            detail: format!("window {kernel} larger than padded input {}x{}", h + 2 * padding, w + 2 * padding),
        });
    }
    if 2 * padding > kernel {
        return Err(TensorError::Invalid {
            op: "maxpool2d",
            detail: format!("padding {padding} exceeds half the window {kernel}"),
        });
    }
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let xd = t.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for i in 0..kernel {
                    let iy = (oy * stride + i) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for j in 0..kernel {
                        let ix = (ox * stride + j) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let out = Tensor { shape: vec![n, c, oh, ow], data: out };
    Ok(tape.push(out, MaxPoolBack { x, argmax }))
}

fn bins(input: usize, output: usize) -> Vec<(usize, usize)> {
    (0..output)
        .map(|i| ((i * input) / output, ((i + 1) * input).div_ceil(output)))
        .collect()
}

struct AvgPoolBack {
    x: Var,
    shape: [usize; 4],
    out_hw: (usize, usize),
}

impl Backward for AvgPoolBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        let Some(s) = sink.slot(self.x) else { return };
        let [n, c, h, w] = self.shape;
        let (oh, ow) = self.out_hw;
        let (ry, rx) = (bins(h, oh), bins(w, ow));
        for plane in 0..n * c {
            for (oy, &(y0, y1)) in ry.iter().enumerate() {
                for (ox, &(x0, x1)) in rx.iter().enumerate() {
                    let gv = g[(plane * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                    for y in y0..y1 {
                        for v in &mut s[plane * h * w + y * w + x0..plane * h * w + y * w + x1] {
                            *v += gv;
                        }
                    }
                }
            }
        }
    }
}

/// Average pooling to a fixed `out_h x out_w` grid, independent of input size.
pub fn adaptive_avg_pool2d(tape: &mut Tape, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
    let t = tape.value(x);
    expect_rank("adaptive_avg_pool2d", t.shape(), 4)?;
    let [n, c, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]];
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(TensorError::Shape {
            op: "adaptive_avg_pool2d",
            detail: format!("cannot pool {h}x{w} to {out_h}x{out_w}"),
        });
    }
    let (ry, rx) = (bins(h, out_h), bins(w, out_w));
    let xd = t.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in 0..n * c {
        for &(y0, y1) in &ry {
            for &(x0, x1) in &rx {
                let mut acc = 0.0;
                for y in y0..y1 {
                    acc += xd[plane * h * w + y * w + x0..plane * h * w + y * w + x1].iter().sum::<f64>();
                }
                out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    let out = Tensor { shape: vec![n, c, out_h, out_w], data: out };
    Ok(tape.push(out, AvgPoolBack { x, shape: [n, c, h, w], out_hw: (out_h, out_w) }))
}
