use rand::Rng;

use super::tape::{Backward, GradSink};
use super::{ensure_finite, same_shape, Mode, Result, Tape, Tensor, TensorError, Var};

fn binary(
    tape: &mut Tape,
    op: &'static str,
    a: Var,
    b: Var,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    same_shape(op, ta.shape(), tb.shape())?;
    let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
    ensure_finite(op, &data)?;
    Ok(Tensor { shape: ta.shape().to_vec(), data })
}

struct AddBack {
    a: Var,
    b: Var,
    sign: f64,
}

impl Backward for AddBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        sink.add(self.a, g);
        if let Some(s) = sink.slot(self.b) {
            for (s, x) in s.iter_mut().zip(g) {
                *s += self.sign * x;
            }
        }
    }
}

pub fn add(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let out = binary(tape, "add", a, b, |x, y| x + y)?;
    Ok(tape.push(out, AddBack { a, b, sign: 1.0 }))
}

pub fn sub(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let out = binary(tape, "sub", a, b, |x, y| x - y)?;
    Ok(tape.push(out, AddBack { a, b, sign: -1.0 }))
}

struct MulBack {
    a: Var,
    b: Var,
}

impl Backward for MulBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }
    fn backward(&self, tape: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        let (va, vb) = (tape.value(self.a).data(), tape.value(self.b).data());
        if let Some(s) = sink.slot(self.a) {
            for i in 0..s.len() {
                s[i] += g[i] * vb[i];
            }
        }
        if let Some(s) = sink.slot(self.b) {
            for i in 0..s.len() {
                s[i] += g[i] * va[i];
            }
        }
    }
}

/// Elementwise product of equal-shaped tensors.
pub fn mul(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let out = binary(tape, "mul", a, b, |x, y| x * y)?;
    Ok(tape.push(out, MulBack { a, b }))
}

struct ScaleBack {
    a: Var,
    s: f64,
}

impl Backward for ScaleBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        if let Some(slot) = sink.slot(self.a) {
            for (d, x) in slot.iter_mut().zip(g) {
                *d += self.s * x;
            }
        }
    }
}

/// Multiplies every element by a scalar; the only broadcast the engine allows.
pub fn scale(tape: &mut Tape, a: Var, s: f64) -> Result<Var> {
    let t = tape.value(a);
    let data: Vec<f64> = t.data().iter().map(|x| x * s).collect();
    ensure_finite("scale", &data)?;
    let out = Tensor { shape: t.shape().to_vec(), data };
    Ok(tape.push(out, ScaleBack { a, s }))
}

struct ReluBack {
    a: Var,
}

impl Backward for ReluBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }
    fn backward(&self, tape: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        let x = tape.value(self.a).data();
        if let Some(s) = sink.slot(self.a) {
            for i in 0..s.len() {
                if x[i] > 0.0 {
                    s[i] += g[i];
                }
            }
        }
    }
}

pub fn relu(tape: &mut Tape, a: Var) -> Result<Var> {
    let t = tape.value(a);
    let out = Tensor { shape: t.shape().to_vec(), data: t.data().iter().map(|&x| x.max(0.0)).collect() };
    Ok(tape.push(out, ReluBack { a }))
}

struct SigmoidBack {
    a: Var,
    out: Vec<f64>,
}

impl Backward for SigmoidBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        if let Some(s) = sink.slot(self.a) {
            for i in 0..s.len() {
                let y = self.out[i];
                s[i] += g[i] * y * (1.0 - y);
            }
        }
    }
}

pub fn sigmoid(tape: &mut Tape, a: Var) -> Result<Var> {
    let t = tape.value(a);
    let data: Vec<f64> = t.data().iter().map(|&x| super::sigmoid_scalar(x)).collect();
    let out = Tensor { shape: t.shape().to_vec(), data: data.clone() };
    Ok(tape.push(out, SigmoidBack { a, out: data }))
}

struct SumBack {
    a: Var,
}

impl Backward for SumBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        if let Some(s) = sink.slot(self.a) {
            s.iter_mut().for_each(|v| *v += g[0]);
        }
    }
}

/// Sum of all elements, as a one-element tensor.
pub fn sum(tape: &mut Tape, a: Var) -> Result<Var> {
    let total: f64 = tape.value(a).data().iter().sum();
    ensure_finite("sum", &[total])?;
    Ok(tape.push(Tensor::scalar(total), SumBack { a }))
}

fn split_at_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Shape { op, detail: format!("axis {axis} out of range for {shape:?}") });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

struct MeanBack {
    a: Var,
    outer: usize,
    n: usize,
    inner: usize,
}

impl Backward for MeanBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        let Some(s) = sink.slot(self.a) else { return };
        let w = 1.0 / self.n as f64;
        for o in 0..self.outer {
            let gr = &g[o * self.inner..(o + 1) * self.inner];
            for k in 0..self.n {
                let base = (o * self.n + k) * self.inner;
                for (d, x) in s[base..base + self.inner].iter_mut().zip(gr) {
                    *d += w * x;
                }
            }
        }
    }
}

/// Mean along `axis`; the axis is removed from the shape.
pub fn mean_over(tape: &mut Tape, a: Var, axis: usize) -> Result<Var> {
    let t = tape.value(a);
    let (outer, n, inner) = split_at_axis("mean_over", t.shape(), axis)?;
    let mut shape = t.shape().to_vec();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    let x = t.data();
    let mut data = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut data[o * inner..(o + 1) * inner];
        for k in 0..n {
            let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
        let w = 1.0 / n as f64;
        dst.iter_mut().for_each(|d| *d *= w);
    }
    Ok(tape.push(Tensor { shape, data }, MeanBack { a, outer, n, inner }))
}

struct ExpandBack {
    a: Var,
    outer: usize,
    n: usize,
    inner: usize,
}

impl Backward for ExpandBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        let Some(s) = sink.slot(self.a) else { return };
        for o in 0..self.outer {
            let dst = &mut s[o * self.inner..(o + 1) * self.inner];
            for k in 0..self.n {
                let base = (o * self.n + k) * self.inner;
                for (d, x) in dst.iter_mut().zip(&g[base..base + self.inner]) {
                    *d += x;
                }
            }
        }
    }
}

/// Inserts a new axis of length `n` at `axis` by repetition. This is the
/// explicit replacement for implicit broadcasting.
pub fn expand_axis(tape: &mut Tape, a: Var, axis: usize, n: usize) -> Result<Var> {
    let t = tape.value(a);
    if axis > t.rank() || n == 0 {
        return Err(TensorError::Shape {
            op: "expand_axis",
            detail: format!("cannot insert axis {axis} of length {n} into {:?}", t.shape()),
        });
    }
    let outer: usize = t.shape()[..axis].iter().product();
    let inner: usize = t.shape()[axis..].iter().product();
    let mut shape = t.shape().to_vec();
    shape.insert(axis, n);
    let x = t.data();
    let mut data = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        for _ in 0..n {
            data.extend_from_slice(&x[o * inner..(o + 1) * inner]);
        }
    }
    Ok(tape.push(Tensor { shape, data }, ExpandBack { a, outer, n, inner }))
}

struct NarrowBack {
    a: Var,
    outer: usize,
    n: usize,
    inner: usize,
    start: usize,
    len: usize,
}

impl Backward for NarrowBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        let Some(s) = sink.slot(self.a) else { return };
        let chunk = self.len * self.inner;
        for o in 0..self.outer {
            let dst = (o * self.n + self.start) * self.inner;
            for (d, x) in s[dst..dst + chunk].iter_mut().zip(&g[o * chunk..(o + 1) * chunk]) {
                *d += x;
            }
        }
    }
}

/// Slice `[start, start+len)` along `axis`.
pub fn narrow(tape: &mut Tape, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
    let t = tape.value(a);
    let (outer, n, inner) = split_at_axis("narrow", t.shape(), axis)?;
    if len == 0 || start + len > n {
        return Err(TensorError::Shape {
            op: "narrow",
            detail: format!("range {start}..{} exceeds axis {axis} of {:?}", start + len, t.shape()),
        });
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    let x = t.data();
    let chunk = len * inner;
    let mut data = Vec::with_capacity(outer * chunk);
    for o in 0..outer {
        let src = (o * n + start) * inner;
        data.extend_from_slice(&x[src..src + chunk]);
    }
    Ok(tape.push(Tensor { shape, data }, NarrowBack { a, outer, n, inner, start, len }))
}

struct ReshapeBack {
    a: Var,
}

impl Backward for ReshapeBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        sink.add(self.a, g);
    }
}

pub fn reshape(tape: &mut Tape, a: Var, shape: &[usize]) -> Result<Var> {
    let out = tape.value(a).clone().reshaped(shape.to_vec())?;
    Ok(tape.push(out, ReshapeBack { a }))
}

/// Collapses every axis from `from_axis` onwards into one.
pub fn flatten(tape: &mut Tape, a: Var, from_axis: usize) -> Result<Var> {
    let shape = tape.shape(a);
    if from_axis >= shape.len() {
        return Err(TensorError::Shape {
            op: "flatten",
            detail: format!("axis {from_axis} out of range for {shape:?}"),
        });
    }
    let mut new_shape = shape[..from_axis].to_vec();
    new_shape.push(shape[from_axis..].iter().product());
    reshape(tape, a, &new_shape)
}

struct DropoutBack {
    a: Var,
    mask: Vec<f64>,
}

impl Backward for DropoutBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a]
    }
    fn backward(&self, _: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        if let Some(s) = sink.slot(self.a) {
            for i in 0..s.len() {
                s[i] += g[i] * self.mask[i];
            }
        }
    }
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1/(1-p)`. Eval mode and `p == 0` return
/// the input handle unchanged.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, a: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::Invalid { op: "dropout", detail: format!("p = {p} not in [0, 1)") });
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(a);
    }
    let keep = 1.0 / (1.0 - p);
    let t = tape.value(a);
    let mask: Vec<f64> = (0..t.len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
    let out = Tensor { shape: t.shape().to_vec(), data };
    Ok(tape.push(out, DropoutBack { a, mask }))
}
