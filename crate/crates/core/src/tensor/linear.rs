use super::tape::{Backward, GradSink};
use super::{ensure_finite, expect_rank, Result, Tape, Tensor, TensorError, Var};

/// Row-major matrix view for [`gemm`]: `rows x cols`, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { data, rows, cols, transposed: false }
    }

    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a·b + beta·c` with `c` row-major `m x n`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output size");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the strides and dimensions above describe exactly the backing
    // slices, whose lengths were checked on construction.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct LinearBack {
    x: Var,
    w: Var,
    b: Var,
    n: usize,
    d: usize,
    k: usize,
}

impl Backward for LinearBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.w, self.b]
    }

    fn backward(&self, tape: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        let (n, d, k) = (self.n, self.d, self.k);
        let gm = Mat::new(g, n, k);
        if let Some(gx) = sink.slot(self.x) {
            let w = Mat::new(tape.value(self.w).data(), d, k);
            gemm(gm, w.t(), 1.0, gx);
        }
        if let Some(gw) = sink.slot(self.w) {
            let x = Mat::new(tape.value(self.x).data(), n, d);
            gemm(x.t(), gm, 1.0, gw);
        }
        if let Some(gb) = sink.slot(self.b) {
            for row in g.chunks_exact(k) {
                for (s, v) in gb.iter_mut().zip(row) {
                    *s += v;
                }
            }
        }
    }
}

/// `x[N,D] · w[D,K] + b[K]`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let (tx, tw, tb) = (tape.value(x), tape.value(w), tape.value(b));
    expect_rank("linear", tx.shape(), 2)?;
    expect_rank("linear", tw.shape(), 2)?;
    let (n, d) = (tx.shape()[0], tx.shape()[1]);
    let k = tw.shape()[1];
    if tw.shape()[0] != d || tb.shape() != [k] {
        return Err(TensorError::Shape {
            op: "linear",
            detail: format!("input {:?}, weight {:?}, bias {:?}", tx.shape(), tw.shape(), tb.shape()),
        });
    }
    let mut out = Vec::with_capacity(n * k);
    for _ in 0..n {
        out.extend_from_slice(tb.data());
    }
    gemm(Mat::new(tx.data(), n, d), Mat::new(tw.data(), d, k), 1.0, &mut out);
    ensure_finite("linear", &out)?;
    Ok(tape.push(Tensor { shape: vec![n, k], data: out }, LinearBack { x, w, b, n, d, k }))
}
