use super::linear::{gemm, Mat};
use super::tape::{Backward, GradSink};
use super::{ensure_finite, expect_rank, Result, Tape, Tensor, TensorError, Var};

/// Upper bound on the im2col buffer, in elements, per gemm group.
const COL_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn plane(&self) -> usize {
        self.oh * self.ow
    }
    /// Samples per gemm group.
    fn group(&self) -> usize {
        (COL_BUDGET / (self.ckk() * self.plane()).max(1)).clamp(1, self.n)
    }
}

/// Output columns `[lo, hi)` whose input column `ox*stride + j - pad` lies in `0..w`.
fn valid_range(geo: &Geometry, j: usize) -> (usize, usize) {
    let lo = if geo.pad > j { (geo.pad - j).div_ceil(geo.stride) } else { 0 };
    let hi = if geo.w + geo.pad > j { ((geo.w + geo.pad - j - 1) / geo.stride + 1).min(geo.ow) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds samples `[s0, s0+g)` into `cols[ckk, g*plane]`. Padding cells are
/// never written, so `cols` must start zeroed; they sit at the same positions
/// for every group, so a buffer can be reused across groups.
fn im2col(geo: &Geometry, x: &[f64], s0: usize, g: usize, cols: &mut [f64]) {
    let (plane, width) = (geo.plane(), g * geo.plane());
    let ranges: Vec<(usize, usize)> = (0..geo.kw).map(|j| valid_range(geo, j)).collect();
    for c in 0..geo.c {
        for i in 0..geo.kh {
            for (j, &(lo, hi)) in ranges.iter().enumerate() {
                if lo == hi {
                    continue;
                }
                let row = ((c * geo.kh + i) * geo.kw + j) * width;
                let first = lo * geo.stride + j - geo.pad;
                for s in 0..g {
                    let img = &x[((s0 + s) * geo.c + c) * geo.h * geo.w..][..geo.h * geo.w];
                    let dst = &mut cols[row + s * plane..row + (s + 1) * plane];
                    for oy in 0..geo.oh {
                        let iy = (oy * geo.stride + i) as isize - geo.pad as isize;
                        if iy < 0 || iy >= geo.h as isize {
                            continue;
                        }
                        let src = &img[iy as usize * geo.w + first..(iy as usize + 1) * geo.w];
                        let line = &mut dst[oy * geo.ow + lo..oy * geo.ow + hi];
                        if geo.stride == 1 {
                            line.copy_from_slice(&src[..hi - lo]);
                        } else {
                            for (d, v) in line.iter_mut().zip(src.iter().step_by(geo.stride)) {
                                *d = *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back into `dx`.
fn col2im(geo: &Geometry, cols: &[f64], s0: usize, g: usize, dx: &mut [f64]) {
    let (plane, width) = (geo.plane(), g * geo.plane());
    for c in 0..geo.c {
        for i in 0..geo.kh {
            for j in 0..geo.kw {
                let row = ((c * geo.kh + i) * geo.kw + j) * width;
                let (lo, hi) = valid_range(geo, j);
                if lo == hi {
                    continue;
                }
                let first = lo * geo.stride + j - geo.pad;
                for s in 0..g {
                    let img = &mut dx[((s0 + s) * geo.c + c) * geo.h * geo.w..][..geo.h * geo.w];
                    let src = &cols[row + s * plane..row + (s + 1) * plane];
                    for oy in 0..geo.oh {
                        let iy = (oy * geo.stride + i) as isize - geo.pad as isize;
                        if iy < 0 || iy >= geo.h as isize {
                            continue;
                        }
                        let dst = &mut img[iy as usize * geo.w + first..(iy as usize + 1) * geo.w];
                        let line = &src[oy * geo.ow + lo..oy * geo.ow + hi];
                        for (d, v) in dst.iter_mut().step_by(geo.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

struct ConvBack {
    x: Var,
    weight: Var,
    bias: Var,
    geo: Geometry,
}

impl Backward for ConvBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.weight, self.bias]
    }

    fn backward(&self, tape: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        let geo = self.geo;
        let (plane, ckk) = (geo.plane(), geo.ckk());
        if let Some(gb) = sink.slot(self.bias) {
            for (idx, chunk) in g.chunks_exact(plane).enumerate() {
                gb[idx % geo.o] += chunk.iter().sum::<f64>();
            }
        }
        let need_w = sink.slot(self.weight).is_some();
        let need_x = sink.slot(self.x).is_some();
        if !need_w && !need_x {
            return;
        }
        let x = tape.value(self.x).data();
        let w = tape.value(self.weight).data();
        let group = geo.group();
        let mut cols = if need_w { vec![0.0; ckk * group * plane] } else { Vec::new() };
        let mut gcols = if need_x { vec![0.0; ckk * group * plane] } else { Vec::new() };
        let mut gmat = vec![0.0; geo.o * group * plane];
        let mut s0 = 0;
        while s0 < geo.n {
            let gsz = group.min(geo.n - s0);
            let width = gsz * plane;
            // [gsz, o, plane] -> [o, gsz*plane]
            for s in 0..gsz {
                for o in 0..geo.o {
                    let src = &g[((s0 + s) * geo.o + o) * plane..][..plane];
                    gmat[o * width + s * plane..][..plane].copy_from_slice(src);
                }
            }
            let gm = Mat::new(&gmat[..geo.o * width], geo.o, width);
            if need_w {
                if gsz != group {
                    cols[..ckk * width].fill(0.0);
                }
                im2col(&geo, x, s0, gsz, &mut cols[..ckk * width]);
                let gw = sink.slot(self.weight).expect("checked above");
                gemm(gm, Mat::new(&cols[..ckk * width], ckk, width).t(), 1.0, gw);
            }
            if need_x {
                gemm(Mat::new(w, geo.o, ckk).t(), gm, 0.0, &mut gcols[..ckk * width]);
                let gx = sink.slot(self.x).expect("checked above");
                col2im(&geo, &gcols[..ckk * width], s0, gsz, gx);
            }
            s0 += gsz;
        }
    }
}

/// 2-D cross-correlation over `[N,C,H,W]` with a `[O,C,kh,kw]` kernel.
pub fn conv2d(tape: &mut Tape, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
    let (tx, tw, tb) = (tape.value(x), tape.value(weight), tape.value(bias));
    expect_rank("conv2d", tx.shape(), 4)?;
    expect_rank("conv2d", tw.shape(), 4)?;
    let [n, c, h, w] = [tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]];
    let [o, wc, kh, kw] = [tw.shape()[0], tw.shape()[1], tw.shape()[2], tw.shape()[3]];
    if wc != c {
        return Err(TensorError::Shape {
            op: "conv2d",
            detail: format!("input has {c} channels, weight expects {wc}"),
        });
    }
    if tb.shape() != [o] {
        return Err(TensorError::Shape {
            op: "conv2d",
            detail: format!("bias {:?} for {o} output channels", tb.shape()),
        });
    }
    if stride == 0 {
        return Err(TensorError::Invalid { op: "conv2d", detail: "stride must be >= 1".into() });
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(TensorError::Shape {
            op: "conv2d",
            detail: format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * padding, w + 2 * padding),
        });
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let geo = Geometry { n, c, h, w, o, kh, kw, stride, pad: padding, oh, ow };
    let (plane, ckk) = (geo.plane(), geo.ckk());
    let group = geo.group();
    let mut out = vec![0.0; n * o * plane];
    let mut cols = vec![0.0; ckk * group * plane];
    let mut omat = vec![0.0; o * group * plane];
    let mut s0 = 0;
    while s0 < n {
        let gsz = group.min(n - s0);
        let width = gsz * plane;
        if gsz != group {
            cols[..ckk * width].fill(0.0);
        }
        im2col(&geo, tx.data(), s0, gsz, &mut cols[..ckk * width]);
        gemm(
            Mat::new(tw.data(), o, ckk),
            Mat::new(&cols[..ckk * width], ckk, width),
            0.0,
            &mut omat[..o * width],
        );
        for s in 0..gsz {
            for oc in 0..o {
                let dst = &mut out[((s0 + s) * o + oc) * plane..][..plane];
                let src = &omat[oc * width + s * plane..][..plane];
                let b = tb.data()[oc];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = v + b;
                }
            }
        }
        s0 += gsz;
    }
    ensure_finite("conv2d", &out)?;
    let out = Tensor { shape: vec![n, o, oh, ow], data: out };
    Ok(tape.push(out, ConvBack { x, weight, bias, geo }))
}
