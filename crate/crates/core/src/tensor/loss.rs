use super::tape::{Backward, GradSink};
use super::{ensure_finite, expect_rank, same_shape, Result, Tape, Tensor, TensorError, Var};

/// Logistic function, branching on sign so neither side overflows.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct BceBack {
    scores: Var,
    targets: Vec<f64>,
}

impl Backward for BceBack {
    fn inputs(&self) -> Vec<Var> {
        vec![self.scores]
    }
    fn backward(&self, tape: &Tape, g: &[f64], sink: &mut GradSink<'_>) {
        let s = tape.value(self.scores).data();
        if let Some(gs) = sink.slot(self.scores) {
            for i in 0..gs.len() {
                gs[i] += g[0] * (sigmoid_scalar(s[i]) - self.targets[i]);
            }
        }
    }
}

/// Binary cross-entropy of `sigmoid(scores)` against one-hot rows, summed over
/// every example and choice. Evaluated as `max(s,0) - s*y + ln(1+exp(-|s|))`.
pub fn bce_with_logits(tape: &mut Tape, scores: Var, targets: &Tensor) -> Result<Var> {
    let s = tape.value(scores);
    expect_rank("bce_with_logits", s.shape(), 2)?;
    same_shape("bce_with_logits", s.shape(), targets.shape())?;
    let k = s.shape()[1];
    for (row, t) in targets.data().chunks_exact(k).enumerate() {
        let ones = t.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || t.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(TensorError::Invalid {
                op: "bce_with_logits",
                detail: format!("target row {row} is not one-hot: {t:?}"),
            });
        }
    }
    let total: f64 = s
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
        .sum();
    ensure_finite("bce_with_logits", &[total])?;
    let back = BceBack { scores, targets: targets.data().to_vec() };
    Ok(tape.push(Tensor::scalar(total), back))
}
