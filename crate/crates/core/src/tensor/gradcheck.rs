use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mul, sum, Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates probed per input; inputs at or below this size are probed fully.
    pub max_coords: usize,
    /// A coordinate whose one-sided slopes disagree by more than this
    /// (relative to `max(1, |slope|)`) sits on a kink and is excluded.
    pub kink_tol: f64,
    /// Lower bound on the denominator of the relative error, so gradients
    /// near zero are compared in absolute terms.
    pub denom_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_coords: 24, kink_tol: 1e-2, denom_floor: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input index, flat coordinate)` pairs skipped as non-differentiable.
    pub excluded: Vec<(usize, usize)>,
}

/// Reduces a non-scalar output to a scalar with fixed random weights, so
/// that gradients which happen to cancel under a plain sum are still probed.
fn to_scalar(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    if tape.value(out).len() == 1 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = tape.shape(out).to_vec();
    let n = tape.value(out).len();
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w = tape.constant(w);
    let p = mul(tape, out, w)?;
    sum(tape, p)
}

fn evaluate<F>(f: &F, inputs: &[Tensor], seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let out = to_scalar(&mut tape, out, seed)?;
    Ok(tape.value(out).data()[0])
}

/// Compares tape gradients of `f` against central differences.
///
/// Returns the largest `|analytic - numeric| / max(|analytic|, |numeric|, denom_floor)`
/// over the probed coordinates. `f` must be deterministic.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let out = to_scalar(&mut tape, out, opts.seed)?;
    let f0 = tape.value(out).data()[0];
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let h = opts.step;
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
        let coords: Vec<usize> = if input.len() <= opts.max_coords {
            (0..input.len()).collect()
        } else {
            let mut c = sample(&mut rng, input.len(), opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let x = input.data()[i];
            probe[k].data_mut()[i] = x + h;
            let fp = evaluate(&f, &probe, opts.seed)?;
            probe[k].data_mut()[i] = x - h;
            let fm = evaluate(&f, &probe, opts.seed)?;
            probe[k].data_mut()[i] = x;

            let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
            if (fwd - bwd).abs() > opts.kink_tol * fwd.abs().max(bwd.abs()).max(1.0) {
                report.excluded.push((k, i));
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.denom_floor);
            if !rel.is_finite() {
                return Err(TensorError::NonFinite { op: "grad_check" });
            }
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{maxpool2d, relu, sigmoid};

    #[test]
    fn smooth_function_passes() {
        let x = Tensor::new(vec![5], vec![-1.0, -0.3, 0.2, 0.9, 2.5]).unwrap();
        let r = grad_check(|t, v| sigmoid(t, v[0]), &[x], Default::default()).unwrap();
        assert_eq!(r.checked, 5);
        assert!(r.max_rel_error < 1e-7, "{}", r.max_rel_error);
    }

    #[test]
    fn relu_kink_is_excluded() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 1.0]).unwrap();
        let r = grad_check(|t, v| relu(t, v[0]), &[x], Default::default()).unwrap();
        assert_eq!(r.excluded, vec![(0, 1)]);
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn maxpool_tie_is_reported_not_failed() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 3.0, 3.0, 0.5]).unwrap();
        let r = grad_check(|t, v| maxpool2d(t, v[0], 2, 2, 0), &[x], Default::default()).unwrap();
        assert_eq!(r.excluded, vec![(0, 1), (0, 2)]);
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error < 1e-9);
    }
}
