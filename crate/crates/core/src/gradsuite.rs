//! Finite-difference checks of every differentiable layer and of the
//! composed network loss, shared by the `gradcheck` command and the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{batch_triples, ChannelPlan, Dcnet, DcnetConfig, ModelError, Pass};
use crate::rpm::{generate_dataset, Config, GenOptions, Puzzle};
use crate::tensor::{
    adaptive_avg_pool2d, batchnorm2d, bce_with_logits, conv2d, dropout, grad_check, linear, maxpool2d, relu,
    sigmoid, BatchNormConfig, GradCheckOptions, GradCheckReport, Mode, RunningStats, Tape, Tensor, TensorError,
};

/// Largest relative error accepted by [`GradCheckLine::passed`].
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckLine {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl GradCheckLine {
    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_rel_error < TOLERANCE
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn one_hot(answers: &[usize]) -> Tensor {
    let mut d = vec![0.0; answers.len() * 8];
    for (i, &a) in answers.iter().enumerate() {
        d[i * 8 + a] = 1.0;
    }
    Tensor::new(vec![answers.len(), 8], d).expect("shape")
}

/// Checks each layer on small random inputs.
pub fn layer_checks(seed: u64) -> Result<Vec<GradCheckLine>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions { seed, max_coords: 48, ..Default::default() };
    let mut out = Vec::new();
    let mut push = |name, report| out.push(GradCheckLine { name, report });

    let inputs = [random(&[2, 2, 7, 7], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[3], &mut rng)];
    push("conv2d", grad_check(|t, v| conv2d(t, v[0], v[1], v[2], 2, 1), &inputs, opts)?);

    let running = RunningStats::from_parts(vec![0.3, -0.2], vec![0.5, 1.7]);
    let inputs = [random(&[3, 2, 3, 3], &mut rng), random(&[2], &mut rng), random(&[2], &mut rng)];
    let bn = |mode| {
        let running = running.clone();
        move |t: &mut Tape, v: &[crate::tensor::Var]| {
            batchnorm2d(t, v[0], v[1], v[2], &running, mode, BatchNormConfig::default()).map(|(y, _)| y)
        }
    };
    push("batchnorm2d (eval)", grad_check(bn(Mode::Eval), &inputs, opts)?);
    push("batchnorm2d (train)", grad_check(bn(Mode::Train), &inputs, opts)?);

    let inputs = [random(&[2, 2, 6, 6], &mut rng)];
    push("maxpool2d", grad_check(|t, v| maxpool2d(t, v[0], 3, 2, 1), &inputs, opts)?);
    let inputs = [random(&[2, 3, 5, 5], &mut rng)];
    push("adaptive_avg_pool2d", grad_check(|t, v| adaptive_avg_pool2d(t, v[0], 2, 2), &inputs, opts)?);

    let inputs = [random(&[4, 5], &mut rng), random(&[5, 3], &mut rng), random(&[3], &mut rng)];
    push("linear", grad_check(|t, v| linear(t, v[0], v[1], v[2]), &inputs, opts)?);

    let inputs = [random(&[4, 6], &mut rng)];
    push("relu", grad_check(|t, v| relu(t, v[0]), &inputs, opts)?);
    push("sigmoid", grad_check(|t, v| sigmoid(t, v[0]), &inputs, opts)?);
    push(
        "dropout (eval)",
        grad_check(|t, v| dropout(t, v[0], 0.5, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(1)), &inputs, opts)?,
    );
    push(
        "dropout (train, fixed mask)",
        grad_check(|t, v| dropout(t, v[0], 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1)), &inputs, opts)?,
    );

    let scores = Tensor::new(vec![3, 8], random(&[3, 8], &mut rng).data().iter().map(|v| 4.0 * v).collect())?;
    let targets = one_hot(&[0, 5, 7]);
    push("bce_with_logits", grad_check(|t, v| bce_with_logits(t, v[0], &targets), &[scores], opts)?);
    Ok(out)
}

/// Options for [`model_check`]. The network has tens of thousands of ReLU
/// and max-pool units, so a 1e-5 step routinely crosses a kink; 1e-7 avoids
/// them, and at that step the difference quotient carries ~1e-8 of rounding
/// noise, hence gradients below 1e-3 are compared with absolute error 1e-7.
pub fn model_check_options(seed: u64) -> GradCheckOptions {
    GradCheckOptions { step: 1e-7, kink_tol: 1e-3, denom_floor: 1e-3, max_coords: 16, seed }
}

/// Checks the gradient of the network loss on a two-puzzle 32x32 batch with
/// respect to every parameter tensor, in eval mode so the loss is a fixed
/// function of the parameters.
pub fn model_check(seed: u64) -> Result<GradCheckLine, ModelError> {
    model_check_with(seed, model_check_options(seed))
}

pub fn model_check_with(seed: u64, opts: GradCheckOptions) -> Result<GradCheckLine, ModelError> {
    let data: Vec<Puzzle> =
        generate_dataset(2, &GenOptions { config: Config::Center, image_size: 32, jitter: false }, seed)
            .map_err(|e| ModelError::Input(e.to_string()))?;
    let cfg = DcnetConfig { channels: ChannelPlan { stem: 4, out: 8 }, hidden: 16, seed, ..DcnetConfig::desk() };
    let mut net = Dcnet::new(cfg)?;
    let refs: Vec<&Puzzle> = data.iter().collect();
    let x = batch_triples(&refs)?;
    {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pass = Pass::new(Mode::Train, &mut rng);
        net.forward(&mut tape, v, &mut pass)?;
        let updates = std::mem::take(&mut pass.updates);
        net.commit(updates);
    }
    let targets = one_hot(&data.iter().map(|p| p.answer as usize).collect::<Vec<_>>());
    let params: Vec<Tensor> = net.params().iter().map(|p| p.tensor.clone()).collect();
    let f = |tape: &mut Tape, vars: &[crate::tensor::Var]| {
        let input = tape.constant(x.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pass = Pass::with_params(Mode::Eval, &mut rng, vars.to_vec());
        let s = net
            .forward(tape, input, &mut pass)
            .map_err(|e| match e {
                ModelError::Tensor(t) => t,
                e => TensorError::Invalid { op: "dcnet", detail: e.to_string() },
            })?;
        bce_with_logits(tape, s, &targets)
    };
    let report = grad_check(f, &params, opts)?;
    Ok(GradCheckLine { name: "dcnet loss (2 puzzles, 32x32)", report })
}
