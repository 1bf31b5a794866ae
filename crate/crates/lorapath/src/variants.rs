//! Executable forward and backward passes over a low-rank adapted linear
//! layer, an analytic reference backward, and finite-difference checking.
//!
//! Backward functions take only the layer input, the layer, and the output
//! cotangent — no intermediate from the forward pass is ever cached, so any
//! backward variant can run after any forward variant (or none at all).

use crate::costmodel::{BackwardVariant, ForwardVariant, ShapeConfig};
use crate::dense::{
    self, fill_random, matmul, matmul_acc, matmul_acc_tallied, matmul_tallied, FlopTally, Matrix,
    Scalar,
};
use crate::error::{Error, Result};

/// Frozen weight plus the trainable low-rank factors.
///
/// `weight` is `i x o`, `down` (the input-to-rank factor) is `i x r`, and
/// `up` (the rank-to-output factor) is `r x o`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer<T = f64> {
    pub weight: Matrix<T>,
    pub down: Matrix<T>,
    pub up: Matrix<T>,
}

impl<T: Scalar> LoraLayer<T> {
    pub fn new(weight: Matrix<T>, down: Matrix<T>, up: Matrix<T>) -> Result<Self> {
        if down.rows() != weight.rows() || down.cols() != up.rows() {
            return Err(Error::ShapeMismatch {
                op: "LoraLayer down factor",
                left_rows: down.rows(),
                left_cols: down.cols(),
                right_rows: weight.rows(),
                right_cols: up.rows(),
            });
        }
        if up.cols() != weight.cols() {
            return Err(Error::ShapeMismatch {
                op: "LoraLayer up factor",
                left_rows: up.rows(),
                left_cols: up.cols(),
                right_rows: down.cols(),
                right_cols: weight.cols(),
            });
        }
        Ok(Self { weight, down, up })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn rank(&self) -> usize {
        self.down.cols()
    }
}

/// Gradients of the loss with respect to the trainable factors and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f64> {
    /// Gradient for the down factor, `i x r`.
    pub down: Matrix<T>,
    /// Gradient for the up factor, `r x o`.
    pub up: Matrix<T>,
    /// Gradient for the layer input, `(b*s) x i`.
    pub input: Matrix<T>,
}

pub(crate) struct ExecDims {
    pub tokens: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub rank: usize,
}

pub(crate) fn exec_dims(c: &ShapeConfig) -> Result<ExecDims> {
    let cast = |v: u64| -> Result<usize> {
        usize::try_from(v).map_err(|_| {
            Error::InvalidConfig(format!("shape {c} is too large to execute in-process"))
        })
    };
    Ok(ExecDims {
        tokens: cast(c.tokens()?)?,
        input_dim: cast(c.input_dim)?,
        output_dim: cast(c.output_dim)?,
        rank: cast(c.rank)?,
    })
}

/// Seeded operands for a shape: layer input, layer, and output cotangent.
///
/// Sub-seeds are fixed offsets of `seed` (input, weight, down, up, cotangent
/// use `seed..seed+4`), so one seed pins the whole operand set.
pub fn random_operands<T: Scalar>(
    c: &ShapeConfig,
    seed: u64,
    scale: f64,
) -> Result<(Matrix<T>, LoraLayer<T>, Matrix<T>)> {
    let d = exec_dims(c)?;
    let input = fill_random(d.tokens, d.input_dim, seed, scale)?;
    let layer = LoraLayer::new(
        fill_random(d.input_dim, d.output_dim, seed.wrapping_add(1), scale)?,
        fill_random(d.input_dim, d.rank, seed.wrapping_add(2), scale)?,
        fill_random(d.rank, d.output_dim, seed.wrapping_add(3), scale)?,
    )?;
    let grad_output = fill_random(d.tokens, d.output_dim, seed.wrapping_add(4), scale)?;
    Ok((input, layer, grad_output))
}

/// Seeded operands with every entry in `[0.5, 1.5)`.
///
/// Equivalence and finite-difference checks compare results elementwise with
/// a relative metric; entries bounded away from zero keep every output
/// magnitude comparable to its accumulated terms, so rounding noise on a
/// near-cancelled element can never masquerade as a variant mismatch.
pub fn positive_operands<T: Scalar>(
    c: &ShapeConfig,
    seed: u64,
) -> Result<(Matrix<T>, LoraLayer<T>, Matrix<T>)> {
    let (mut input, mut layer, mut grad_output) = random_operands::<T>(c, seed, 0.5)?;
    let one = T::from_f64(1.0);
    for m in [
        &mut input,
        &mut layer.weight,
        &mut layer.down,
        &mut layer.up,
        &mut grad_output,
    ] {
        for v in m.data_mut() {
            *v += one;
        }
    }
    Ok((input, layer, grad_output))
}

fn check_input<T: Scalar>(input: &Matrix<T>, layer: &LoraLayer<T>) -> Result<()> {
    if input.cols() != layer.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "forward input",
            left_rows: input.rows(),
            left_cols: input.cols(),
            right_rows: layer.input_dim(),
            right_cols: layer.output_dim(),
        });
    }
    Ok(())
}

fn check_cotangent<T: Scalar>(
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
    grad_output: &Matrix<T>,
) -> Result<()> {
    check_input(input, layer)?;
    if grad_output.shape() != (input.rows(), layer.output_dim()) {
        return Err(Error::ShapeMismatch {
            op: "backward cotangent",
            left_rows: grad_output.rows(),
            left_cols: grad_output.cols(),
            right_rows: input.rows(),
            right_cols: layer.output_dim(),
        });
    }
    Ok(())
}

/// Runs the chosen forward bracketing. Intermediates are dropped on return;
/// nothing is retained for a later backward.
pub fn forward<T: Scalar>(
    v: ForwardVariant,
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
) -> Result<Matrix<T>> {
    let mut tally = FlopTally::new();
    forward_tallied(v, input, layer, &mut tally)
}

/// [`forward`] plus the executed multiply-add FLOPs.
pub fn forward_counted<T: Scalar>(
    v: ForwardVariant,
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
) -> Result<(Matrix<T>, u64)> {
    let mut tally = FlopTally::new();
    let out = forward_tallied(v, input, layer, &mut tally)?;
    Ok((out, tally.total()))
}

fn forward_tallied<T: Scalar>(
    v: ForwardVariant,
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
    tally: &mut FlopTally,
) -> Result<Matrix<T>> {
    check_input(input, layer)?;
    match v {
        ForwardVariant::F1 => {
            // Y = X W + (X A) B
            let mut out = matmul_tallied(input, &layer.weight, false, false, tally)?;
            let hidden = matmul_tallied(input, &layer.down, false, false, tally)?;
            matmul_acc_tallied(&mut out, &hidden, &layer.up, false, false, tally)?;
            Ok(out)
        }
        ForwardVariant::F2 => {
            // Y = X (W + A B)
            let mut merged = matmul_tallied(&layer.down, &layer.up, false, false, tally)?;
            merged.add_assign_elementwise(&layer.weight)?;
            matmul_tallied(input, &merged, false, false, tally)
        }
    }
}

/// Runs the chosen backward bracketing from the original operands only.
pub fn backward<T: Scalar>(
    v: BackwardVariant,
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
    grad_output: &Matrix<T>,
) -> Result<Gradients<T>> {
    let mut tally = FlopTally::new();
    backward_tallied(v, input, layer, grad_output, &mut tally)
}

/// [`backward`] plus the executed multiply-add FLOPs.
pub fn backward_counted<T: Scalar>(
    v: BackwardVariant,
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
    grad_output: &Matrix<T>,
) -> Result<(Gradients<T>, u64)> {
    let mut tally = FlopTally::new();
    let grads = backward_tallied(v, input, layer, grad_output, &mut tally)?;
    Ok((grads, tally.total()))
}

fn backward_tallied<T: Scalar>(
    v: BackwardVariant,
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
    grad_output: &Matrix<T>,
    tally: &mut FlopTally,
) -> Result<Gradients<T>> {
    check_cotangent(input, layer, grad_output)?;
    let (weight, down, up) = (&layer.weight, &layer.down, &layer.up);
    match v {
        BackwardVariant::B1 => {
            let z1 = matmul_tallied(grad_output, up, false, true, tally)?; // dY B^T
            let z2 = matmul_tallied(input, down, false, false, tally)?; // X A
            let grad_down = matmul_tallied(input, &z1, true, false, tally)?;
            let grad_up = matmul_tallied(&z2, grad_output, true, false, tally)?;
            let mut grad_input = matmul_tallied(grad_output, weight, false, true, tally)?;
            matmul_acc_tallied(&mut grad_input, &z1, down, false, true, tally)?;
            Ok(Gradients {
                down: grad_down,
                up: grad_up,
                input: grad_input,
            })
        }
        BackwardVariant::B2 => {
            let z1 = matmul_tallied(grad_output, up, false, true, tally)?; // dY B^T
            let z2 = matmul_tallied(input, grad_output, true, false, tally)?; // X^T dY
            let grad_down = matmul_tallied(input, &z1, true, false, tally)?;
            let grad_up = matmul_tallied(down, &z2, true, false, tally)?;
            let mut grad_input = matmul_tallied(grad_output, weight, false, true, tally)?;
            matmul_acc_tallied(&mut grad_input, &z1, down, false, true, tally)?;
            Ok(Gradients {
                down: grad_down,
                up: grad_up,
                input: grad_input,
            })
        }
        BackwardVariant::B3 => {
            let z1 = matmul_tallied(grad_output, up, false, true, tally)?; // dY B^T
            let z2 = matmul_tallied(input, grad_output, true, false, tally)?; // X^T dY
            let grad_down = matmul_tallied(&z2, up, false, true, tally)?;
            let grad_up = matmul_tallied(down, &z2, true, false, tally)?;
            let mut grad_input = matmul_tallied(grad_output, weight, false, true, tally)?;
            matmul_acc_tallied(&mut grad_input, &z1, down, false, true, tally)?;
            Ok(Gradients {
                down: grad_down,
                up: grad_up,
                input: grad_input,
            })
        }
        BackwardVariant::B4 => {
            let mut z1 = matmul_tallied(down, up, false, false, tally)?; // W + A B
            z1.add_assign_elementwise(weight)?;
            let z2 = matmul_tallied(input, grad_output, true, false, tally)?; // X^T dY
            let grad_down = matmul_tallied(&z2, up, false, true, tally)?;
            let grad_up = matmul_tallied(down, &z2, true, false, tally)?;
            let grad_input = matmul_tallied(grad_output, &z1, false, true, tally)?;
            Ok(Gradients {
                down: grad_down,
                up: grad_up,
                input: grad_input,
            })
        }
        BackwardVariant::B5 => {
            let z1 = matmul_tallied(grad_output, up, false, true, tally)?; // dY B^T
            let z2 = matmul_tallied(input, down, false, false, tally)?; // X A
            let mut z3 = matmul_tallied(down, up, false, false, tally)?; // W + A B
            z3.add_assign_elementwise(weight)?;
            let grad_down = matmul_tallied(input, &z1, true, false, tally)?;
            let grad_up = matmul_tallied(&z2, grad_output, true, false, tally)?;
            let grad_input = matmul_tallied(grad_output, &z3, false, true, tally)?;
            Ok(Gradients {
                down: grad_down,
                up: grad_up,
                input: grad_input,
            })
        }
        v => Err(Error::UnsupportedVariant(v.into())),
    }
}

/// Analytic backward in one fixed association order, used as the oracle the
/// executable variants are compared against:
///
/// ```text
/// d_down  = X^T (dY up^T)
/// d_up    = down^T (X^T dY)
/// d_input = dY weight^T + (dY up^T) down^T
/// ```
pub fn reference_backward<T: Scalar>(
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
    grad_output: &Matrix<T>,
) -> Result<Gradients<T>> {
    check_cotangent(input, layer, grad_output)?;
    let dy_upt = matmul(grad_output, &layer.up, false, true)?;
    let grad_down = matmul(input, &dy_upt, true, false)?;
    let xt_dy = matmul(input, grad_output, true, false)?;
    let grad_up = matmul(&layer.down, &xt_dy, true, false)?;
    let mut grad_input = matmul(grad_output, &layer.weight, false, true)?;
    matmul_acc(&mut grad_input, &dy_upt, &layer.down, false, true)?;
    Ok(Gradients {
        down: grad_down,
        up: grad_up,
        input: grad_input,
    })
}

/// Default-execution forward: same math as the first bracketing, but returns
/// the `input*down` intermediate so the backward can reuse it.
pub fn baseline_forward<T: Scalar>(
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    check_input(input, layer)?;
    let mut out = matmul(input, &layer.weight, false, false)?;
    let hidden = matmul(input, &layer.down, false, false)?;
    matmul_acc(&mut out, &hidden, &layer.up, false, false)?;
    Ok((out, hidden))
}

/// Default-execution backward: the first backward bracketing with the cached
/// `input*down` intermediate instead of recomputing it.
pub fn baseline_backward<T: Scalar>(
    input: &Matrix<T>,
    layer: &LoraLayer<T>,
    grad_output: &Matrix<T>,
    cached_hidden: &Matrix<T>,
) -> Result<Gradients<T>> {
    check_cotangent(input, layer, grad_output)?;
    if cached_hidden.shape() != (input.rows(), layer.rank()) {
        return Err(Error::ShapeMismatch {
            op: "baseline cached intermediate",
            left_rows: cached_hidden.rows(),
            left_cols: cached_hidden.cols(),
            right_rows: input.rows(),
            right_cols: layer.rank(),
        });
    }
    let z1 = matmul(grad_output, &layer.up, false, true)?;
    let grad_down = matmul(input, &z1, true, false)?;
    let grad_up = matmul(cached_hidden, grad_output, true, false)?;
    let mut grad_input = matmul(grad_output, &layer.weight, false, true)?;
    matmul_acc(&mut grad_input, &z1, &layer.down, false, true)?;
    Ok(Gradients {
        down: grad_down,
        up: grad_up,
        input: grad_input,
    })
}

/// Worst relative error per tensor from the finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FdReport {
    pub down: f64,
    pub up: f64,
    pub input: f64,
}

impl FdReport {
    pub fn worst(&self) -> f64 {
        self.down.max(self.up).max(self.input)
    }
}

fn probe_loss(input: &Matrix<f64>, layer: &LoraLayer<f64>, probe: &Matrix<f64>) -> Result<f64> {
    let out = forward(ForwardVariant::F1, input, layer)?;
    if out.shape() != probe.shape() {
        return Err(Error::ShapeMismatch {
            op: "finite-difference probe",
            left_rows: probe.rows(),
            left_cols: probe.cols(),
            right_rows: out.rows(),
            right_cols: out.cols(),
        });
    }
    let loss = out
        .data()
        .iter()
        .zip(probe.data())
        .map(|(y, g)| y * g)
        .sum::<f64>();
    if !loss.is_finite() {
        return Err(Error::NonFinite("finite-difference loss"));
    }
    Ok(loss)
}

/// Central-difference check of gradients against the scalar loss
/// `L = sum(Y .* probe)` with `Y` from the first forward bracketing.
///
/// Compares the given gradients elementwise with `(L(+h) - L(-h)) / 2h` for
/// every element of the down factor, the up factor, and the input, and
/// returns the worst relative error per tensor.
pub fn fd_errors_against(
    input: &Matrix<f64>,
    layer: &LoraLayer<f64>,
    probe: &Matrix<f64>,
    step: f64,
    grads: &Gradients<f64>,
) -> Result<FdReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive and finite, got {step}"
        )));
    }

    let central = |lp: f64, lm: f64| (lp - lm) / (2.0 * step);

    let mut work_layer = layer.clone();
    let mut worst_down = 0.0f64;
    for idx in 0..layer.down.data().len() {
        let orig = work_layer.down.data()[idx];
        work_layer.down.data_mut()[idx] = orig + step;
        let lp = probe_loss(input, &work_layer, probe)?;
        work_layer.down.data_mut()[idx] = orig - step;
        let lm = probe_loss(input, &work_layer, probe)?;
        work_layer.down.data_mut()[idx] = orig;
        let err = dense::rel_diff(central(lp, lm), grads.down.data()[idx]);
        worst_down = worst_down.max(err);
    }

    let mut worst_up = 0.0f64;
    for idx in 0..layer.up.data().len() {
        let orig = work_layer.up.data()[idx];
        work_layer.up.data_mut()[idx] = orig + step;
        let lp = probe_loss(input, &work_layer, probe)?;
        work_layer.up.data_mut()[idx] = orig - step;
        let lm = probe_loss(input, &work_layer, probe)?;
        work_layer.up.data_mut()[idx] = orig;
        let err = dense::rel_diff(central(lp, lm), grads.up.data()[idx]);
        worst_up = worst_up.max(err);
    }

    let mut work_input = input.clone();
    let mut worst_input = 0.0f64;
    for idx in 0..input.data().len() {
        let orig = work_input.data()[idx];
        work_input.data_mut()[idx] = orig + step;
        let lp = probe_loss(&work_input, layer, probe)?;
        work_input.data_mut()[idx] = orig - step;
        let lm = probe_loss(&work_input, layer, probe)?;
        work_input.data_mut()[idx] = orig;
        let err = dense::rel_diff(central(lp, lm), grads.input.data()[idx]);
        worst_input = worst_input.max(err);
    }

    Ok(FdReport {
        down: worst_down,
        up: worst_up,
        input: worst_input,
    })
}

/// [`fd_errors_against`] with the analytic reference gradients.
pub fn finite_difference_check(
    input: &Matrix<f64>,
    layer: &LoraLayer<f64>,
    probe: &Matrix<f64>,
    step: f64,
) -> Result<FdReport> {
    let grads = reference_backward(input, layer, probe)?;
    fd_errors_against(input, layer, probe, step, &grads)
}
