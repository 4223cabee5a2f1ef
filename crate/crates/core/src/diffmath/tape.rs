//! Operation tape for reverse-mode differentiation.
//!
//! Every differentiable op pushes an explicit record with snapshots of the
//! tensors its gradient rule needs (snapshots are `Arc` clones, so this is
//! cheap). [`backward`] walks the records in reverse and accumulates
//! gradients into a map keyed by tensor id. The op set is closed: a new
//! operation means a new record variant and a new gradient rule, nothing
//! is implicit.
//!
//! A `Tape` is confined to a single forward/backward episode on one
//! thread; tensors themselves are freely shareable values.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::diffmath::ops;
use crate::diffmath::tensor::{Tensor, TensorId};
use crate::error::{Error, Result};

/// Gradients keyed by tensor id. Populated for every recorded tensor that
/// requires grad and is reachable from the loss.
pub type GradMap = HashMap<TensorId, Tensor>;

pub struct Tape {
    pub(crate) records: RefCell<Vec<Record>>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            records: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that records nothing; use for inference.
    pub fn no_grad() -> Self {
        Tape {
            records: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether an op over these inputs must be recorded (and its output
    /// marked as requiring grad).
    pub(crate) fn tracks(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    pub(crate) fn push(&self, record: Record) {
        self.records.borrow_mut().push(record);
    }
}

/// One recorded operation: inputs snapshot + whatever the gradient rule
/// reuses from the forward pass.
pub(crate) enum Record {
    Add { a: Tensor, b: Tensor, out: TensorId },
    Sub { a: Tensor, b: Tensor, out: TensorId },
    Mul { a: Tensor, b: Tensor, out: TensorId },
    Div { a: Tensor, b: Tensor, out: TensorId },
    AddScalar { a: Tensor, out: TensorId },
    MulScalar { a: Tensor, k: f64, out: TensorId },
    Abs { a: Tensor, out: TensorId },
    Exp { a: Tensor, y: Tensor, out: TensorId },
    Ln { a: Tensor, out: TensorId },
    Sqrt { a: Tensor, y: Tensor, out: TensorId },
    PowScalar { a: Tensor, p: f64, out: TensorId },
    Relu { a: Tensor, out: TensorId },
    Clamp { a: Tensor, lo: f64, hi: f64, out: TensorId },
    SumAll { a: Tensor, out: TensorId },
    MeanAll { a: Tensor, out: TensorId },
    SumAxis { a: Tensor, axis: usize, keepdim: bool, out: TensorId },
    MeanAxis { a: Tensor, axis: usize, keepdim: bool, out: TensorId },
    Softmax { a: Tensor, y: Tensor, axis: usize, out: TensorId },
    Matmul { a: Tensor, b: Tensor, out: TensorId },
    Bmm { a: Tensor, b: Tensor, out: TensorId },
    Conv2d {
        input: Tensor,
        kernel: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        padding: usize,
        out: TensorId,
    },
    AvgPool3x3 { a: Tensor, out: TensorId },
    Warp1d { img: Tensor, disp: Tensor, sign: f64, out: TensorId },
    Upsample2x { a: Tensor, out: TensorId },
    Reshape { a: Tensor, out: TensorId },
    Permute { a: Tensor, axes: Vec<usize>, out: TensorId },
    Concat { inputs: Vec<Tensor>, axis: usize, out: TensorId },
}

impl Record {
    fn out_id(&self) -> TensorId {
        match self {
            Record::Add { out, .. }
            | Record::Sub { out, .. }
            | Record::Mul { out, .. }
            | Record::Div { out, .. }
            | Record::AddScalar { out, .. }
            | Record::MulScalar { out, .. }
            | Record::Abs { out, .. }
            | Record::Exp { out, .. }
            | Record::Ln { out, .. }
            | Record::Sqrt { out, .. }
            | Record::PowScalar { out, .. }
            | Record::Relu { out, .. }
            | Record::Clamp { out, .. }
            | Record::SumAll { out, .. }
            | Record::MeanAll { out, .. }
            | Record::SumAxis { out, .. }
            | Record::MeanAxis { out, .. }
            | Record::Softmax { out, .. }
            | Record::Matmul { out, .. }
            | Record::Bmm { out, .. }
            | Record::Conv2d { out, .. }
            | Record::AvgPool3x3 { out, .. }
            | Record::Warp1d { out, .. }
            | Record::Upsample2x { out, .. }
            | Record::Reshape { out, .. }
            | Record::Permute { out, .. }
            | Record::Concat { out, .. } => *out,
        }
    }
}

/// Accumulate a gradient contribution for `target` (no-op when the target
/// does not require grad).
pub(crate) fn accumulate(grads: &mut GradMap, target: &Tensor, contrib: &[f64]) {
    if !target.requires_grad() {
        return;
    }
    debug_assert_eq!(target.numel(), contrib.len());
    let entry = grads
        .entry(target.id())
        .or_insert_with(|| Tensor::zeros(target.shape()));
    for (dst, src) in entry.data_mut().iter_mut().zip(contrib) {
        *dst += src;
    }
}

/// Reverse pass: gradient of a scalar `loss` with respect to every
/// grad-requiring tensor recorded on `tape`. `d(loss)/d(loss) = 1`.
///
/// Re-running backward on the same tape produces an identical map; the
/// tape is not consumed.
pub fn backward(loss: &Tensor, tape: &Tape) -> Result<GradMap> {
    if loss.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let records = tape.records.borrow();
    let mut grads: GradMap = HashMap::new();
    grads.insert(loss.id(), Tensor::ones(loss.shape()));

    for rec in records.iter().rev() {
        let Some(gout) = grads.get(&rec.out_id()).cloned() else {
            continue;
        };
        match rec {
            Record::Add { a, b, .. } => ops::elementwise::backprop_add(a, b, &gout, &mut grads),
            Record::Sub { a, b, .. } => ops::elementwise::backprop_sub(a, b, &gout, &mut grads),
            Record::Mul { a, b, .. } => ops::elementwise::backprop_mul(a, b, &gout, &mut grads),
            Record::Div { a, b, .. } => ops::elementwise::backprop_div(a, b, &gout, &mut grads),
            Record::AddScalar { a, .. } => accumulate(&mut grads, a, gout.data()),
            Record::MulScalar { a, k, .. } => {
                let contrib: Vec<f64> = gout.data().iter().map(|g| g * k).collect();
                accumulate(&mut grads, a, &contrib);
            }
            Record::Abs { a, .. } => ops::elementwise::backprop_abs(a, &gout, &mut grads),
            Record::Exp { a, y, .. } => ops::elementwise::backprop_exp(a, y, &gout, &mut grads),
            Record::Ln { a, .. } => ops::elementwise::backprop_ln(a, &gout, &mut grads),
            Record::Sqrt { a, y, .. } => ops::elementwise::backprop_sqrt(a, y, &gout, &mut grads),
            Record::PowScalar { a, p, .. } => {
                ops::elementwise::backprop_pow_scalar(a, *p, &gout, &mut grads)
            }
            Record::Relu { a, .. } => ops::elementwise::backprop_relu(a, &gout, &mut grads),
            Record::Clamp { a, lo, hi, .. } => {
                ops::elementwise::backprop_clamp(a, *lo, *hi, &gout, &mut grads)
            }
            Record::SumAll { a, .. } => ops::reduce::backprop_sum_all(a, &gout, &mut grads),
            Record::MeanAll { a, .. } => ops::reduce::backprop_mean_all(a, &gout, &mut grads),
            Record::SumAxis { a, axis, keepdim, .. } => {
                ops::reduce::backprop_sum_axis(a, *axis, *keepdim, false, &gout, &mut grads)
            }
            Record::MeanAxis { a, axis, keepdim, .. } => {
                ops::reduce::backprop_sum_axis(a, *axis, *keepdim, true, &gout, &mut grads)
            }
            Record::Softmax { a, y, axis, .. } => {
                ops::reduce::backprop_softmax(a, y, *axis, &gout, &mut grads)
            }
            Record::Matmul { a, b, .. } => ops::linalg::backprop_matmul(a, b, &gout, &mut grads),
            Record::Bmm { a, b, .. } => ops::linalg::backprop_bmm(a, b, &gout, &mut grads),
            Record::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                ..
            } => ops::conv::backprop_conv2d(
                input,
                kernel,
                bias.as_ref(),
                *stride,
                *padding,
                &gout,
                &mut grads,
            ),
            Record::AvgPool3x3 { a, .. } => ops::conv::backprop_avg_pool3x3(a, &gout, &mut grads),
            Record::Warp1d { img, disp, sign, .. } => {
                ops::warp::backprop_warp1d(img, disp, *sign, &gout, &mut grads)
            }
            Record::Upsample2x { a, .. } => ops::warp::backprop_upsample2x(a, &gout, &mut grads),
            Record::Reshape { a, .. } => accumulate(&mut grads, a, gout.data()),
            Record::Permute { a, axes, .. } => {
                ops::linalg::backprop_permute(a, axes, &gout, &mut grads)
            }
            Record::Concat { inputs, axis, .. } => {
                ops::linalg::backprop_concat(inputs, *axis, &gout, &mut grads)
            }
        }
    }
    Ok(grads)
}
