use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    CrossEntropy,
}

/// Mean over batch and output dims of `(pred - target)^2`.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: &Tensor) -> Result<Var> {
    if tape.shape(pred) != target.shape() {
        return Err(Error::dim(format!(
            "prediction shape {:?} differs from target {:?}",
            tape.shape(pred),
            target.shape()
        )));
    }
    let t = tape.constant(target.clone())?;
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean_all(sq)
}

/// Mean of `-log softmax(logits)[class]`.
pub fn cross_entropy_loss(tape: &mut Tape, logits: Var, classes: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(logits, classes)
}
