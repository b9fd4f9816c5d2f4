use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Reduction, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    None,
    /// Each element adds its own input.
    #[default]
    Erc,
    /// Each element adds the mean of the set's inputs.
    ArcMean,
    /// Each element adds the feature-wise max of the set's inputs.
    ArcMax,
}

/// `f_out + skip(x)` for the chosen residual kind; padded rows are zeroed.
pub fn apply_residual(
    tape: &mut Tape,
    x: Var,
    f_out: Var,
    kind: ResidualKind,
    mask: Option<&Arc<Mask>>,
) -> Result<Var> {
    if tape.shape(x) != tape.shape(f_out) {
        return Err(Error::dim(format!(
            "residual branch shape {:?} differs from input {:?}",
            tape.shape(f_out),
            tape.shape(x)
        )));
    }
    let out = match kind {
        ResidualKind::None => return Ok(f_out),
        ResidualKind::Erc => tape.add(x, f_out)?,
        ResidualKind::ArcMean | ResidualKind::ArcMax => {
            let shape = tape.shape(x).to_vec();
            if shape.len() != 3 {
                return Err(Error::dim(format!("aggregated residual needs N x M x D, got {shape:?}")));
            }
            let r = if kind == ResidualKind::ArcMean { Reduction::Mean } else { Reduction::Max };
            let pooled = tape.reduce(x, 1, r, mask)?;
            let pooled = tape.reshape(pooled, &[shape[0], 1, shape[2]])?;
            tape.add(f_out, pooled)?
        }
    };
    match mask {
        Some(m) => tape.mask_rows(out, m),
        None => Ok(out),
    }
}
