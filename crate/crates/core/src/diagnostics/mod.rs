//! Evidence checks: finite-difference gradients, permutation symmetry,
//! per-layer gradient profiles and the layer-norm collapse demo.

mod collapse;
mod gradcheck;
mod perm;
mod profile;

use serde::{Deserialize, Serialize};

pub use collapse::{ln_collapse_demo, Bucket, CollapseReport};
pub use gradcheck::{finite_diff_check, finite_diff_check_with, FdOptions, FdReport, FdWorst};
pub use perm::{
    encoder_equivariance_check, equivariance_check, equivariance_check_fn, equivariance_deviation, invariance_check,
    invariance_check_fn, invariance_deviation, random_perms, PermOptions,
};
pub use profile::{grad_profile, GradProfile, LayerGradNorm, ProfileEntry};

use crate::norm::{certify_transform_setting, DimSet};

/// Outcome of one check, serialized with stable field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<serde_json::Value>,
}

impl CheckReport {
    /// `pass` is `max_deviation < tolerance`; NaN deviations fail.
    pub fn new(check: impl Into<String>, max_deviation: f64, tolerance: f64) -> Self {
        CheckReport {
            check: check.into(),
            max_deviation,
            tolerance,
            pass: max_deviation < tolerance,
            counterexample: None,
        }
    }

    pub fn with_counterexample(mut self, c: serde_json::Value) -> Self {
        if !self.pass {
            self.counterexample = Some(c);
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prop1Row {
    pub setting: DimSet,
    pub equivariant: bool,
    pub batch_agnostic: bool,
}

impl Prop1Row {
    pub fn satisfies(&self) -> bool {
        self.equivariant && self.batch_agnostic
    }
}

/// Certify every transformation setting `T` for equivariance and batch
/// agnosticism.
pub fn prop1_sweep() -> Vec<Prop1Row> {
    DimSet::all()
        .into_iter()
        .map(|t| {
            let c = certify_transform_setting(t);
            Prop1Row { setting: t, equivariant: c.equivariant, batch_agnostic: c.batch_agnostic }
        })
        .collect()
}

/// Compare a sweep with the expected answer: only `{}` and `{D}` satisfy both
/// properties. The deviation counts mismatching settings.
pub fn prop1_report(rows: &[Prop1Row]) -> CheckReport {
    let expected = |t: DimSet| t == DimSet::EMPTY || t == DimSet::D;
    let wrong: Vec<String> = rows
        .iter()
        .filter(|r| r.satisfies() != expected(r.setting))
        .map(|r| r.setting.to_string())
        .collect();
    CheckReport::new("prop1", wrong.len() as f64, 0.5).with_counterexample(serde_json::json!({ "mismatched": wrong }))
}
