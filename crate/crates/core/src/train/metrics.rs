use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::Result;

pub const METRICS_HEADER: &str = "epoch,train_loss,test_loss,wall_seconds,grad_norm_first,grad_norm_last";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub wall_seconds: f64,
    pub grad_norm_first: f64,
    pub grad_norm_last: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsHistory {
    pub rows: Vec<EpochMetrics>,
    pub diverged: Option<DivergenceRecord>,
}

impl MetricsHistory {
    pub fn final_test_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.test_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            // `{}` on f64 is locale-free and round-trips exactly
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.test_loss, r.wall_seconds, r.grad_norm_first, r.grad_norm_last
            )
            .expect("write to string");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        binio::write_file(path, self.to_csv().as_bytes())
    }
}
