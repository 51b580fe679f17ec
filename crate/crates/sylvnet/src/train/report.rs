//! Machine-readable run reports and epoch logs.

use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// RMSE on the validation mask (train mask when no validation entries
    /// exist).
    pub val_rmse: f64,
}

/// Summary of one training run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub model: String,
    pub seed: u64,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
    pub best_val_rmse: f64,
    pub test_rmse: Option<f64>,
    /// Total scalar entries across all parameters.
    pub param_count: usize,
    /// Peak number of matrix elements held by any single training tape.
    pub peak_activation_elems: usize,
    pub wall_seconds: f64,
}

impl RunReport {
    /// `key = value` lines, one field per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("model = {}\n", self.model));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("epochs_run = {}\n", self.epochs_run));
        out.push_str(&format!("best_val_rmse = {:.6}\n", self.best_val_rmse));
        match self.test_rmse {
            Some(v) => out.push_str(&format!("test_rmse = {v:.6}\n")),
            None => out.push_str("test_rmse = none\n"),
        }
        out.push_str(&format!("param_count = {}\n", self.param_count));
        out.push_str(&format!("peak_activation_elems = {}\n", self.peak_activation_elems));
        out.push_str(&format!("wall_seconds = {:.3}\n", self.wall_seconds));
        out
    }

    pub fn write_kv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_kv())
    }

    /// Line-delimited JSON records, one per epoch.
    pub fn write_epoch_log(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for record in &self.history {
            let line = serde_json::to_string(record).expect("epoch record serializes");
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}
