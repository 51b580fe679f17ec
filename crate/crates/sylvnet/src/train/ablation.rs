//! Trains the full model against its graph-only and attention-only variants
//! under identical seeds and reports RMSE plus peak activation footprints
//! side by side.

use super::report::RunReport;
use super::trainer::{train, DataBundle, TrainConfig};
use super::TrainError;
use crate::model::ModelSpec;

#[derive(Debug, Clone)]
pub struct AblationVariant {
    pub name: String,
    pub report: RunReport,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub variants: Vec<AblationVariant>,
}

impl AblationReport {
    pub fn get(&self, name: &str) -> Option<&RunReport> {
        self.variants.iter().find(|v| v.name == name).map(|v| &v.report)
    }

    /// One line per variant for CLI output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for v in &self.variants {
            let test = v
                .report
                .test_rmse
                .map(|r| format!("{r:.4}"))
                .unwrap_or_else(|| "none".into());
            out.push_str(&format!(
                "{:<18} val_rmse {:.4}  test_rmse {}  peak_activation_elems {:>12}  epochs {}\n",
                v.name,
                v.report.best_val_rmse,
                test,
                v.report.peak_activation_elems,
                v.report.epochs_run
            ));
        }
        out
    }
}

/// Runs full / graph-only / attention-only with the same data, seed and
/// training config.
pub fn run_ablation(
    spec: &ModelSpec,
    bundle: &DataBundle,
    cfg: &TrainConfig,
) -> Result<AblationReport, TrainError> {
    let variants = [
        ("full".to_string(), spec.clone()),
        ("graph-only".to_string(), spec.graph_only()),
        ("attention-only".to_string(), spec.attention_only()),
    ];
    let mut out = Vec::with_capacity(variants.len());
    for (name, variant_spec) in variants {
        let (_, report) = train(&variant_spec, bundle, cfg)?;
        out.push(AblationVariant { name, report });
    }
    Ok(AblationReport { variants: out })
}
