//! Metrics history, CSV output and the run manifest.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

/// One logged optimization step; epoch-end rows also carry the collapse
/// metric and held-out scores.
#[derive(Debug, Clone, Default)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub loss_paired: f64,
    pub loss_denoiser: f64,
    pub loss_reg: f64,
    pub loss_perceptual: f64,
    pub loss_total: f64,
    pub collapse_metric: Option<f64>,
    pub eval_psnr: Option<f64>,
    pub eval_ssim: Option<f64>,
}

/// Full per-step log of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub rows: Vec<MetricsRow>,
}

impl TrainHistory {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    /// Rows that closed an epoch (collapse metric present).
    pub fn epoch_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| r.collapse_metric.is_some())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epoch,step,loss_paired,loss_denoiser,loss_reg,loss_perceptual,loss_total,collapse_metric,eval_psnr,eval_ssim\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{},{}",
                r.epoch,
                r.step,
                r.loss_paired,
                r.loss_denoiser,
                r.loss_reg,
                r.loss_perceptual,
                r.loss_total,
                opt(r.collapse_metric),
                opt(r.eval_psnr),
                opt(r.eval_ssim),
            );
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Reproducibility record for one run: configuration key-values, seeds and
/// content hashes.
#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn put(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::from("# run manifest\n");
        let _ = writeln!(s, "code_version = {}", env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string())?;
        Ok(())
    }
}
