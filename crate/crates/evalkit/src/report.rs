//! Evaluation report assembly and artifact emission: one JSON document plus
//! CDF tables (CSV) and rendered plot/table images.

use std::path::{Path, PathBuf};

use invlab_core::AttackScenario;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::plot::{render_cdf_png, render_table_png};
use crate::scores::VerificationResult;

/// Median and quartiles of a per-sample metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    pub quartiles: [f64; 3],
    pub count: usize,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::EvalFailed("no samples to summarize".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            median: quantile(&sorted, 0.5),
            quartiles: [
                quantile(&sorted, 0.25),
                quantile(&sorted, 0.5),
                quantile(&sorted, 0.75),
            ],
            count: values.len(),
        })
    }
}

/// Linear-interpolated quantile of a pre-sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn median(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EvalFailed("median of empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile(&sorted, 0.5))
}

/// Full quality assessment of one attack run against one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Free-form run label, used in artifact titles.
    pub label: String,
    pub scenario: Option<AttackScenario>,
    pub dssim: Vec<f64>,
    pub perceptual: Vec<f64>,
    pub dssim_summary: MetricSummary,
    pub perceptual_summary: MetricSummary,
    pub identification_accuracy: f64,
    pub identity_count: usize,
    /// 1 / identity_count.
    pub chance: f64,
    pub verification: Vec<VerificationResult>,
    /// Impostor pairs drawn per genuine pair during calibration.
    pub impostor_multiple: usize,
}

impl EvaluationReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: impl Into<String>,
        scenario: Option<AttackScenario>,
        dssim: Vec<f64>,
        perceptual: Vec<f64>,
        identification_accuracy: f64,
        identity_count: usize,
        verification: Vec<VerificationResult>,
        impostor_multiple: usize,
    ) -> Result<Self, EvalError> {
        if identity_count == 0 {
            return Err(EvalError::InvalidInput("identity count must be > 0".into()));
        }
        let report = Self {
            label: label.into(),
            scenario,
            dssim_summary: MetricSummary::from_values(&dssim)?,
            perceptual_summary: MetricSummary::from_values(&perceptual)?,
            dssim,
            perceptual,
            identification_accuracy,
            identity_count,
            chance: 1.0 / identity_count as f64,
            verification,
            impostor_multiple,
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.dssim.is_empty() || self.perceptual.is_empty() {
            return Err(EvalError::EvalFailed(
                "report has no per-sample metric values".into(),
            ));
        }
        if self.dssim.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(EvalError::EvalFailed("dssim value outside [0,1]".into()));
        }
        if self.perceptual.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(EvalError::EvalFailed(
                "perceptual distance negative or non-finite".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.identification_accuracy) {
            return Err(EvalError::EvalFailed("accuracy outside [0,1]".into()));
        }
        for v in &self.verification {
            if !(0.0..=1.0).contains(&v.tar) || !(0.0..=1.0).contains(&v.far) {
                return Err(EvalError::EvalFailed("tar or far outside [0,1]".into()));
            }
        }
        let expected_chance = 1.0 / self.identity_count as f64;
        if (self.chance - expected_chance).abs() > 1e-12 {
            return Err(EvalError::EvalFailed(format!(
                "chance baseline {} does not equal 1/{}",
                self.chance, self.identity_count
            )));
        }
        Ok(())
    }
}

fn write_cdf_csv(path: &Path, values: &[f64]) -> Result<(), EvalError> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut out = String::with_capacity(n * 16);
    for (i, v) in sorted.iter().enumerate() {
        let c = (i + 1) as f64 / n as f64;
        out.push_str(&format!("{v},{c}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes `report.json`, per-metric CDF CSVs, CDF plots, and a median table
/// into `dir`. Returns the paths written.
pub fn emit_report(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    report.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    let mut body = serde_json::to_vec_pretty(report)?;
    body.push(b'\n');
    std::fs::write(&json_path, body)?;
    written.push(json_path);

    let dssim_csv = dir.join("dssim_cdf.csv");
    write_cdf_csv(&dssim_csv, &report.dssim)?;
    written.push(dssim_csv);

    let perc_csv = dir.join("perc_cdf.csv");
    write_cdf_csv(&perc_csv, &report.perceptual)?;
    written.push(perc_csv);

    let dssim_png = dir.join("dssim_cdf.png");
    render_cdf_png(&dssim_png, &report.dssim, &format!("dssim cdf: {}", report.label))?;
    written.push(dssim_png);

    let perc_png = dir.join("perc_cdf.png");
    render_cdf_png(
        &perc_png,
        &report.perceptual,
        &format!("perceptual cdf: {}", report.label),
    )?;
    written.push(perc_png);

    let mut rows = vec![
        (
            "median dssim".to_string(),
            format!("{:.4}", report.dssim_summary.median),
        ),
        (
            "median perceptual".to_string(),
            format!("{:.4}", report.perceptual_summary.median),
        ),
        (
            "identification".to_string(),
            format!("{:.4}", report.identification_accuracy),
        ),
        ("chance".to_string(), format!("{:.4}", report.chance)),
    ];
    for v in &report.verification {
        let mode = match v.mode {
            Some(crate::scores::VerifyMode::SameImage) => "same-image",
            Some(crate::scores::VerifyMode::SameSubject) => "same-subject",
            None => "scores",
        };
        rows.push((
            format!("tar at far {:.3} / {mode}", v.far_target),
            format!("{:.4}", v.tar),
        ));
    }
    let table_png = dir.join("medians.png");
    render_table_png(&table_png, &rows)?;
    written.push(table_png);

    Ok(written)
}
