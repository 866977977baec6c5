//! Collate the artifacts of a finished run.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::run::{EntropyRow, RunManifest, RunSummary, TailRow};
use super::HarnessError;
use crate::bounds::BoundReport;
use crate::estimators::{CesaroRow, DriftRow, EscapeRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub text: String,
    pub summary: RunSummary,
    pub bounds: BoundReport,
    pub manifest: RunManifest,
}

impl Report {
    pub fn inconsistent(&self) -> bool {
        self.summary.verdict_inconsistent
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "summary": self.summary,
            "bounds": self.bounds,
            "manifest": self.manifest,
        })
    }
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T, HarnessError> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io { path: name.into(), source })?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Corrupt { path: name.into(), reason: e.to_string() })
}

fn check_csv<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<usize, HarnessError> {
    let corrupt = |reason: String| HarnessError::Corrupt { path: name.into(), reason };
    let mut reader = csv::Reader::from_path(dir.join(name)).map_err(|e| corrupt(e.to_string()))?;
    let mut rows = 0;
    for row in reader.deserialize::<T>() {
        row.map_err(|e| corrupt(e.to_string()))?;
        rows += 1;
    }
    // the writer never emits a header on its own
    let header = reader.headers().map_err(|e| corrupt(e.to_string()))?;
    if rows == 0 && !header.is_empty() {
        return Err(corrupt("header without rows".into()));
    }
    Ok(rows)
}

/// Reads the manifest, checks that every listed artifact exists and parses,
/// and renders a plain-text summary.
pub fn report(dir: &Path) -> Result<Report, HarnessError> {
    if !dir.join("manifest.json").is_file() {
        return Err(HarnessError::Missing(vec!["manifest.json".into()]));
    }
    let manifest: RunManifest = read_json(dir, "manifest.json")?;
    let mut missing: Vec<String> = manifest.files.iter().filter(|f| !dir.join(f).is_file()).cloned().collect();
    for required in ["summary.json", "bounds.json"] {
        if !manifest.files.iter().any(|f| f == required) && !missing.iter().any(|m| m == required) {
            missing.push(required.into());
        }
    }
    if !missing.is_empty() {
        return Err(HarnessError::Missing(missing));
    }
    let summary: RunSummary = read_json(dir, "summary.json")?;
    let bounds: BoundReport = read_json(dir, "bounds.json")?;
    if summary.config_hash != manifest.config_hash {
        return Err(HarnessError::Corrupt { path: "summary.json".into(), reason: "config hash differs from manifest".into() });
    }
    for f in &manifest.files {
        match f.as_str() {
            "escape.csv" => check_csv::<EscapeRow>(dir, f)?,
            "cesaro.csv" => check_csv::<CesaroRow>(dir, f)?,
            "drift.csv" => check_csv::<DriftRow>(dir, f)?,
            "tail.csv" => check_csv::<TailRow>(dir, f)?,
            "entropy.csv" => check_csv::<EntropyRow>(dir, f)?,
            _ => 0,
        };
    }

    let mut text = String::new();
    text.push_str(&format!("run {} ({})\n", summary.name, summary.config_hash));
    text.push_str(&format!(
        "{} replications x {} steps, {} diverged\n",
        summary.replications, summary.horizon, summary.diverged
    ));
    text.push_str(&format!(
        "bounded-box mass (|x| <= {:.4e}, second half): {:.4}\n",
        summary.box_radius, summary.box_mass_second_half
    ));
    text.push_str(&format!("empirical stability: {}\n", if summary.stable { "stable" } else { "not stable" }));
    if let Some(g) = summary.cesaro_max_gap {
        text.push_str(&format!("largest Cesaro gap (N vs 2N): {g:.4}\n"));
    }
    if let (Some(b0), Some((lo, hi))) = (summary.drift_b0, summary.drift_b0_ci) {
        text.push_str(&format!("drift b0: {b0:.4} (95% CI {lo:.4} .. {hi:.4})\n"));
    }
    if let Some(d) = summary.tail_decreasing {
        text.push_str(&format!("P(gap >= 2) decreasing in Delta: {d}\n"));
    }
    if let Some(e) = &summary.escape_final {
        text.push_str(&format!(
            "P(|x_T| <= b(T)) at T = {}: {:.4} [{:.4}, {:.4}]\n",
            e.t, e.fraction, e.ci_low, e.ci_high
        ));
    }
    if let Some(s) = summary.entropy_slope {
        text.push_str(&format!("entropy growth: {s:.4} bits/step\n"));
    }
    text.push('\n');
    text.push_str(&bounds.render_table());
    if summary.non_ams_signature {
        text.push_str("non-AMS signature: bounded-box Cesaro mass vanishing or divergence observed\n");
    }
    if summary.verdict_inconsistent {
        text.push_str("INCONSISTENT: a necessary rate condition fails while the run looks stable\n");
    }
    for n in &summary.notes {
        text.push_str(&format!("note: {n}\n"));
    }
    Ok(Report { text, summary, bounds, manifest })
}
