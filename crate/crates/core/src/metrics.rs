//! Detection rates at a threshold, TDR at a fixed FDR, and the adaptation
//! matrix (checkpoints × test styles) with its CSV and JSON renderings.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no {0} scores")]
    Empty(&'static str),
    #[error("score {0} outside [0, 1]")]
    ScoreRange(f64),
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("FDR target {0} outside [0, 1]")]
    Target(f64),
    #[error("scoring failed for checkpoint `{checkpoint}`: {reason}")]
    Scoring { checkpoint: String, reason: String },
    #[error("matrix must have at least one checkpoint and one style")]
    EmptyMatrix,
}

/// Scores of one checkpoint on the shared real test set and one synthetic set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub checkpoint: String,
    pub style: String,
    pub real: Vec<f64>,
    pub synthetic: Vec<f64>,
}

fn check_scores(scores: &[f64], what: &'static str) -> Result<(), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty(what));
    }
    match scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        Some(&s) => Err(MetricsError::ScoreRange(s)),
        None => Ok(()),
    }
}

fn rate_at(scores: &[f64], tau: f64) -> f64 {
    scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64
}

/// `(TDR, FDR)` at threshold `tau`, counting `s ≥ τ` as a detection.
pub fn tdr_fdr(real: &[f64], synthetic: &[f64], tau: f64) -> Result<(f64, f64), MetricsError> {
    check_scores(real, "real")?;
    check_scores(synthetic, "synthetic")?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(MetricsError::Threshold(tau));
    }
    Ok((rate_at(synthetic, tau), rate_at(real, tau)))
}

/// TDR at the smallest candidate threshold whose FDR is at most
/// `fdr_target`. Candidates are the observed real scores plus the next float
/// above their maximum, where FDR is 0. Returns `(TDR, τ*)`.
pub fn tdr_at_fdr(real: &[f64], synthetic: &[f64], fdr_target: f64) -> Result<(f64, f64), MetricsError> {
    check_scores(real, "real")?;
    check_scores(synthetic, "synthetic")?;
    if !(0.0..=1.0).contains(&fdr_target) {
        return Err(MetricsError::Target(fdr_target));
    }
    let mut sorted = real.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut tau = sorted[n - 1].next_up();
    // ascending candidates; FDR is nonincreasing, so the first hit is smallest
    let mut i = 0;
    while i < n {
        let fdr = (n - i) as f64 / n as f64;
        if fdr <= fdr_target {
            tau = sorted[i];
            break;
        }
        let c = sorted[i];
        while i < n && sorted[i] == c {
            i += 1;
        }
    }
    Ok((rate_at(synthetic, tau), tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub tdr_at_tau: f64,
    pub fdr_at_tau: f64,
    pub tdr_at_fdr: f64,
    pub tau_star: f64,
}

impl Cell {
    pub fn evaluate(set: &ScoreSet, tau: f64, fdr_target: f64) -> Result<Self, MetricsError> {
        let (tdr_at_tau, fdr_at_tau) = tdr_fdr(&set.real, &set.synthetic, tau)?;
        let (tdr_at_fdr, tau_star) = tdr_at_fdr(&set.real, &set.synthetic, fdr_target)?;
        Ok(Self {
            tdr_at_tau,
            fdr_at_tau,
            tdr_at_fdr,
            tau_star,
        })
    }
}

/// Arithmetic means of the three rates across a row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCell {
    pub tdr_at_tau: f64,
    pub fdr_at_tau: f64,
    pub tdr_at_fdr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationMatrix {
    pub tau: f64,
    pub fdr_target: f64,
    pub checkpoints: Vec<String>,
    pub styles: Vec<String>,
    /// `cells[row][column]`.
    pub cells: Vec<Vec<Cell>>,
    pub means: Vec<MeanCell>,
}

impl AdaptationMatrix {
    pub fn from_rows(
        checkpoints: Vec<String>,
        styles: Vec<String>,
        cells: Vec<Vec<Cell>>,
        tau: f64,
        fdr_target: f64,
    ) -> Result<Self, MetricsError> {
        if checkpoints.is_empty() || styles.is_empty() || cells.len() != checkpoints.len() {
            return Err(MetricsError::EmptyMatrix);
        }
        if cells.iter().any(|r| r.len() != styles.len()) {
            return Err(MetricsError::EmptyMatrix);
        }
        let means = cells
            .iter()
            .map(|row| {
                let n = row.len() as f64;
                MeanCell {
                    tdr_at_tau: row.iter().map(|c| c.tdr_at_tau).sum::<f64>() / n,
                    fdr_at_tau: row.iter().map(|c| c.fdr_at_tau).sum::<f64>() / n,
                    tdr_at_fdr: row.iter().map(|c| c.tdr_at_fdr).sum::<f64>() / n,
                }
            })
            .collect();
        Ok(Self {
            tau,
            fdr_target,
            checkpoints,
            styles,
            cells,
            means,
        })
    }

    pub fn cell(&self, checkpoint: &str, style: &str) -> Option<&Cell> {
        let r = self.checkpoints.iter().position(|c| c == checkpoint)?;
        let c = self.styles.iter().position(|s| s == style)?;
        Some(&self.cells[r][c])
    }

    pub fn row_mean(&self, checkpoint: &str) -> Option<&MeanCell> {
        let r = self.checkpoints.iter().position(|c| c == checkpoint)?;
        Some(&self.means[r])
    }

    /// Long-format CSV, rates in percent. Each checkpoint's style rows are
    /// followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("checkpoint,style,tdr_at_tau,fdr_at_tau,tdr_at_fdr\n");
        for (r, ckpt) in self.checkpoints.iter().enumerate() {
            for (c, style) in self.styles.iter().enumerate() {
                let cell = &self.cells[r][c];
                let _ = writeln!(
                    out,
                    "{ckpt},{style},{:.4},{:.4},{:.4}",
                    100.0 * cell.tdr_at_tau,
                    100.0 * cell.fdr_at_tau,
                    100.0 * cell.tdr_at_fdr
                );
            }
            let m = &self.means[r];
            let _ = writeln!(
                out,
                "{ckpt},mean,{:.4},{:.4},{:.4}",
                100.0 * m.tdr_at_tau,
                100.0 * m.fdr_at_tau,
                100.0 * m.tdr_at_fdr
            );
        }
        out
    }

    /// Pretty-printed JSON with caller-supplied metadata.
    pub fn to_json(&self, metadata: &serde_json::Value) -> String {
        let doc = serde_json::json!({ "metadata": metadata, "matrix": self });
        serde_json::to_string_pretty(&doc).expect("matrix serializes")
    }

    /// Fixed-width text table of TDR@fdr_target in percent, with the mean column.
    pub fn to_table(&self) -> String {
        let width = self.styles.iter().map(|s| s.len()).max().unwrap_or(4).max(8);
        let mut out = format!("{:<12}", "checkpoint");
        for s in &self.styles {
            let _ = write!(out, " {s:>width$}");
        }
        let _ = writeln!(out, " {:>width$}", "mean");
        for (r, ckpt) in self.checkpoints.iter().enumerate() {
            let _ = write!(out, "{ckpt:<12}");
            for cell in &self.cells[r] {
                let _ = write!(out, " {:>width$.2}", 100.0 * cell.tdr_at_fdr);
            }
            let _ = writeln!(out, " {:>width$.2}", 100.0 * self.means[r].tdr_at_fdr);
        }
        out
    }
}

/// Scores every checkpoint on every test set against one shared real test
/// set. `score` maps a checkpoint and a slice of test items to scores.
pub fn build_matrix<P, T, E: std::fmt::Display>(
    checkpoints: &[(String, P)],
    real: &[T],
    tests: &[(String, Vec<T>)],
    tau: f64,
    fdr_target: f64,
    score: impl Fn(&P, &[T]) -> Result<Vec<f64>, E>,
) -> Result<AdaptationMatrix, MetricsError> {
    if checkpoints.is_empty() || tests.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut cells = Vec::with_capacity(checkpoints.len());
    for (name, params) in checkpoints {
        let fail = |e: E| MetricsError::Scoring {
            checkpoint: name.clone(),
            reason: e.to_string(),
        };
        let real_scores = score(params, real).map_err(fail)?;
        let mut row = Vec::with_capacity(tests.len());
        for (style, samples) in tests {
            let set = ScoreSet {
                checkpoint: name.clone(),
                style: style.clone(),
                real: real_scores.clone(),
                synthetic: score(params, samples).map_err(fail)?,
            };
            row.push(Cell::evaluate(&set, tau, fdr_target)?);
        }
        cells.push(row);
    }
    AdaptationMatrix::from_rows(
        checkpoints.iter().map(|(n, _)| n.clone()).collect(),
        tests.iter().map(|(s, _)| s.clone()).collect(),
        cells,
        tau,
        fdr_target,
    )
}
