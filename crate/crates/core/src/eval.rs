//! Accuracy metrics and run comparisons.
//!
//! A case is *known* when its exact input key appeared in training (it is in
//! the [`NextSetIndex`]). In-set accuracy counts the top-1 prediction as a
//! hit when it equals the label or belongs to the set of next tokens recorded
//! for the key; keys absent from the index fall back to exact match.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{NextSetIndex, PathSetExample};
use crate::hylstm::{HyError, Recommender};

/// Schema tag written into every machine-readable report line.
pub const REPORT_SCHEMA: &str = "depgraph-rec.eval/1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("vocabulary mismatch: model {model}, records {records}")]
    VocabMismatch { model: String, records: String },
    #[error(transparent)]
    Model(#[from] HyError),
    #[error("bad report line: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub key: Vec<u32>,
    pub label: u32,
    pub prediction: u32,
    pub in_set: bool,
    pub known: bool,
    /// Rank of the label among the candidates (1-based), if within the
    /// largest requested k.
    pub label_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_cases: usize,
    pub top1: f64,
    pub topk: BTreeMap<usize, f64>,
    /// Acc(A)
    pub in_set_all: f64,
    /// Acc(K)
    pub in_set_known: f64,
    /// Acc(U)
    pub in_set_unknown: f64,
    pub n_known: usize,
    pub n_unknown: usize,
    pub cases: Vec<CaseResult>,
}

fn frac(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

impl EvalReport {
    /// Aggregates per-case results.
    pub fn from_cases(cases: Vec<CaseResult>, ks: &[usize]) -> Self {
        let n = cases.len();
        let n_known = cases.iter().filter(|c| c.known).count();
        let hits_k = cases.iter().filter(|c| c.known && c.in_set).count();
        let hits_u = cases.iter().filter(|c| !c.known && c.in_set).count();
        let top1 = frac(cases.iter().filter(|c| c.prediction == c.label).count(), n);
        let topk = ks
            .iter()
            .map(|&k| (k, frac(cases.iter().filter(|c| c.label_rank.is_some_and(|r| r <= k)).count(), n)))
            .collect();
        EvalReport {
            n_cases: n,
            top1,
            topk,
            in_set_all: frac(hits_k + hits_u, n),
            in_set_known: frac(hits_k, n_known),
            in_set_unknown: frac(hits_u, n - n_known),
            n_known,
            n_unknown: n - n_known,
            cases,
        }
    }

    /// Report restricted to the cases selected by `keep`.
    pub fn subset(&self, keep: impl Fn(&CaseResult) -> bool) -> Self {
        let ks: Vec<usize> = self.topk.keys().copied().collect();
        Self::from_cases(self.cases.iter().filter(|c| keep(c)).cloned().collect(), &ks)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cases      {}", self.n_cases);
        let _ = writeln!(s, "top-1      {:.4}", self.top1);
        for (k, v) in self.topk.iter().filter(|(&k, _)| k != 1) {
            let _ = writeln!(s, "top-{k:<6} {v:.4}");
        }
        let _ = writeln!(s, "Acc(A)     {:.4}", self.in_set_all);
        let _ = writeln!(s, "Acc(K)     {:.4}  ({} known)", self.in_set_known, self.n_known);
        let _ = writeln!(s, "Acc(U)     {:.4}  ({} unknown)", self.in_set_unknown, self.n_unknown);
        s
    }
}

/// Scores every case with `model`; `ks` are the top-k cutoffs to report.
pub fn evaluate<R: Recommender>(
    model: &R,
    model_vocab_hash: &str,
    cases: &[PathSetExample],
    records_vocab_hash: &str,
    index: &NextSetIndex,
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    if model_vocab_hash != records_vocab_hash {
        return Err(EvalError::VocabMismatch {
            model: model_vocab_hash.to_string(),
            records: records_vocab_hash.to_string(),
        });
    }
    let depth = ks.iter().copied().max().unwrap_or(1).max(1);
    let results: Vec<CaseResult> = cases
        .par_iter()
        .map(|case| -> Result<CaseResult, EvalError> {
            let ranked = model.recommend(&case.paths, depth)?;
            let prediction = ranked.first().copied().unwrap_or(0);
            let key = case.key();
            let known = index.is_known(&key);
            // The case's own label always belongs to its reasonable set.
            let in_set = prediction == case.label || index.get(&key).is_some_and(|set| set.contains(&prediction));
            let label_rank = ranked.iter().position(|&t| t == case.label).map(|p| p + 1);
            Ok(CaseResult { key, label: case.label, prediction, in_set, known, label_rank })
        })
        .collect::<Result<_, _>>()?;
    Ok(EvalReport::from_cases(results, ks))
}

/// One row of a comparison, as written to the JSON-lines sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub schema: String,
    pub name: String,
    pub n_cases: usize,
    pub top1: f64,
    pub topk: BTreeMap<usize, f64>,
    pub acc_all: f64,
    pub acc_known: f64,
    pub acc_unknown: f64,
    pub n_known: usize,
    pub n_unknown: usize,
    /// Acc(A) minus the first row's Acc(A).
    pub delta_acc_all: f64,
}

impl ReportSummary {
    pub fn from_json_line(line: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(line)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ReportSummary>,
    pub text: String,
    pub json_lines: String,
}

/// Tabulates reports in the given order; deltas are relative to the first.
pub fn compare_runs(reports: &[(String, EvalReport)]) -> Comparison {
    let base = reports.first().map(|r| r.1.in_set_all).unwrap_or(0.0);
    let rows: Vec<ReportSummary> = reports
        .iter()
        .map(|(name, r)| ReportSummary {
            schema: REPORT_SCHEMA.to_string(),
            name: name.clone(),
            n_cases: r.n_cases,
            top1: r.top1,
            topk: r.topk.clone(),
            acc_all: r.in_set_all,
            acc_known: r.in_set_known,
            acc_unknown: r.in_set_unknown,
            n_known: r.n_known,
            n_unknown: r.n_unknown,
            delta_acc_all: r.in_set_all - base,
        })
        .collect();
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut text = format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>8}\n",
        "run", "Acc(A)", "Acc(K)", "Acc(U)", "top-1", "dAcc(A)"
    );
    for r in &rows {
        let _ = writeln!(
            text,
            "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>+8.4}",
            r.name, r.acc_all, r.acc_known, r.acc_unknown, r.top1, r.delta_acc_all
        );
    }
    let json_lines = rows.iter().map(|r| serde_json::to_string(r).expect("summary serializes") + "\n").collect();
    Comparison { rows, text, json_lines }
}
