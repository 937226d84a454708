//! Extraction and segmentation metrics.
//!
//! Per-document conventions for empty sets: precision is 0 when nothing was
//! predicted (1 if the truth is empty too); recall is 1 when the truth is
//! empty; the Jaccard index of two empty sets is 1.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{box_iou, RotatedBox};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("{preds} prediction sets for {truths} ground-truth sets")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("no documents to evaluate")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub predicted: BTreeSet<String>,
    pub truth: BTreeSet<String>,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    #[serde(rename = "mJI")]
    pub mji: f64,
    #[serde(rename = "mP")]
    pub mp: f64,
    #[serde(rename = "mR")]
    pub mr: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub docs: Vec<DocScore>,
}

fn lower_set<'a>(s: impl IntoIterator<Item = &'a String>) -> BTreeSet<String> {
    s.into_iter().map(|x| x.to_lowercase()).collect()
}

pub fn doc_score(predicted: &BTreeSet<String>, truth: &BTreeSet<String>) -> DocScore {
    let p = lower_set(predicted);
    let g = lower_set(truth);
    let inter = p.intersection(&g).count() as f64;
    let union = p.union(&g).count() as f64;
    let jaccard = if union == 0.0 { 1.0 } else { inter / union };
    let precision = match (p.is_empty(), g.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => inter / p.len() as f64,
    };
    let recall = if g.is_empty() { 1.0 } else { inter / g.len() as f64 };
    DocScore {
        predicted: p,
        truth: g,
        jaccard,
        precision,
        recall,
    }
}

/// Mean Jaccard index, precision and recall over documents, case-insensitive.
pub fn jaccard_metrics(
    preds: &[BTreeSet<String>],
    truths: &[BTreeSet<String>],
) -> Result<ExtractionReport, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let docs: Vec<DocScore> = preds.iter().zip(truths).map(|(p, g)| doc_score(p, g)).collect();
    let m = docs.len();
    let mean = |f: fn(&DocScore) -> f64| docs.iter().map(f).sum::<f64>() / m as f64;
    Ok(ExtractionReport {
        mji: mean(|d| d.jaccard),
        mp: mean(|d| d.precision),
        mr: mean(|d| d.recall),
        m,
        docs,
    })
}

impl ExtractionReport {
    pub fn to_table(&self, label: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>8} {:>8} {:>8} {:>6}", "run", "mJI", "mP", "mR", "M");
        let _ = writeln!(
            out,
            "{:<28} {:>8.4} {:>8.4} {:>8.4} {:>6}",
            label, self.mji, self.mp, self.mr, self.m
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub mean_iou: f64,
    /// Per document: IoU of every matched pair, then zeros for unmatched boxes.
    pub per_doc: Vec<Vec<f64>>,
}

/// Greedy one-to-one matching by descending IoU; returns per-slot IoUs.
pub fn match_boxes(pred: &[RotatedBox], truth: &[RotatedBox]) -> Vec<f64> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in truth.iter().enumerate() {
            let iou = box_iou(p, g);
            if iou > 0.0 {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; truth.len()];
    let mut slots = Vec::new();
    for (iou, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            slots.push(iou);
        }
    }
    let unmatched = used_p.iter().filter(|u| !**u).count() + used_g.iter().filter(|u| !**u).count();
    slots.extend(std::iter::repeat_n(0.0, unmatched));
    slots
}

/// Per-document mean IoU over matched and unmatched slots, averaged over
/// documents. A document with neither predictions nor truths scores 1.
pub fn seg_miou(preds: &[Vec<RotatedBox>], truths: &[Vec<RotatedBox>]) -> Result<SegReport, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let per_doc: Vec<Vec<f64>> = preds.iter().zip(truths).map(|(p, g)| match_boxes(p, g)).collect();
    let mean_iou = per_doc
        .iter()
        .map(|s| if s.is_empty() { 1.0 } else { s.iter().sum::<f64>() / s.len() as f64 })
        .sum::<f64>()
        / per_doc.len() as f64;
    Ok(SegReport { mean_iou, per_doc })
}
