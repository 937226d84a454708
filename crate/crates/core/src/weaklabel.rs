//! Weak-to-strong labeling: the OCR labeling function and iterative
//! pseudo-labeling with a pluggable segmenter.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::decoder::{decode_topk, DecoderConfig};
use crate::geometry::{box_iou, RotatedBox};
use crate::matcher::candidates;
use crate::metrics::seg_miou;
use crate::simulator::{SimDocument, FEATURE_NAMES};

/// A simulated document together with its weak labels `G_i`
/// (carried in [`SimDocument::weak_labels`]).
pub type WeakLabeledDoc = SimDocument;

const N_FEATURES: usize = FEATURE_NAMES.len();

#[derive(Debug, thiserror::Error)]
pub enum WeakLabelError {
    #[error("no seed labels: the OCR labeling function admitted no documents")]
    NoSeedLabels,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid iteration config: {0}")]
    Config(String),
    #[error("strong-label line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a strong-label box came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BoxSource {
    Ocr,
    Segmenter { iteration: usize },
}

impl fmt::Display for BoxSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoxSource::Ocr => write!(f, "ocr-fn"),
            BoxSource::Segmenter { iteration } => write!(f, "seg-fn:{iteration}"),
        }
    }
}

impl FromStr for BoxSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ocr-fn" {
            return Ok(BoxSource::Ocr);
        }
        s.strip_prefix("seg-fn:")
            .and_then(|t| t.parse().ok())
            .map(|iteration| BoxSource::Segmenter { iteration })
            .ok_or_else(|| format!("unknown box source {s:?}"))
    }
}

impl Serialize for BoxSource {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BoxSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    #[serde(flatten)]
    pub bbox: RotatedBox,
    pub medicine: Option<String>,
    pub source: BoxSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongLabeledDoc {
    pub doc_id: usize,
    pub boxes: Vec<LabeledBox>,
}

impl StrongLabeledDoc {
    /// Adds the boxes of `new` that do not overlap an existing box by more
    /// than `dedup_iou`; existing (earlier) boxes win. Returns how many were added.
    pub fn merge(&mut self, new: impl IntoIterator<Item = LabeledBox>, dedup_iou: f64) -> usize {
        let mut added = 0;
        for b in new {
            if self.boxes.iter().all(|e| box_iou(&e.bbox, &b.bbox) <= dedup_iou) {
                self.boxes.push(b);
                added += 1;
            }
        }
        added
    }

    pub fn rects(&self) -> Vec<RotatedBox> {
        self.boxes.iter().map(|b| b.bbox).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterationConfig {
    /// Total number of iterations `T`; iteration 1 is the OCR labeling function.
    pub iterations: usize,
    pub coverage_threshold: f64,
    /// Top-k depth of the OCR labeling function.
    pub k_label: usize,
    pub dedup_iou: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            iterations: 3,
            coverage_threshold: 0.9,
            k_label: 20_000,
            dedup_iou: 0.5,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<(), WeakLabelError> {
        if self.iterations < 1 {
            return Err(WeakLabelError::Config("need at least one iteration".into()));
        }
        if !(self.coverage_threshold > 0.0 && self.coverage_threshold <= 1.0) {
            return Err(WeakLabelError::Config(format!(
                "coverage threshold {} outside (0, 1]",
                self.coverage_threshold
            )));
        }
        if self.k_label < 1 {
            return Err(WeakLabelError::Config("k_label must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dedup_iou) {
            return Err(WeakLabelError::Config("dedup_iou must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Boxes the units whose top-k hypotheses contain a ground-truth name of the
/// document, in reading order. Each name is claimed by at most one unit.
pub fn ocr_labeling_fn(doc: &WeakLabeledDoc, decoder: &DecoderConfig) -> Vec<LabeledBox> {
    let truth: BTreeSet<String> = doc.weak_labels.iter().map(|n| n.to_lowercase()).collect();
    let mut claimed: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::new();
    for unit in &doc.units {
        if claimed.len() == truth.len() {
            break;
        }
        let paths = decode_topk(&unit.logits, decoder);
        let hit = paths.iter().find_map(|p| {
            candidates(&p.text)
                .into_iter()
                .find(|c| truth.contains(c) && !claimed.contains(c))
        });
        if let Some(name) = hit {
            claimed.insert(name.clone());
            out.push(LabeledBox {
                bbox: unit.bbox,
                medicine: Some(name),
                source: BoxSource::Ocr,
            });
        }
    }
    out
}

/// `matched / total >= threshold`; false when `total` is zero.
pub fn coverage_accept(matched: usize, total: usize, threshold: f64) -> bool {
    total > 0 && matched as f64 / total as f64 >= threshold
}

/// A trained segmentation stand-in.
pub trait Segmenter: Send + Sync {
    /// Fits on admitted documents paired with their strong labels.
    fn train(&mut self, data: &[(&SimDocument, &StrongLabeledDoc)]) -> Result<(), WeakLabelError>;
    /// Medicine-line boxes of `doc`. Deterministic given the trained state.
    fn predict(&self, doc: &SimDocument) -> Vec<RotatedBox>;
    fn name(&self) -> &'static str;
    /// Serialized trained state, for segmenters that have one.
    fn to_json(&self) -> Option<String> {
        None
    }
}

/// Returns the true medicine-line boxes.
#[derive(Debug, Clone, Default)]
pub struct OracleSegmenter;

impl Segmenter for OracleSegmenter {
    fn train(&mut self, _: &[(&SimDocument, &StrongLabeledDoc)]) -> Result<(), WeakLabelError> {
        Ok(())
    }

    fn predict(&self, doc: &SimDocument) -> Vec<RotatedBox> {
        doc.medicine_boxes()
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Predicts nothing.
#[derive(Debug, Clone, Default)]
pub struct IdentitySegmenter;

impl Segmenter for IdentitySegmenter {
    fn train(&mut self, _: &[(&SimDocument, &StrongLabeledDoc)]) -> Result<(), WeakLabelError> {
        Ok(())
    }

    fn predict(&self, _: &SimDocument) -> Vec<RotatedBox> {
        Vec::new()
    }

    fn name(&self) -> &'static str {
        "identity"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineModel {
    /// Single-class training data: always predict that class.
    Constant { positive: bool },
    Logistic {
        mean: [f64; N_FEATURES],
        scale: [f64; N_FEATURES],
        weights: [f64; N_FEATURES],
        bias: f64,
    },
}

impl LineModel {
    pub fn probability(&self, features: &[f64; N_FEATURES]) -> f64 {
        match self {
            LineModel::Constant { positive } => *positive as u8 as f64,
            LineModel::Logistic {
                mean,
                scale,
                weights,
                bias,
            } => {
                let z: f64 = bias
                    + (0..N_FEATURES)
                        .map(|i| weights[i] * (features[i] - mean[i]) / scale[i])
                        .sum::<f64>();
                sigmoid(z)
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Per-line logistic regression over the simulator's line features, fit by
/// full-batch gradient descent on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticSegmenter {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// A line whose box overlaps a labeled box above this IoU is a positive.
    pub match_iou: f64,
    pub model: Option<LineModel>,
}

impl Default for LogisticSegmenter {
    fn default() -> Self {
        LogisticSegmenter {
            seed: 0,
            epochs: 400,
            learning_rate: 0.5,
            l2: 1e-4,
            match_iou: 0.5,
            model: None,
        }
    }
}

impl LogisticSegmenter {
    pub fn with_seed(seed: u64) -> Self {
        LogisticSegmenter {
            seed,
            ..Default::default()
        }
    }

    /// Fits on explicit `(features, is_medicine)` examples.
    pub fn fit(&mut self, examples: &[([f64; N_FEATURES], bool)]) {
        let positives = examples.iter().filter(|e| e.1).count();
        if positives == 0 || positives == examples.len() {
            self.model = Some(LineModel::Constant {
                positive: positives > 0 && positives * 2 >= examples.len(),
            });
            return;
        }
        let n = examples.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        let mut scale = [0.0; N_FEATURES];
        for (x, _) in examples {
            for i in 0..N_FEATURES {
                mean[i] += x[i] / n;
            }
        }
        for (x, _) in examples {
            for i in 0..N_FEATURES {
                scale[i] += (x[i] - mean[i]).powi(2) / n;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
        }
        let xs: Vec<[f64; N_FEATURES]> = examples
            .iter()
            .map(|(x, _)| std::array::from_fn(|i| (x[i] - mean[i]) / scale[i]))
            .collect();
        let ys: Vec<f64> = examples.iter().map(|e| e.1 as u8 as f64).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let init = Normal::new(0.0, 0.01).expect("valid normal");
        let mut w: [f64; N_FEATURES] = std::array::from_fn(|_| init.sample(&mut rng));
        let mut b = 0.0;
        for _ in 0..self.epochs {
            let mut gw = [0.0; N_FEATURES];
            let mut gb = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                let z = b + (0..N_FEATURES).map(|i| w[i] * x[i]).sum::<f64>();
                let err = sigmoid(z) - y;
                for i in 0..N_FEATURES {
                    gw[i] += err * x[i] / n;
                }
                gb += err / n;
            }
            for i in 0..N_FEATURES {
                w[i] -= self.learning_rate * (gw[i] + self.l2 * w[i]);
            }
            b -= self.learning_rate * gb;
        }
        self.model = Some(LineModel::Logistic {
            mean,
            scale,
            weights: w,
            bias: b,
        });
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WeakLabelError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeakLabelError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

impl Segmenter for LogisticSegmenter {
    fn train(&mut self, data: &[(&SimDocument, &StrongLabeledDoc)]) -> Result<(), WeakLabelError> {
        let mut examples = Vec::new();
        for (doc, labels) in data {
            for unit in &doc.units {
                let positive = labels.boxes.iter().any(|b| box_iou(&b.bbox, &unit.bbox) > self.match_iou);
                examples.push((unit.features, positive));
            }
        }
        if examples.is_empty() {
            return Err(WeakLabelError::NoSeedLabels);
        }
        self.fit(&examples);
        Ok(())
    }

    fn predict(&self, doc: &SimDocument) -> Vec<RotatedBox> {
        let Some(model) = &self.model else {
            return Vec::new();
        };
        doc.units
            .iter()
            .filter(|u| model.probability(&u.features) > 0.5)
            .map(|u| u.bbox)
            .collect()
    }

    fn name(&self) -> &'static str {
        "reference"
    }

    fn to_json(&self) -> Option<String> {
        serde_json::to_string_pretty(self).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub admitted: usize,
    pub admitted_fraction: f64,
    pub boxes: usize,
    pub new_boxes: usize,
    /// Geometric mIoU of the accumulated boxes against the true medicine lines.
    pub seg_miou: f64,
}

pub struct IterationOutcome {
    pub stats: Vec<IterationStats>,
    /// Per iteration, per document: admitted into the training set.
    pub admitted: Vec<Vec<bool>>,
    /// Accumulated boxes after the last iteration, one entry per document.
    pub labels: Vec<StrongLabeledDoc>,
    /// A segmenter trained on the final training set.
    pub segmenter: Box<dyn Segmenter>,
}

impl IterationOutcome {
    /// Strong labels of the documents in the final training set.
    pub fn training_set(&self) -> Vec<&StrongLabeledDoc> {
        let last = self.admitted.last().expect("at least one iteration");
        self.labels.iter().zip(last).filter(|(_, a)| **a).map(|(l, _)| l).collect()
    }
}

fn train_fresh(
    factory: &(dyn Fn() -> Box<dyn Segmenter> + Sync),
    dataset: &[WeakLabeledDoc],
    labels: &[StrongLabeledDoc],
    admitted: &[bool],
) -> Result<Box<dyn Segmenter>, WeakLabelError> {
    let train: Vec<(&SimDocument, &StrongLabeledDoc)> = dataset
        .iter()
        .zip(labels)
        .zip(admitted)
        .filter(|(_, a)| **a)
        .map(|(pair, _)| pair)
        .collect();
    if train.is_empty() {
        return Err(WeakLabelError::NoSeedLabels);
    }
    let mut seg = factory();
    seg.train(&train)?;
    Ok(seg)
}

/// Iteration 1 labels every document with [`ocr_labeling_fn`]; each later
/// iteration trains a fresh segmenter on the admitted documents, adds its
/// boxes to every document and re-scores coverage as boxes over `|G_i|`.
pub fn iterate(
    dataset: &[WeakLabeledDoc],
    factory: &(dyn Fn() -> Box<dyn Segmenter> + Sync),
    cfg: &IterationConfig,
    decoder: &DecoderConfig,
) -> Result<IterationOutcome, WeakLabelError> {
    cfg.validate()?;
    decoder.validate().map_err(WeakLabelError::Config)?;
    if dataset.is_empty() {
        return Err(WeakLabelError::EmptyDataset);
    }
    let truth_boxes: Vec<Vec<RotatedBox>> = dataset.iter().map(|d| d.medicine_boxes()).collect();
    let n = dataset.len();
    let mut labels: Vec<StrongLabeledDoc> = dataset
        .par_iter()
        .map(|doc| StrongLabeledDoc {
            doc_id: doc.doc_id,
            boxes: ocr_labeling_fn(doc, decoder),
        })
        .collect();
    let mut stats = Vec::with_capacity(cfg.iterations);
    let mut admitted_all = Vec::with_capacity(cfg.iterations);

    let mut record = |iteration: usize, labels: &[StrongLabeledDoc], new_boxes: usize| -> Vec<bool> {
        let admitted: Vec<bool> = labels
            .iter()
            .zip(dataset)
            .map(|(l, d)| coverage_accept(l.boxes.len(), d.weak_labels.len(), cfg.coverage_threshold))
            .collect();
        let count = admitted.iter().filter(|a| **a).count();
        let preds: Vec<Vec<RotatedBox>> = labels.iter().map(|l| l.rects()).collect();
        let seg = seg_miou(&preds, &truth_boxes).map(|r| r.mean_iou).unwrap_or(0.0);
        stats.push(IterationStats {
            iteration,
            admitted: count,
            admitted_fraction: count as f64 / n as f64,
            boxes: labels.iter().map(|l| l.boxes.len()).sum(),
            new_boxes,
            seg_miou: seg,
        });
        admitted
    };

    let first_boxes = labels.iter().map(|l| l.boxes.len()).sum();
    admitted_all.push(record(1, &labels, first_boxes));
    if !admitted_all[0].iter().any(|a| *a) {
        return Err(WeakLabelError::NoSeedLabels);
    }
    for t in 2..=cfg.iterations {
        let seg = train_fresh(factory, dataset, &labels, admitted_all.last().unwrap())?;
        let predictions: Vec<Vec<RotatedBox>> = dataset.par_iter().map(|d| seg.predict(d)).collect();
        let mut added = 0;
        for (l, p) in labels.iter_mut().zip(predictions) {
            added += l.merge(
                p.into_iter().map(|bbox| LabeledBox {
                    bbox,
                    medicine: None,
                    source: BoxSource::Segmenter { iteration: t },
                }),
                cfg.dedup_iou,
            );
        }
        admitted_all.push(record(t, &labels, added));
    }
    let segmenter = train_fresh(factory, dataset, &labels, admitted_all.last().unwrap())?;
    Ok(IterationOutcome {
        stats,
        admitted: admitted_all,
        labels,
        segmenter,
    })
}

pub fn write_strong_labels(labels: &[StrongLabeledDoc], path: impl AsRef<Path>) -> Result<(), WeakLabelError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for l in labels {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_strong_labels(path: impl AsRef<Path>) -> Result<Vec<StrongLabeledDoc>, WeakLabelError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| WeakLabelError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_boundaries() {
        assert!(!coverage_accept(4, 5, 0.9));
        assert!(coverage_accept(5, 5, 0.9));
        assert!(coverage_accept(9, 10, 0.9));
        assert!(!coverage_accept(0, 0, 0.9));
    }

    #[test]
    fn source_strings() {
        for s in [BoxSource::Ocr, BoxSource::Segmenter { iteration: 3 }] {
            assert_eq!(s.to_string().parse::<BoxSource>().unwrap(), s);
        }
        assert!("seg-fn:x".parse::<BoxSource>().is_err());
        let b = LabeledBox {
            bbox: RotatedBox::axis_aligned(1.0, 2.0, 3.0, 4.0).unwrap(),
            medicine: Some("dolo".into()),
            source: BoxSource::Ocr,
        };
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(json, r#"{"t":1.0,"l":2.0,"h":3.0,"w":4.0,"r":0.0,"medicine":"dolo","source":"ocr-fn"}"#);
    }

    #[test]
    fn merge_is_idempotent() {
        let a = RotatedBox::axis_aligned(0.0, 0.0, 10.0, 100.0).unwrap();
        let shifted = RotatedBox::axis_aligned(1.0, 0.0, 10.0, 100.0).unwrap();
        let other = RotatedBox::axis_aligned(50.0, 0.0, 10.0, 100.0).unwrap();
        let lb = |bbox, source| LabeledBox {
            bbox,
            medicine: None,
            source,
        };
        let mut doc = StrongLabeledDoc {
            doc_id: 0,
            boxes: vec![lb(a, BoxSource::Ocr)],
        };
        let new = vec![
            lb(shifted, BoxSource::Segmenter { iteration: 2 }),
            lb(other, BoxSource::Segmenter { iteration: 2 }),
        ];
        assert_eq!(doc.merge(new.clone(), 0.5), 1);
        assert_eq!(doc.boxes[0].source, BoxSource::Ocr);
        let snapshot = doc.clone();
        assert_eq!(doc.merge(new, 0.5), 0);
        assert_eq!(doc, snapshot);
    }

    #[test]
    fn logistic_constant_and_separable() {
        let mut seg = LogisticSegmenter::with_seed(1);
        seg.fit(&[([0.0; 5], false), ([1.0; 5], false)]);
        assert_eq!(seg.model, Some(LineModel::Constant { positive: false }));

        let examples: Vec<([f64; 5], bool)> = (0..40)
            .map(|i| {
                let pos = i % 2 == 0;
                ([0.0, pos as u8 as f64, 3.0 + (i % 5) as f64, 0.1, 0.5], pos)
            })
            .collect();
        seg.fit(&examples);
        let model = seg.model.clone().unwrap();
        for (x, y) in &examples {
            assert_eq!(model.probability(x) > 0.5, *y);
        }
        let mut again = LogisticSegmenter::with_seed(1);
        again.fit(&examples);
        assert_eq!(again.model, seg.model);
    }
}
