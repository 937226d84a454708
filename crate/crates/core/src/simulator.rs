//! Synthetic prescriptions: medicine lines among distractor observations,
//! each text unit carrying a box, line features and CTC-style logits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{LogitError, LogitMatrix};
use crate::geometry::RotatedBox;
use crate::grammar::{sample_line_with, GrammarSpec, MedicineVocabulary};
use crate::seed::derive_seed;

/// Characters the simulated encoder can emit, after the blank.
pub const DEFAULT_CHARSET: &str = " abcdefghijklmnopqrstuvwxyz0123456789-.,()*/:;%+'";
pub const BLANK_SYMBOL: &str = "<b>";
pub const FEATURE_NAMES: [&str; 5] = ["has_enum", "has_type", "token_count", "digit_frac", "indent"];

const WRITER_STREAM: u64 = 0x5752_4954_4552;
const SPLIT_STREAM: u64 = 0x5350_4c49_54;

pub fn default_alphabet() -> Arc<Vec<String>> {
    let mut v = vec![BLANK_SYMBOL.to_string()];
    v.extend(DEFAULT_CHARSET.chars().map(String::from));
    Arc::new(v)
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("character {ch:?} of {text:?} is not in the alphabet")]
    OutOfAlphabet { ch: char, text: String },
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("medicine vocabulary is empty")]
    EmptyVocabulary,
    #[error("distractor corpus is empty")]
    EmptyCorpus,
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Logit(#[from] LogitError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionPair {
    pub from: char,
    pub to: char,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_docs: usize,
    /// Poisson mean of medicine lines per document, clamped to at least one.
    pub medicines_per_doc: f64,
    /// Distractor lines per document, uniform in `[min, max]`.
    pub distractors_min: usize,
    pub distractors_max: usize,
    pub writers: usize,
    pub noise_sigma: f64,
    pub target_logit: f64,
    pub frames_per_char: usize,
    pub confusion_pairs: Vec<ConfusionPair>,
    /// How many of `confusion_pairs` each writer draws.
    pub confusions_per_writer: usize,
    /// Writer noise multiplier is uniform in `[1 - spread, 1 + spread]`.
    pub writer_noise_spread: f64,
    pub train_fraction: f64,
    pub line_height: f64,
    pub line_gap: f64,
    pub char_width: f64,
    /// Rotation of each unit is uniform in `[-jitter, jitter]` radians.
    pub rotation_jitter: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let pair = |from, to, strength| ConfusionPair { from, to, strength };
        SimConfig {
            n_docs: 1000,
            medicines_per_doc: 4.5,
            distractors_min: 1,
            distractors_max: 4,
            writers: 117,
            noise_sigma: 1.8,
            target_logit: 4.0,
            frames_per_char: 2,
            confusion_pairs: vec![
                pair('o', '0', 0.6),
                pair('i', 'l', 0.6),
                pair('l', 'i', 0.5),
                pair('a', 'o', 0.5),
                pair('e', 'c', 0.5),
                pair('n', 'm', 0.5),
                pair('u', 'v', 0.5),
                pair('r', 'n', 0.4),
                pair('t', 'f', 0.4),
                pair('s', '5', 0.4),
            ],
            confusions_per_writer: 3,
            writer_noise_spread: 0.25,
            train_fraction: 0.8,
            line_height: 40.0,
            line_gap: 12.0,
            char_width: 14.0,
            rotation_jitter: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.frames_per_char < 2 {
            return bad(format!("frames_per_char must be at least 2, got {}", self.frames_per_char));
        }
        if self.writers < 1 {
            return bad("need at least one writer".into());
        }
        if !(self.medicines_per_doc > 0.0 && self.medicines_per_doc.is_finite()) {
            return bad(format!("medicines_per_doc must be positive, got {}", self.medicines_per_doc));
        }
        if self.distractors_min > self.distractors_max {
            return bad("distractors_min exceeds distractors_max".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad(format!("train_fraction {} outside [0, 1]", self.train_fraction));
        }
        if !(0.0..1.0).contains(&self.writer_noise_spread) {
            return bad("writer_noise_spread must be in [0, 1)".into());
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.rotation_jitter) {
            return bad("rotation_jitter must be in [0, pi/2)".into());
        }
        if self.line_height <= 0.0 || self.char_width <= 0.0 || self.line_gap < 0.0 {
            return bad("layout sizes must be positive".into());
        }
        let (n_train, n_test) = self.split_sizes();
        if n_train > 0 && n_test > 0 && self.writers < 2 {
            return bad("a writer-disjoint split needs at least two writers".into());
        }
        Ok(())
    }

    /// Number of train and test documents.
    pub fn split_sizes(&self) -> (usize, usize) {
        let n_train = (self.train_fraction * self.n_docs as f64).round() as usize;
        (n_train, self.n_docs - n_train)
    }

    /// The same config with noise and confusions removed.
    pub fn noiseless(&self) -> SimConfig {
        SimConfig {
            noise_sigma: 0.0,
            confusion_pairs: Vec::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriterProfile {
    pub writer_id: usize,
    pub confusions: Vec<ConfusionPair>,
    pub noise_scale: f64,
    pub indent: f64,
    /// Extra indent of medicine lines.
    pub medicine_indent: f64,
}

impl WriterProfile {
    pub fn new(cfg: &SimConfig, writer_id: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ WRITER_STREAM, writer_id as u64));
        let take = cfg.confusions_per_writer.min(cfg.confusion_pairs.len());
        let confusions = cfg.confusion_pairs.choose_multiple(&mut rng, take).copied().collect();
        let spread = cfg.writer_noise_spread;
        let noise_scale = if spread > 0.0 {
            rng.random_range(1.0 - spread..=1.0 + spread)
        } else {
            1.0
        };
        WriterProfile {
            writer_id,
            confusions,
            noise_scale,
            indent: rng.random_range(20.0..120.0),
            medicine_indent: rng.random_range(20.0..60.0),
        }
    }

    /// A writer that adds no confusions and no noise scaling.
    pub fn clean(writer_id: usize) -> Self {
        WriterProfile {
            writer_id,
            confusions: Vec::new(),
            noise_scale: 1.0,
            indent: 40.0,
            medicine_indent: 0.0,
        }
    }
}

/// Symbol index of every character in `alphabet` (index 0 is the blank).
pub fn alphabet_index(alphabet: &[String]) -> HashMap<char, usize> {
    alphabet
        .iter()
        .enumerate()
        .skip(1)
        .filter_map(|(i, s)| s.chars().next().map(|c| (c, i)))
        .collect()
}

/// Frames for `text`: a blank frame, then per character `frames_per_char`
/// frames favoring it followed by a blank frame.
pub fn emit_logits<R: Rng + ?Sized>(
    text: &str,
    writer: &WriterProfile,
    cfg: &SimConfig,
    alphabet: &Arc<Vec<String>>,
    rng: &mut R,
) -> Result<LogitMatrix, SimError> {
    let index = alphabet_index(alphabet);
    let ids = text
        .chars()
        .map(|c| {
            index.get(&c).copied().ok_or_else(|| SimError::OutOfAlphabet {
                ch: c,
                text: text.to_string(),
            })
        })
        .collect::<Result<Vec<usize>, SimError>>()?;
    let confusions: Vec<(usize, usize, f64)> = writer
        .confusions
        .iter()
        .filter_map(|p| Some((*index.get(&p.from)?, *index.get(&p.to)?, p.strength)))
        .collect();
    let a = alphabet.len();
    let mu = cfg.target_logit as f32;
    let sigma = cfg.noise_sigma * writer.noise_scale;
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| SimError::Config(e.to_string()))?;
    let frames = 1 + ids.len() * (cfg.frames_per_char + 1);
    let mut data = vec![0f32; frames * a];
    let mut t = 0;
    let frame = |target: usize, data: &mut [f32], t: &mut usize| {
        let row = &mut data[*t * a..(*t + 1) * a];
        row[target] = mu;
        for &(from, to, strength) in &confusions {
            if from == target {
                row[to] += (strength as f32) * mu;
            }
        }
        *t += 1;
    };
    frame(0, &mut data, &mut t);
    for &id in &ids {
        for _ in 0..cfg.frames_per_char {
            frame(id, &mut data, &mut t);
        }
        frame(0, &mut data, &mut t);
    }
    if sigma > 0.0 {
        for v in data.iter_mut() {
            *v += noise.sample(rng) as f32;
        }
    }
    Ok(LogitMatrix::new(alphabet.clone(), frames, data)?)
}

const ONSETS: [&str; 24] = [
    "b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cl", "fl", "gl", "pr", "st", "tr",
    "x", "k", "h",
];
const VOWELS: [&str; 7] = ["a", "e", "i", "o", "u", "y", "ai"];
const CODAS: [&str; 10] = ["", "", "", "n", "l", "r", "x", "m", "s", "t"];
const KINDS: [&str; 5] = ["tab", "cap", "inj", "syp", "oint"];

/// `base` plus `extra` pronounceable pseudo-names (2 to 4 syllables) with
/// random kinds, standing in for a large commercial vocabulary.
pub fn synthetic_vocabulary(base: &MedicineVocabulary, extra: usize, seed: u64) -> MedicineVocabulary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = base.entries().to_vec();
    let mut seen: HashSet<String> = entries.iter().map(|e| e.name.clone()).collect();
    let mut added = 0;
    while added < extra {
        let syllables = rng.random_range(2..=4);
        let mut name = String::new();
        for _ in 0..syllables {
            name.push_str(ONSETS.choose(&mut rng).expect("non-empty"));
            name.push_str(VOWELS.choose(&mut rng).expect("non-empty"));
        }
        name.push_str(CODAS.choose(&mut rng).expect("non-empty"));
        if seen.insert(name.clone()) {
            let kind = KINDS.choose(&mut rng).expect("non-empty");
            entries.push(crate::grammar::MedicineEntry::new(&name, kind));
            added += 1;
        }
    }
    MedicineVocabulary::new(entries).expect("names are unique")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimUnit {
    pub bbox: RotatedBox,
    pub truth_text: String,
    pub is_medicine: bool,
    pub medicine: Option<String>,
    pub features: [f64; 5],
    pub logits: LogitMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDocument {
    pub doc_id: usize,
    pub writer_id: usize,
    pub units: Vec<SimUnit>,
    pub weak_labels: BTreeSet<String>,
}

impl SimDocument {
    pub fn medicine_boxes(&self) -> Vec<RotatedBox> {
        self.units.iter().filter(|u| u.is_medicine).map(|u| u.bbox).collect()
    }

    /// Weak labels equal the names on the medicine units.
    pub fn check_consistency(&self) -> Result<(), String> {
        let from_units: BTreeSet<String> = self.units.iter().filter_map(|u| u.medicine.clone()).collect();
        if from_units != self.weak_labels {
            return Err(format!("doc {}: weak labels differ from unit names", self.doc_id));
        }
        if self.units.iter().any(|u| u.is_medicine != u.medicine.is_some()) {
            return Err(format!("doc {}: medicine flag without a name", self.doc_id));
        }
        Ok(())
    }
}

/// Visual cue features of a line (see [`FEATURE_NAMES`]). `indent` is the
/// line's offset from the leftmost line of its document.
pub fn line_features(text: &str, indent: f64, enum_tokens: &HashSet<String>, type_tokens: &HashSet<String>) -> [f64; 5] {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let has_enum = tokens.first().is_some_and(|t| enum_tokens.contains(*t));
    let has_type = tokens.iter().any(|t| type_tokens.contains(*t));
    let chars = text.chars().filter(|c| !c.is_whitespace()).count().max(1);
    let digits = text.chars().filter(|c| c.is_ascii_digit()).count();
    [
        has_enum as u8 as f64,
        has_type as u8 as f64,
        tokens.len() as f64,
        digits as f64 / chars as f64,
        indent / 100.0,
    ]
}

struct Generator<'a> {
    cfg: &'a SimConfig,
    vocab: &'a MedicineVocabulary,
    grammar: &'a GrammarSpec,
    distractors: Vec<String>,
    alphabet: Arc<Vec<String>>,
    enum_tokens: HashSet<String>,
    type_tokens: HashSet<String>,
    writers: Vec<WriterProfile>,
}

impl Generator<'_> {
    fn doc(&self, doc_id: usize, writer_id: usize) -> Result<SimDocument, SimError> {
        let cfg = self.cfg;
        let writer = &self.writers[writer_id];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, doc_id as u64));
        let drawn = Poisson::new(cfg.medicines_per_doc)
            .map_err(|e| SimError::Config(e.to_string()))?
            .sample(&mut rng) as usize;
        let n_med = drawn.clamp(1, self.vocab.len());
        let entries: Vec<_> = self.vocab.entries().choose_multiple(&mut rng, n_med).cloned().collect();
        let n_dis = rng.random_range(cfg.distractors_min..=cfg.distractors_max);
        let mut lines: Vec<(String, Option<String>)> = entries
            .iter()
            .map(|e| (sample_line_with(self.grammar, e, &mut rng), Some(e.name.clone())))
            .collect();
        for _ in 0..n_dis {
            let line = self.distractors.choose(&mut rng).expect("non-empty corpus");
            lines.push((line.clone(), None));
        }
        lines.shuffle(&mut rng);
        let mut units = Vec::with_capacity(lines.len());
        for (i, (text, medicine)) in lines.into_iter().enumerate() {
            let is_medicine = medicine.is_some();
            let left = writer.indent + if is_medicine { writer.medicine_indent } else { 0.0 } + rng.random_range(0.0..8.0);
            let top = 50.0 + i as f64 * (cfg.line_height + cfg.line_gap);
            let width = cfg.char_width * text.chars().count().max(1) as f64;
            let rotation = if cfg.rotation_jitter > 0.0 {
                rng.random_range(-cfg.rotation_jitter..=cfg.rotation_jitter)
            } else {
                0.0
            };
            let bbox = RotatedBox::new(top, left, cfg.line_height, width, rotation)
                .map_err(|e| SimError::Config(e.to_string()))?;
            // indent filled in once the whole page is laid out
            let features = line_features(&text, 0.0, &self.enum_tokens, &self.type_tokens);
            let logits = emit_logits(&text, writer, cfg, &self.alphabet, &mut rng)?;
            units.push(SimUnit {
                bbox,
                truth_text: text,
                is_medicine,
                medicine,
                features,
                logits,
            });
        }
        let min_left = units.iter().map(|u| u.bbox.left).fold(f64::INFINITY, f64::min);
        for u in &mut units {
            u.features[4] = (u.bbox.left - min_left) / 100.0;
        }
        let weak_labels = entries.into_iter().map(|e| e.name).collect();
        let doc = SimDocument {
            doc_id,
            writer_id,
            units,
            weak_labels,
        };
        debug_assert!(doc.check_consistency().is_ok());
        Ok(doc)
    }
}

/// Generates `(train, test)` documents with a writer-disjoint split.
/// Document `i` draws from its own stream `derive_seed(seed, i)`.
pub fn gen_dataset(
    cfg: &SimConfig,
    vocab: &MedicineVocabulary,
    grammar: &GrammarSpec,
    distractors: &[String],
) -> Result<(Vec<SimDocument>, Vec<SimDocument>), SimError> {
    gen_dataset_with_alphabet(cfg, vocab, grammar, distractors, default_alphabet())
}

pub fn gen_dataset_with_alphabet(
    cfg: &SimConfig,
    vocab: &MedicineVocabulary,
    grammar: &GrammarSpec,
    distractors: &[String],
    alphabet: Arc<Vec<String>>,
) -> Result<(Vec<SimDocument>, Vec<SimDocument>), SimError> {
    cfg.validate()?;
    if vocab.is_empty() {
        return Err(SimError::EmptyVocabulary);
    }
    let distractors: Vec<String> = distractors
        .iter()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect();
    if distractors.is_empty() && cfg.distractors_max > 0 {
        return Err(SimError::EmptyCorpus);
    }
    let mut type_tokens: HashSet<String> = grammar.type_tokens.values().flatten().cloned().collect();
    type_tokens.extend(vocab.entries().iter().map(|e| e.kind.clone()));
    let generator = Generator {
        cfg,
        vocab,
        grammar,
        distractors,
        alphabet,
        enum_tokens: grammar.enum_tokens.iter().cloned().collect(),
        type_tokens,
        writers: (0..cfg.writers).map(|w| WriterProfile::new(cfg, w)).collect(),
    };

    let (n_train, n_test) = cfg.split_sizes();
    let mut writer_ids: Vec<usize> = (0..cfg.writers).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SPLIT_STREAM));
    writer_ids.shuffle(&mut split_rng);
    let n_train_writers = match (n_train, n_test) {
        (0, _) => 0,
        (_, 0) => cfg.writers,
        _ => ((cfg.train_fraction * cfg.writers as f64).round() as usize).clamp(1, cfg.writers - 1),
    };
    let (train_writers, test_writers) = writer_ids.split_at(n_train_writers);

    let assign = |doc_id: usize| -> usize {
        let pool = if doc_id < n_train { train_writers } else { test_writers };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ SPLIT_STREAM, doc_id as u64));
        pool[rng.random_range(0..pool.len())]
    };
    let docs = (0..cfg.n_docs)
        .into_par_iter()
        .map(|i| generator.doc(i, assign(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut docs = docs;
    let test = docs.split_off(n_train);
    Ok((docs, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub docs: usize,
    pub writers: usize,
    pub units: usize,
    pub medicine_units: usize,
    pub distinct_medicines: usize,
    pub mean_medicines_per_doc: f64,
    pub mean_units_per_doc: f64,
    pub mean_chars_per_line: f64,
}

impl DatasetStats {
    pub fn of(docs: &[SimDocument]) -> DatasetStats {
        let units: usize = docs.iter().map(|d| d.units.len()).sum();
        let medicine_units: usize = docs.iter().map(|d| d.weak_labels.len()).sum();
        let chars: usize = docs.iter().flat_map(|d| &d.units).map(|u| u.truth_text.chars().count()).sum();
        let writers: BTreeSet<usize> = docs.iter().map(|d| d.writer_id).collect();
        let names: BTreeSet<&String> = docs.iter().flat_map(|d| &d.weak_labels).collect();
        let n = docs.len().max(1) as f64;
        DatasetStats {
            docs: docs.len(),
            writers: writers.len(),
            units,
            medicine_units,
            distinct_medicines: names.len(),
            mean_medicines_per_doc: medicine_units as f64 / n,
            mean_units_per_doc: units as f64 / n,
            mean_chars_per_line: chars as f64 / units.max(1) as f64,
        }
    }

    pub fn to_table(rows: &[(&str, DatasetStats)]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>8} {:>7} {:>10} {:>10} {:>9} {:>10} {:>9}",
            "split", "docs", "writers", "units", "medicines", "distinct", "med/doc", "units/doc", "chars/ln"
        );
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>8} {:>7} {:>10} {:>10} {:>9.3} {:>10.3} {:>9.2}",
                name,
                s.docs,
                s.writers,
                s.units,
                s.medicine_units,
                s.distinct_medicines,
                s.mean_medicines_per_doc,
                s.mean_units_per_doc,
                s.mean_chars_per_line
            );
        }
        out
    }
}

/// How logits are stored in a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitStorage {
    /// Base64 LGT1 bytes inside the JSONL record.
    #[default]
    Inline,
    /// One `.lgt1` file per unit next to the JSONL file.
    Sidecar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum LogitRef {
    Inline { lgt1_base64: String },
    Sidecar { lgt1_path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UnitRecord {
    #[serde(rename = "box")]
    bbox: RotatedBox,
    text: String,
    is_medicine: bool,
    medicine: Option<String>,
    features: [f64; 5],
    logits: LogitRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DocRecord {
    doc_id: usize,
    writer_id: usize,
    weak_labels: BTreeSet<String>,
    units: Vec<UnitRecord>,
}

/// Writes one JSON document per line. Sidecar logits go to
/// `<stem>_logits/<doc>_<unit>.lgt1` beside `path`.
pub fn write_dataset(docs: &[SimDocument], path: impl AsRef<Path>, storage: LogitStorage) -> Result<(), SimError> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    let sidecar_name = format!("{stem}_logits");
    if storage == LogitStorage::Sidecar {
        fs::create_dir_all(dir.join(&sidecar_name))?;
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    for doc in docs {
        let mut units = Vec::with_capacity(doc.units.len());
        for (j, u) in doc.units.iter().enumerate() {
            let logits = match storage {
                LogitStorage::Inline => LogitRef::Inline {
                    lgt1_base64: B64.encode(u.logits.to_lgt1()),
                },
                LogitStorage::Sidecar => {
                    let rel = format!("{sidecar_name}/{:06}_{:03}.lgt1", doc.doc_id, j);
                    u.logits.write_lgt1(dir.join(&rel))?;
                    LogitRef::Sidecar { lgt1_path: rel }
                }
            };
            units.push(UnitRecord {
                bbox: u.bbox,
                text: u.truth_text.clone(),
                is_medicine: u.is_medicine,
                medicine: u.medicine.clone(),
                features: u.features,
                logits,
            });
        }
        let record = DocRecord {
            doc_id: doc.doc_id,
            writer_id: doc.writer_id,
            weak_labels: doc.weak_labels.clone(),
            units,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<SimDocument>, SimError> {
    let path = path.as_ref();
    let dir: PathBuf = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| SimError::Parse { line: i + 1, message };
        let record: DocRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let mut units = Vec::with_capacity(record.units.len());
        for u in record.units {
            let logits = match &u.logits {
                LogitRef::Inline { lgt1_base64 } => {
                    let bytes = B64.decode(lgt1_base64).map_err(|e| parse_err(e.to_string()))?;
                    LogitMatrix::from_lgt1(&bytes)
                }
                LogitRef::Sidecar { lgt1_path } => LogitMatrix::read_lgt1(dir.join(lgt1_path)),
            }
            .map_err(|e| parse_err(e.to_string()))?;
            u.bbox.validate().map_err(|e| parse_err(e.to_string()))?;
            units.push(SimUnit {
                bbox: u.bbox,
                truth_text: u.text,
                is_medicine: u.is_medicine,
                medicine: u.medicine,
                features: u.features,
                logits,
            });
        }
        let doc = SimDocument {
            doc_id: record.doc_id,
            writer_id: record.writer_id,
            units,
            weak_labels: record.weak_labels,
        };
        doc.check_consistency().map_err(parse_err)?;
        docs.push(doc);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::greedy_decode;
    use crate::grammar::MedicineEntry;

    fn vocab() -> MedicineVocabulary {
        MedicineVocabulary::new(
            ["dolo", "folvite", "pantop", "azithral", "calpol", "zincovit", "b complex"]
                .iter()
                .map(|n| MedicineEntry::new(n, "tab")),
        )
        .unwrap()
    }

    fn distractors() -> Vec<String> {
        vec!["patient complains of fever".into(), "bp 120/80".into(), "review after 5 days".into()]
    }

    #[test]
    fn zero_noise_is_recoverable() {
        let cfg = SimConfig::default().noiseless();
        let alphabet = default_alphabet();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for text in ["dolo", "tab dolo 500mg", "1) cap. b complex 1-0-1", "", "aa  ll"] {
            let m = emit_logits(text, &WriterProfile::clean(0), &cfg, &alphabet, &mut rng).unwrap();
            assert_eq!(m.frames(), 1 + 3 * text.chars().count());
            assert_eq!(greedy_decode(&m), text);
        }
    }

    #[test]
    fn confusion_ties_follow_argmax() {
        let cfg = SimConfig::default().noiseless();
        let writer = WriterProfile {
            confusions: vec![ConfusionPair {
                from: 'o',
                to: '0',
                strength: 1.0,
            }],
            ..WriterProfile::clean(0)
        };
        let m = emit_logits("dolo", &writer, &cfg, &default_alphabet(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = greedy_decode(&m);
        assert!(["dolo", "d0l0", "d0lo", "dol0"].contains(&g.as_str()), "{g}");
    }

    #[test]
    fn out_of_alphabet_is_reported() {
        let cfg = SimConfig::default();
        let err = emit_logits("dolo!", &WriterProfile::clean(0), &cfg, &default_alphabet(), &mut ChaCha8Rng::seed_from_u64(0));
        match err {
            Err(SimError::OutOfAlphabet { ch, .. }) => assert_eq!(ch, '!'),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn medicine_only_documents() {
        let cfg = SimConfig {
            n_docs: 30,
            medicines_per_doc: 1e-9,
            distractors_min: 0,
            distractors_max: 0,
            writers: 5,
            ..SimConfig::default()
        };
        let (train, test) = gen_dataset(&cfg, &vocab(), &GrammarSpec::default(), &[]).unwrap();
        assert_eq!((train.len(), test.len()), (24, 6));
        for d in train.iter().chain(&test) {
            assert_eq!(d.units.len(), 1);
            assert!(d.units[0].is_medicine);
            assert_eq!(d.weak_labels.len(), 1);
            assert_eq!(d.units[0].medicine.as_ref(), d.weak_labels.iter().next());
        }
    }

    #[test]
    fn split_is_writer_disjoint_and_deterministic() {
        let cfg = SimConfig {
            n_docs: 60,
            writers: 10,
            seed: 3,
            ..SimConfig::default()
        };
        let (train, test) = gen_dataset(&cfg, &vocab(), &GrammarSpec::default(), &distractors()).unwrap();
        let tw: BTreeSet<_> = train.iter().map(|d| d.writer_id).collect();
        let sw: BTreeSet<_> = test.iter().map(|d| d.writer_id).collect();
        assert!(tw.is_disjoint(&sw));
        for d in train.iter().chain(&test) {
            d.check_consistency().unwrap();
            let boxes = d.units.iter().map(|u| u.bbox).collect::<Vec<_>>();
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    assert_eq!(crate::geometry::box_iou(&boxes[i], &boxes[j]), 0.0);
                }
            }
        }
        let (train2, test2) = gen_dataset(&cfg, &vocab(), &GrammarSpec::default(), &distractors()).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn dataset_file_round_trip() {
        let cfg = SimConfig {
            n_docs: 6,
            writers: 3,
            ..SimConfig::default()
        };
        let (train, _) = gen_dataset(&cfg, &vocab(), &GrammarSpec::default(), &distractors()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for storage in [LogitStorage::Inline, LogitStorage::Sidecar] {
            let path = dir.path().join(format!("train_{storage:?}.jsonl"));
            write_dataset(&train, &path, storage).unwrap();
            assert_eq!(read_dataset(&path).unwrap(), train);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig {
            frames_per_char: 1,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            writers: 1,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig::default().validate().is_ok());
    }
}
