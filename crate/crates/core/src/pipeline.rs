//! End-to-end experiment plumbing shared by the CLI and the test suites.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{decode_topk, DecodedPath, DecoderConfig, SymbolPruning};
use crate::geometry::box_iou;
use crate::grammar::{build_corpus, CorpusMode, GrammarError, GrammarSpec, MedicineVocabulary};
use crate::lm::{train_ngram, LmError, NGramModel, DEFAULT_DISCOUNT};
use crate::matcher::{match_line, MatchStrategy};
use crate::metrics::{jaccard_metrics, ExtractionReport, MetricsError};
use crate::seed::derive_seed;
use crate::simulator::{gen_dataset, synthetic_vocabulary, LogitStorage, SimConfig, SimDocument, SimError};
use crate::weaklabel::{
    iterate, IdentitySegmenter, IterationConfig, IterationOutcome, LogisticSegmenter, OracleSegmenter, Segmenter,
    WeakLabelError,
};

pub const BUNDLED_VOCAB: &str = include_str!("../data/medicines.tsv");
pub const BUNDLED_GRAMMAR: &str = include_str!("../data/grammar.json");
pub const BUNDLED_DISTRACTORS: &str = include_str!("../data/distractors.txt");
pub const BUNDLED_VANILLA_CORPUS: &str = include_str!("../data/english.txt");

const LM_CORPUS_STREAM: u64 = 0x4c4d;
const SEGMENTER_STREAM: u64 = 0x5345_47;
const VOCAB_STREAM: u64 = 0x564f_4341_42;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

impl PipelineError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
        }
    }
}

impl From<LmError> for PipelineError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::InvalidOrder(_) | LmError::InvalidDiscount(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<GrammarError> for PipelineError {
    fn from(e: GrammarError) -> Self {
        match e {
            GrammarError::Io(_) | GrammarError::Vocabulary { .. } | GrammarError::DuplicateName(_) => {
                PipelineError::Data(e.to_string())
            }
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<SimError> for PipelineError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<WeakLabelError> for PipelineError {
    fn from(e: WeakLabelError) -> Self {
        match e {
            WeakLabelError::Config(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Input files; `None` selects the bundled resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub vocab: Option<PathBuf>,
    pub grammar: Option<PathBuf>,
    pub distractors: Option<PathBuf>,
    pub vanilla_corpus: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            vocab: None,
            grammar: None,
            distractors: None,
            vanilla_corpus: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmTrainConfig {
    pub order: usize,
    pub discount: f64,
    pub corpus: CorpusMode,
    /// Lines per vocabulary entry in sampled mode.
    pub samples_per_entry: usize,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            order: 7,
            discount: DEFAULT_DISCOUNT,
            corpus: CorpusMode::Exhaustive,
            samples_per_entry: 200,
        }
    }
}

/// Decoder settings for one LM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub alpha: f64,
    pub k: usize,
    /// Defaults to `max(k, 16)`.
    pub beam_width: Option<usize>,
    pub pruning: SymbolPruning,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            alpha: 1.0,
            k: 1,
            beam_width: None,
            pruning: SymbolPruning::default(),
        }
    }
}

impl FusionConfig {
    pub fn decoder(&self, lm: Option<Arc<NGramModel>>) -> DecoderConfig {
        let mut cfg = DecoderConfig::new(self.k).with_pruning(self.pruning);
        if let Some(b) = self.beam_width {
            cfg = cfg.with_beam(b.max(self.k));
        }
        match lm {
            Some(lm) => cfg.with_lm(lm, self.alpha),
            None => cfg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmChoice {
    None,
    Vanilla,
    Medicine,
}

impl FromStr for LmChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(LmChoice::None),
            "vanilla" => Ok(LmChoice::Vanilla),
            "medicine" => Ok(LmChoice::Medicine),
            _ => Err(format!("unknown LM {s:?} (expected none, vanilla or medicine)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractMode {
    FullPage,
    Segmented,
}

impl FromStr for ExtractMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full_page" | "full-page" => Ok(ExtractMode::FullPage),
            "segmented" => Ok(ExtractMode::Segmented),
            _ => Err(format!("unknown mode {s:?} (expected full_page or segmented)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterChoice {
    Oracle,
    Reference,
    Identity,
}

impl FromStr for SegmenterChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "oracle" => Ok(SegmenterChoice::Oracle),
            "reference" => Ok(SegmenterChoice::Reference),
            "identity" => Ok(SegmenterChoice::Identity),
            _ => Err(format!("unknown segmenter {s:?} (expected oracle, reference or identity)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub iteration: IterationConfig,
    /// LM fused into the OCR labeling decoder; `k` always comes from `iteration.k_label`.
    pub lm: LmChoice,
    pub decoder: FusionConfig,
    pub segmenter: SegmenterChoice,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            iteration: IterationConfig::default(),
            lm: LmChoice::Vanilla,
            decoder: FusionConfig {
                alpha: 0.2,
                k: 1,
                beam_width: None,
                pruning: SymbolPruning {
                    max_symbols: Some(8),
                    min_log_prob: None,
                },
            },
            segmenter: SegmenterChoice::Reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub mode: ExtractMode,
    pub lm: LmChoice,
    pub segmenter: SegmenterChoice,
    pub strategy: MatchStrategy,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            mode: ExtractMode::Segmented,
            lm: LmChoice::Medicine,
            segmenter: SegmenterChoice::Reference,
            strategy: MatchStrategy::Top1Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub alpha: Vec<f64>,
    pub ngram: Vec<usize>,
    pub paths: Vec<usize>,
    pub vocab_fraction: Vec<f64>,
    /// Strategy used on the paths axis.
    pub paths_strategy: MatchStrategy,
    /// Decoding depth shared by all strategies on the strategy axis.
    pub strategy_k: usize,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            alpha: vec![0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0],
            ngram: vec![3, 5, 7, 9],
            paths: vec![1, 10, 100, 1000],
            vocab_fraction: vec![0.25, 0.5, 0.75, 1.0],
            paths_strategy: MatchStrategy::TopKMajority,
            strategy_k: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    /// Pseudo-names added to the vocabulary before anything else runs.
    pub synthetic_names: usize,
    pub sim: SimConfig,
    pub logit_storage: LogitStorage,
    pub lm: LmTrainConfig,
    pub vanilla: FusionConfig,
    pub medicine: FusionConfig,
    pub label: LabelConfig,
    pub extract: ExtractConfig,
    pub ablation: AblationGrid,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: PathsConfig::default(),
            synthetic_names: 2000,
            sim: SimConfig::default(),
            logit_storage: LogitStorage::Inline,
            lm: LmTrainConfig::default(),
            vanilla: FusionConfig {
                alpha: 0.2,
                ..FusionConfig::default()
            },
            medicine: FusionConfig::default(),
            label: LabelConfig::default(),
            extract: ExtractConfig::default(),
            ablation: AblationGrid::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Sets the master seed; the simulator inherits it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sim.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(PipelineError::Config(m));
        self.sim.validate()?;
        self.label.iteration.validate()?;
        if self.lm.order < 1 {
            return cfg_err("lm.order must be at least 1".into());
        }
        for (name, f) in [("vanilla", &self.vanilla), ("medicine", &self.medicine), ("label", &self.label.decoder)] {
            f.decoder(None).validate().map_err(|e| PipelineError::Config(format!("{name}: {e}")))?;
            if !(f.alpha >= 0.0 && f.alpha.is_finite()) {
                return cfg_err(format!("{name}: alpha must be finite and non-negative"));
            }
        }
        self.extract.strategy.validate().map_err(PipelineError::Config)?;
        for p in [&self.paths.vocab, &self.paths.grammar, &self.paths.distractors, &self.paths.vanilla_corpus]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return cfg_err(format!("referenced file {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

/// Vocabulary, grammar and corpora of an experiment.
#[derive(Debug, Clone)]
pub struct Resources {
    pub vocab: MedicineVocabulary,
    /// Grammar whose entries are the vocabulary.
    pub grammar: GrammarSpec,
    pub distractors: Vec<String>,
    pub vanilla_corpus: Vec<String>,
}

fn text_lines(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

fn read_or(path: &Option<PathBuf>, bundled: &str) -> Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| PipelineError::Data(format!("{}: {e}", p.display()))),
        None => Ok(bundled.to_string()),
    }
}

impl Resources {
    pub fn bundled() -> Resources {
        Self::load(&PathsConfig::default()).expect("bundled resources are valid")
    }

    pub fn load(paths: &PathsConfig) -> Result<Resources> {
        let vocab = MedicineVocabulary::from_tsv(&read_or(&paths.vocab, BUNDLED_VOCAB)?)?;
        let grammar = GrammarSpec::from_json(&read_or(&paths.grammar, BUNDLED_GRAMMAR)?)?;
        let grammar = if grammar.entries.is_empty() {
            grammar.with_entries(vocab.entries().to_vec())
        } else {
            grammar
        };
        let distractors = text_lines(&read_or(&paths.distractors, BUNDLED_DISTRACTORS)?);
        let vanilla_corpus = text_lines(&read_or(&paths.vanilla_corpus, BUNDLED_VANILLA_CORPUS)?);
        Ok(Resources {
            vocab,
            grammar,
            distractors,
            vanilla_corpus,
        })
    }
}

/// A config bound to its resources.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: PipelineConfig,
    pub res: Resources,
}

impl Experiment {
    pub fn new(cfg: PipelineConfig) -> Result<Experiment> {
        cfg.validate()?;
        let res = Resources::load(&cfg.paths)?;
        Self::with_resources(cfg, res)
    }

    /// Binds `res`, adding the configured synthetic names to its vocabulary and grammar.
    pub fn with_resources(cfg: PipelineConfig, mut res: Resources) -> Result<Experiment> {
        cfg.validate()?;
        if cfg.synthetic_names > 0 {
            res.vocab = synthetic_vocabulary(&res.vocab, cfg.synthetic_names, derive_seed(cfg.seed, VOCAB_STREAM));
            res.grammar = res.grammar.with_entries(res.vocab.entries().to_vec());
        }
        Ok(Experiment { cfg, res })
    }

    pub fn generate(&self) -> Result<(Vec<SimDocument>, Vec<SimDocument>)> {
        Ok(gen_dataset(&self.cfg.sim, &self.res.vocab, &self.res.grammar, &self.res.distractors)?)
    }

    /// Grammar corpus over the first `vocab_fraction` of the entries.
    pub fn medicine_corpus(&self, vocab_fraction: f64) -> Result<Vec<String>> {
        let spec = self.res.grammar.with_vocab_fraction(vocab_fraction);
        let lm = &self.cfg.lm;
        Ok(build_corpus(
            &spec,
            lm.corpus,
            lm.samples_per_entry,
            derive_seed(self.cfg.seed, LM_CORPUS_STREAM),
        )?)
    }

    pub fn medicine_lm(&self, order: usize, vocab_fraction: f64) -> Result<NGramModel> {
        Ok(train_ngram(&self.medicine_corpus(vocab_fraction)?, order, self.cfg.lm.discount)?)
    }

    pub fn vanilla_lm(&self, order: usize) -> Result<NGramModel> {
        Ok(train_ngram(&self.res.vanilla_corpus, order, self.cfg.lm.discount)?)
    }

    /// Both LMs at the configured order.
    pub fn lms(&self) -> Result<LanguageModels> {
        Ok(LanguageModels {
            vanilla: Arc::new(self.vanilla_lm(self.cfg.lm.order)?),
            medicine: Arc::new(self.medicine_lm(self.cfg.lm.order, 1.0)?),
        })
    }

    pub fn segmenter_factory(&self, choice: SegmenterChoice) -> impl Fn() -> Box<dyn Segmenter> + Sync {
        let seed = derive_seed(self.cfg.seed, SEGMENTER_STREAM);
        move || -> Box<dyn Segmenter> {
            match choice {
                SegmenterChoice::Oracle => Box::new(OracleSegmenter),
                SegmenterChoice::Identity => Box::new(IdentitySegmenter),
                SegmenterChoice::Reference => Box::new(LogisticSegmenter::with_seed(seed)),
            }
        }
    }

    /// Runs the labeling iterations on `docs`.
    pub fn label(&self, docs: &[SimDocument], lms: &LanguageModels) -> Result<IterationOutcome> {
        let label = &self.cfg.label;
        let fusion = FusionConfig {
            k: label.iteration.k_label,
            ..label.decoder.clone()
        };
        let decoder = fusion.decoder(lms.get(label.lm));
        let factory = self.segmenter_factory(label.segmenter);
        Ok(iterate(docs, &factory, &label.iteration, &decoder)?)
    }

    pub fn fusion(&self, lm: LmChoice) -> &FusionConfig {
        match lm {
            LmChoice::Vanilla => &self.cfg.vanilla,
            _ => &self.cfg.medicine,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanguageModels {
    pub vanilla: Arc<NGramModel>,
    pub medicine: Arc<NGramModel>,
}

impl LanguageModels {
    pub fn get(&self, choice: LmChoice) -> Option<Arc<NGramModel>> {
        match choice {
            LmChoice::None => None,
            LmChoice::Vanilla => Some(self.vanilla.clone()),
            LmChoice::Medicine => Some(self.medicine.clone()),
        }
    }
}

/// Per document, per unit: whether the unit overlaps a predicted box by more than `iou`.
pub fn select_units(docs: &[SimDocument], segmenter: &dyn Segmenter, iou: f64) -> Vec<Vec<bool>> {
    docs.par_iter()
        .map(|d| {
            let boxes = segmenter.predict(d);
            d.units
                .iter()
                .map(|u| boxes.iter().any(|b| box_iou(b, &u.bbox) > iou))
                .collect()
        })
        .collect()
}

pub fn select_all(docs: &[SimDocument]) -> Vec<Vec<bool>> {
    docs.iter().map(|d| vec![true; d.units.len()]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDecode {
    /// Whether the unit takes part in medicine matching.
    pub selected: bool,
    pub paths: Vec<DecodedPath>,
}

/// Ranked hypotheses of every unit of every document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedDocs {
    pub doc_ids: Vec<usize>,
    pub units: Vec<Vec<UnitDecode>>,
}

/// Decodes selected units with `selected_cfg` and the rest with `other_cfg`
/// (skipped entirely when `None`).
pub fn decode_docs(
    docs: &[SimDocument],
    selection: &[Vec<bool>],
    selected_cfg: &DecoderConfig,
    other_cfg: Option<&DecoderConfig>,
) -> DecodedDocs {
    let jobs: Vec<(usize, usize)> = docs
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.units.len()).map(move |j| (i, j)))
        .collect();
    let decoded: Vec<UnitDecode> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let selected = selection[i][j];
            let cfg = if selected { Some(selected_cfg) } else { other_cfg };
            UnitDecode {
                selected,
                paths: cfg.map(|c| decode_topk(&docs[i].units[j].logits, c)).unwrap_or_default(),
            }
        })
        .collect();
    let mut it = decoded.into_iter();
    let units = docs.iter().map(|d| it.by_ref().take(d.units.len()).collect()).collect();
    DecodedDocs {
        doc_ids: docs.iter().map(|d| d.doc_id).collect(),
        units,
    }
}

impl DecodedDocs {
    /// Predicted medicine set per document from the selected units.
    pub fn predictions(&self, vocab: &MedicineVocabulary, strategy: MatchStrategy) -> Vec<BTreeSet<String>> {
        self.units
            .par_iter()
            .map(|units| {
                units
                    .iter()
                    .filter(|u| u.selected)
                    .filter_map(|u| match_line(&u.paths, vocab, strategy).medicine)
                    .map(|m| m.to_lowercase())
                    .collect()
            })
            .collect()
    }

    pub fn report(
        &self,
        docs: &[SimDocument],
        vocab: &MedicineVocabulary,
        strategy: MatchStrategy,
    ) -> Result<ExtractionReport> {
        let truths: Vec<BTreeSet<String>> = docs.iter().map(|d| d.weak_labels.clone()).collect();
        Ok(jaccard_metrics(&self.predictions(vocab, strategy), &truths)?)
    }

    /// Number of units decoded for matching.
    pub fn selected_units(&self) -> usize {
        self.units.iter().flatten().filter(|u| u.selected).count()
    }
}

/// Decoder inputs of one extraction run.
pub struct ExtractionSetup<'a> {
    pub mode: ExtractMode,
    /// Decoder for matched units.
    pub chosen: &'a DecoderConfig,
    /// Top-1 decoder for the remaining units in segmented mode.
    pub vanilla: &'a DecoderConfig,
    pub segmenter: &'a dyn Segmenter,
}

/// Full-page mode decodes and matches every unit with the chosen decoder.
/// Segmented mode matches only the units the segmenter selects; the other
/// units are read with the vanilla decoder and never matched.
pub fn extract_decode(docs: &[SimDocument], setup: &ExtractionSetup<'_>) -> DecodedDocs {
    match setup.mode {
        ExtractMode::FullPage => decode_docs(docs, &select_all(docs), setup.chosen, None),
        ExtractMode::Segmented => {
            let selection = select_units(docs, setup.segmenter, 0.5);
            let vanilla_top1 = DecoderConfig {
                k: 1,
                ..setup.vanilla.clone()
            };
            decode_docs(docs, &selection, setup.chosen, Some(&vanilla_top1))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    #[serde(rename = "mJI")]
    pub mji: f64,
    #[serde(rename = "mP")]
    pub mp: f64,
    #[serde(rename = "mR")]
    pub mr: f64,
    #[serde(rename = "M")]
    pub m: usize,
}

impl AblationRow {
    fn new(axis: Axis, value: impl ToString, r: &ExtractionReport) -> Self {
        AblationRow {
            axis: axis.to_string(),
            value: value.to_string(),
            mji: r.mji,
            mp: r.mp,
            mr: r.mr,
            m: r.m,
        }
    }
}

pub fn rows_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("axis,value,mJI,mP,mR,M\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6},{}", r.axis, r.value, r.mji, r.mp, r.mr, r.m);
    }
    out
}

pub fn rows_to_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:<20} {:>8} {:>8} {:>8} {:>6}", "axis", "value", "mJI", "mP", "mR", "M");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:<20} {:>8.4} {:>8.4} {:>8.4} {:>6}",
            r.axis, r.value, r.mji, r.mp, r.mr, r.m
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Alpha,
    Ngram,
    Paths,
    VocabFraction,
    Strategy,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Alpha => "alpha",
            Axis::Ngram => "ngram",
            Axis::Paths => "paths",
            Axis::VocabFraction => "vocab_fraction",
            Axis::Strategy => "strategy",
        })
    }
}

impl FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "alpha" => Ok(Axis::Alpha),
            "ngram" => Ok(Axis::Ngram),
            "paths" => Ok(Axis::Paths),
            "vocab_fraction" => Ok(Axis::VocabFraction),
            "strategy" => Ok(Axis::Strategy),
            _ => Err(format!(
                "unknown axis {s:?} (expected alpha, ngram, paths, vocab_fraction or strategy)"
            )),
        }
    }
}

/// One extraction run per grid point on `docs`, using the configured
/// extraction mode and the medicine LM.
pub fn ablate(
    exp: &Experiment,
    axis: Axis,
    docs: &[SimDocument],
    lms: &LanguageModels,
    segmenter: &dyn Segmenter,
) -> Result<Vec<AblationRow>> {
    let cfg = &exp.cfg;
    let grid = &cfg.ablation;
    let vocab = &exp.res.vocab;
    let strategy = cfg.extract.strategy;
    let vanilla = cfg.vanilla.decoder(Some(lms.vanilla.clone()));
    let with_medicine = |fusion: &FusionConfig, lm: Arc<NGramModel>| -> DecodedDocs {
        let chosen = fusion.decoder(Some(lm));
        let setup = ExtractionSetup {
            mode: cfg.extract.mode,
            chosen: &chosen,
            vanilla: &vanilla,
            segmenter,
        };
        extract_decode(docs, &setup)
    };
    let nonempty = |n: usize| {
        if n == 0 {
            Err(PipelineError::Config(format!("ablation grid for axis {axis} is empty")))
        } else {
            Ok(())
        }
    };
    let mut rows = Vec::new();
    match axis {
        Axis::Alpha => {
            nonempty(grid.alpha.len())?;
            for &alpha in &grid.alpha {
                let fusion = FusionConfig {
                    alpha,
                    ..cfg.medicine.clone()
                };
                let r = with_medicine(&fusion, lms.medicine.clone()).report(docs, vocab, strategy)?;
                rows.push(AblationRow::new(axis, alpha, &r));
            }
        }
        Axis::Ngram => {
            nonempty(grid.ngram.len())?;
            for &n in &grid.ngram {
                let lm = Arc::new(exp.medicine_lm(n, 1.0)?);
                let r = with_medicine(&cfg.medicine, lm).report(docs, vocab, strategy)?;
                rows.push(AblationRow::new(axis, n, &r));
            }
        }
        Axis::Paths => {
            nonempty(grid.paths.len())?;
            for &k in &grid.paths {
                let fusion = FusionConfig {
                    k,
                    ..cfg.medicine.clone()
                };
                let r = with_medicine(&fusion, lms.medicine.clone()).report(docs, vocab, grid.paths_strategy)?;
                rows.push(AblationRow::new(axis, k, &r));
            }
        }
        Axis::VocabFraction => {
            nonempty(grid.vocab_fraction.len())?;
            for &f in &grid.vocab_fraction {
                let lm = Arc::new(exp.medicine_lm(cfg.lm.order, f)?);
                let r = with_medicine(&cfg.medicine, lm).report(docs, vocab, strategy)?;
                rows.push(AblationRow::new(axis, f, &r));
            }
        }
        Axis::Strategy => {
            let fusion = FusionConfig {
                k: grid.strategy_k,
                ..cfg.medicine.clone()
            };
            let decoded = with_medicine(&fusion, lms.medicine.clone());
            for s in MatchStrategy::ALL {
                let r = decoded.report(docs, vocab, s)?;
                rows.push(AblationRow::new(axis, s, &r));
            }
        }
    }
    Ok(rows)
}
