//! Python bindings for `rxdecode-core`.

use std::collections::BTreeSet;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rxdecode_core::grammar::{count_lines, enumerate_lines, sample_line};
use rxdecode_core::pipeline::{extract_decode, Experiment, ExtractionSetup, PipelineConfig, Resources};
use rxdecode_core::{
    decode_topk, jaccard_metrics, match_line, DecoderConfig, GrammarSpec, LogitMatrix, MatchStrategy, MedicineEntry,
    MedicineVocabulary, NGramModel, RotatedBox,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Character n-gram language model with absolute discounting.
#[pyclass(frozen, name = "LanguageModel")]
struct PyLanguageModel {
    inner: Arc<NGramModel>,
}

#[pymethods]
impl PyLanguageModel {
    #[staticmethod]
    #[pyo3(signature = (corpus, order = 7, discount = 0.4))]
    fn train(corpus: Vec<String>, order: usize, discount: f64) -> PyResult<Self> {
        let inner = rxdecode_core::train_ngram(&corpus, order, discount).map_err(value_err)?;
        Ok(PyLanguageModel { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn from_arpa(text: &str) -> PyResult<Self> {
        let inner = NGramModel::from_arpa(text).map_err(value_err)?;
        Ok(PyLanguageModel { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = rxdecode_core::load_lm(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(PyLanguageModel { inner: Arc::new(inner) })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        rxdecode_core::save_lm(&self.inner, path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn to_arpa(&self) -> String {
        self.inner.to_arpa()
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    /// Natural-log probability of `next` after `history`.
    fn score_next(&self, history: &str, next: char) -> f64 {
        self.inner.score_next(history, next)
    }

    /// Natural-log probability of `text` followed by the end marker.
    fn score_sequence(&self, text: &str) -> f64 {
        self.inner.score_sequence(text)
    }

    fn __repr__(&self) -> String {
        format!("LanguageModel(order={}, chars={})", self.inner.order(), self.inner.chars().len())
    }
}

/// Top-k CTC prefix beam search. `rows` holds one row of raw scores per
/// frame; each row is log-softmax normalized. `alphabet[0]` is the blank.
///
/// Returns `(text, combined, optical, lm)` tuples, best first.
#[pyfunction]
#[pyo3(signature = (rows, alphabet, k = 5, lm = None, alpha = 0.0, beam_width = None))]
fn decode(
    py: Python<'_>,
    rows: Vec<Vec<f64>>,
    alphabet: Vec<String>,
    k: usize,
    lm: Option<&PyLanguageModel>,
    alpha: f64,
    beam_width: Option<usize>,
) -> PyResult<Vec<(String, f64, f64, f64)>> {
    let m = LogitMatrix::from_rows(alphabet, &rows).map_err(value_err)?;
    let mut cfg = DecoderConfig::new(k);
    if let Some(b) = beam_width {
        cfg = cfg.with_beam(b);
    }
    if let Some(lm) = lm {
        cfg = cfg.with_lm(lm.inner.clone(), alpha);
    }
    cfg.validate().map_err(PyValueError::new_err)?;
    let paths = py.detach(|| decode_topk(&m, &cfg));
    Ok(paths
        .into_iter()
        .map(|p| (p.text, p.combined_score, p.optical_score, p.lm_score))
        .collect())
}

/// Medicine names with their dosage-form kind.
#[pyclass(frozen, name = "Vocabulary")]
struct PyVocabulary {
    inner: MedicineVocabulary,
}

#[pymethods]
impl PyVocabulary {
    #[new]
    fn new(entries: Vec<(String, String)>) -> PyResult<Self> {
        let inner = MedicineVocabulary::new(entries.iter().map(|(n, k)| MedicineEntry::new(n, k))).map_err(value_err)?;
        Ok(PyVocabulary { inner })
    }

    #[staticmethod]
    fn bundled() -> Self {
        PyVocabulary {
            inner: Resources::bundled().vocab,
        }
    }

    #[staticmethod]
    fn from_tsv(text: &str) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: MedicineVocabulary::from_tsv(text).map_err(value_err)?,
        })
    }

    fn names(&self) -> Vec<String> {
        self.inner.names().map(str::to_string).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, name: &str) -> bool {
        self.inner.contains(name)
    }

    /// Matches ranked hypotheses of one line. Returns
    /// `(medicine, matched_rank, vote_count)`.
    #[pyo3(signature = (paths, strategy = "top1_exact"))]
    fn match_line(&self, paths: Vec<String>, strategy: &str) -> PyResult<(Option<String>, Option<usize>, usize)> {
        let strategy: MatchStrategy = strategy.parse().map_err(PyValueError::new_err)?;
        let p = match_line(&paths, &self.inner, strategy);
        Ok((p.medicine, p.matched_rank, p.vote_count))
    }
}

/// Prescription-line grammar.
#[pyclass(frozen, name = "Grammar")]
struct PyGrammar {
    inner: GrammarSpec,
}

#[pymethods]
impl PyGrammar {
    #[staticmethod]
    fn bundled() -> Self {
        PyGrammar {
            inner: Resources::bundled().grammar,
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyGrammar {
            inner: GrammarSpec::from_json(text).map_err(value_err)?,
        })
    }

    fn count_lines(&self, name: &str, kind: &str) -> u128 {
        count_lines(&self.inner, &MedicineEntry::new(name, kind))
    }

    #[pyo3(signature = (name, kind, limit = 10_000))]
    fn enumerate_lines(&self, name: &str, kind: &str, limit: u128) -> PyResult<Vec<String>> {
        enumerate_lines(&self.inner, &MedicineEntry::new(name, kind), limit).map_err(value_err)
    }

    #[pyo3(signature = (name, kind, seed = 0))]
    fn sample_line(&self, name: &str, kind: &str, seed: u64) -> String {
        sample_line(&self.inner, &MedicineEntry::new(name, kind), seed)
    }
}

/// `(mJI, mP, mR)` over paired predicted and true name sets.
#[pyfunction]
fn jaccard(preds: Vec<BTreeSet<String>>, truths: Vec<BTreeSet<String>>) -> PyResult<(f64, f64, f64)> {
    let r = jaccard_metrics(&preds, &truths).map_err(value_err)?;
    Ok((r.mji, r.mp, r.mr))
}

/// IoU of two `(top, left, height, width, rotation)` boxes.
#[pyfunction]
fn box_iou(a: (f64, f64, f64, f64, f64), b: (f64, f64, f64, f64, f64)) -> PyResult<f64> {
    let mk = |(t, l, h, w, r): (f64, f64, f64, f64, f64)| RotatedBox::new(t, l, h, w, r).map_err(|e| value_err(e.0));
    Ok(rxdecode_core::box_iou(&mk(a)?, &mk(b)?))
}

/// Runs simulation, LM training, labeling and extraction with the given
/// JSON config (defaults when omitted). Returns the report and the
/// admitted fraction per labeling iteration.
#[pyfunction]
#[pyo3(signature = (seed, config_json = None))]
fn run_pipeline<'py>(py: Python<'py>, seed: u64, config_json: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = match config_json {
        Some(text) => PipelineConfig::from_json(text).map_err(value_err)?,
        None => PipelineConfig::default(),
    }
    .with_seed(seed);
    let (report, fractions) = py
        .detach(|| -> rxdecode_core::pipeline::Result<_> {
            let exp = Experiment::new(cfg)?;
            let (train, test) = exp.generate()?;
            let lms = exp.lms()?;
            let outcome = exp.label(&train, &lms)?;
            let ex = &exp.cfg.extract;
            let chosen = exp.fusion(ex.lm).decoder(lms.get(ex.lm));
            let vanilla = exp.cfg.vanilla.decoder(Some(lms.vanilla.clone()));
            let decoded = extract_decode(
                &test,
                &ExtractionSetup {
                    mode: ex.mode,
                    chosen: &chosen,
                    vanilla: &vanilla,
                    segmenter: outcome.segmenter.as_ref(),
                },
            );
            let report = decoded.report(&test, &exp.res.vocab, ex.strategy)?;
            let fractions: Vec<f64> = outcome.stats.iter().map(|s| s.admitted_fraction).collect();
            Ok((report, fractions))
        })
        .map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("mJI", report.mji)?;
    out.set_item("mP", report.mp)?;
    out.set_item("mR", report.mr)?;
    out.set_item("M", report.m)?;
    out.set_item("admitted_fraction", fractions)?;
    Ok(out)
}

#[pymodule]
fn rxdecode(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLanguageModel>()?;
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyGrammar>()?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(box_iou, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
