//! CTC decoding with shallow fusion of a character n-gram model.
//!
//! [`decode_topk`] runs a prefix beam search. Each prefix keeps the optical
//! probability of its label paths split into blank-ending and
//! symbol-ending mass; ranking uses `optical + alpha * lm`, where the LM
//! term accrues per emitted character and once more for the end marker when
//! the search finishes.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::lm::{NGramModel, SymbolId, BOS_ID, EOS_ID};

pub const BLANK: usize = 0;
const LGT1_MAGIC: &[u8; 4] = b"LGT1";

#[derive(Debug, thiserror::Error)]
pub enum LogitError {
    #[error("logit matrix needs at least one frame and two symbols (got {frames}x{symbols})")]
    Shape { frames: usize, symbols: usize },
    #[error("expected {expected} scores, got {got}")]
    Length { expected: usize, got: usize },
    #[error("symbol {index} ({symbol:?}) must be a single character")]
    Symbol { index: usize, symbol: String },
    #[error("duplicate symbol {0:?}")]
    DuplicateSymbol(String),
    #[error("frame {frame} has a NaN, +inf or all -inf score")]
    NonFinite { frame: usize },
    #[error("malformed LGT1 data: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-frame symbol log-probabilities. Index 0 of the alphabet is the CTC blank.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    alphabet: Arc<Vec<String>>,
    frames: usize,
    data: Vec<f32>,
}

fn validate_alphabet(alphabet: &[String]) -> Result<(), LogitError> {
    let mut seen = std::collections::HashSet::new();
    for (i, s) in alphabet.iter().enumerate() {
        if i > 0 && s.chars().count() != 1 {
            return Err(LogitError::Symbol { index: i, symbol: s.clone() });
        }
        if !seen.insert(s.as_str()) {
            return Err(LogitError::DuplicateSymbol(s.clone()));
        }
    }
    Ok(())
}

impl LogitMatrix {
    /// Builds a matrix from raw row-major scores, log-softmax normalizing each row.
    /// `-inf` entries are allowed and mean probability zero.
    pub fn new(alphabet: Arc<Vec<String>>, frames: usize, scores: Vec<f32>) -> Result<Self, LogitError> {
        let symbols = alphabet.len();
        if frames < 1 || symbols < 2 {
            return Err(LogitError::Shape { frames, symbols });
        }
        if scores.len() != frames * symbols {
            return Err(LogitError::Length {
                expected: frames * symbols,
                got: scores.len(),
            });
        }
        validate_alphabet(&alphabet)?;
        let mut data = scores;
        for (t, row) in data.chunks_mut(symbols).enumerate() {
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
            if row.iter().any(|v| v.is_nan() || *v == f32::INFINITY) || max == f32::NEG_INFINITY {
                return Err(LogitError::NonFinite { frame: t });
            }
            let z: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
            let log_z = max as f64 + z.ln();
            // Already normalized rows are kept bit-for-bit so files round-trip.
            if log_z.abs() < 1e-5 {
                continue;
            }
            for v in row.iter_mut() {
                *v = (*v as f64 - log_z) as f32;
            }
        }
        Ok(LogitMatrix {
            alphabet,
            frames,
            data,
        })
    }

    pub fn from_rows(alphabet: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, LogitError> {
        let flat: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(Arc::new(alphabet), rows.len(), flat)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn symbols(&self) -> usize {
        self.alphabet.len()
    }

    pub fn alphabet(&self) -> &Arc<Vec<String>> {
        &self.alphabet
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let a = self.symbols();
        &self.data[t * a..(t + 1) * a]
    }

    pub fn log_prob(&self, t: usize, s: usize) -> f64 {
        self.data[t * self.symbols() + s] as f64
    }

    pub fn to_lgt1(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(LGT1_MAGIC);
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.symbols() as u32).to_le_bytes());
        for s in self.alphabet.iter() {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_lgt1(bytes: &[u8]) -> Result<Self, LogitError> {
        let mut cur = bytes;
        let mut take = |n: usize, what: &str| -> Result<&[u8], LogitError> {
            if cur.len() < n {
                return Err(LogitError::Format(format!("truncated while reading {what}")));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(4, "magic")? != LGT1_MAGIC {
            return Err(LogitError::Format("bad magic".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
        let frames = u32_at(take(4, "frame count")?);
        let symbols = u32_at(take(4, "symbol count")?);
        let mut alphabet = Vec::with_capacity(symbols);
        for i in 0..symbols {
            let len = u32_at(take(4, "symbol length")?);
            let raw = take(len, "symbol")?;
            let s = std::str::from_utf8(raw)
                .map_err(|_| LogitError::Format(format!("symbol {i} is not UTF-8")))?;
            alphabet.push(s.to_string());
        }
        let n = frames
            .checked_mul(symbols)
            .ok_or_else(|| LogitError::Format("dimension overflow".into()))?;
        let raw = take(n * 4, "scores")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if !cur.is_empty() {
            return Err(LogitError::Format(format!("{} trailing bytes", cur.len())));
        }
        Self::new(Arc::new(alphabet), frames, data)
    }

    pub fn write_lgt1(&self, path: impl AsRef<Path>) -> Result<(), LogitError> {
        std::fs::write(path, self.to_lgt1())?;
        Ok(())
    }

    pub fn read_lgt1(path: impl AsRef<Path>) -> Result<Self, LogitError> {
        Self::from_lgt1(&std::fs::read(path)?)
    }

    /// JSON form: `{"alphabet": [...], "frames": [[...], ...]}`; `null` encodes `-inf`.
    pub fn to_json(&self) -> serde_json::Value {
        let frames: Vec<Vec<Option<f64>>> = (0..self.frames)
            .map(|t| {
                self.row(t)
                    .iter()
                    .map(|&v| if v.is_finite() { Some(v as f64) } else { None })
                    .collect()
            })
            .collect();
        serde_json::json!({ "alphabet": &*self.alphabet, "frames": frames })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, LogitError> {
        #[derive(Deserialize)]
        struct Repr {
            alphabet: Vec<String>,
            frames: Vec<Vec<Option<f64>>>,
        }
        let repr: Repr = serde_json::from_value(value.clone())?;
        let rows: Vec<Vec<f64>> = repr
            .frames
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect())
            .collect();
        if rows.iter().any(|r| r.len() != repr.alphabet.len()) {
            return Err(LogitError::Format("frame width differs from alphabet size".into()));
        }
        Self::from_rows(repr.alphabet, &rows)
    }
}

/// Collapses a CTC label sequence: merge repeats, then drop blanks.
pub fn collapse_ids(labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(labels.len());
    let mut prev = None;
    for &l in labels {
        if Some(l) != prev && l != BLANK {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

pub fn collapse(labels: &[usize], alphabet: &[String]) -> String {
    collapse_ids(labels).into_iter().map(|i| alphabet[i].as_str()).collect()
}

/// Per-frame argmax followed by collapse (ties go to the lower index).
pub fn greedy_decode(logits: &LogitMatrix) -> String {
    let labels: Vec<usize> = (0..logits.frames())
        .map(|t| {
            let row = logits.row(t);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    collapse(&labels, logits.alphabet())
}

/// Optional per-frame restriction of the symbols considered for extension.
/// Blank and repeat transitions are always evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SymbolPruning {
    /// Keep at most this many non-blank symbols per frame, best first.
    pub max_symbols: Option<usize>,
    /// Skip non-blank symbols whose frame log-probability is below this.
    pub min_log_prob: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub k: usize,
    pub beam_width: usize,
    pub alpha: f64,
    pub lm: Option<Arc<NGramModel>>,
    pub pruning: SymbolPruning,
}

impl DecoderConfig {
    pub fn new(k: usize) -> Self {
        DecoderConfig {
            k,
            beam_width: k.max(16),
            alpha: 0.0,
            lm: None,
            pruning: SymbolPruning::default(),
        }
    }

    pub fn with_beam(mut self, beam_width: usize) -> Self {
        self.beam_width = beam_width;
        self
    }

    pub fn with_lm(mut self, lm: Arc<NGramModel>, alpha: f64) -> Self {
        self.lm = Some(lm);
        self.alpha = alpha;
        self
    }

    pub fn with_pruning(mut self, pruning: SymbolPruning) -> Self {
        self.pruning = pruning;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k < 1 {
            return Err("k must be at least 1".into());
        }
        if self.beam_width < self.k {
            return Err(format!("beam_width {} is smaller than k {}", self.beam_width, self.k));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(format!("alpha must be finite and non-negative, got {}", self.alpha));
        }
        Ok(())
    }

    fn active_lm(&self) -> Option<&NGramModel> {
        match &self.lm {
            Some(lm) if self.alpha > 0.0 => Some(lm),
            _ => None,
        }
    }
}

/// One ranked hypothesis of [`decode_topk`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedPath {
    pub text: String,
    /// `optical_score + alpha * lm_score`.
    pub combined_score: f64,
    /// Log of the summed probability of all label paths collapsing to `text`.
    pub optical_score: f64,
    /// LM log-probability of `text` including the end marker (0 without an active LM).
    pub lm_score: f64,
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

const ROOT: u32 = 0;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct PrefixNode {
    parent: u32,
    symbol: u32,
    /// Accumulated LM log-probability of the prefix, end marker excluded.
    lm: f64,
}

#[derive(Debug, Clone, Copy)]
struct Beam {
    node: u32,
    blank: f64,
    non_blank: f64,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    parent: u32,
    symbol: u32,
    non_blank: f64,
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Existing(u32),
    Pending(u32),
}

#[derive(Debug, Clone, Copy)]
struct Ranked {
    score: f64,
    key: u64,
    source: Source,
}

fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.key.cmp(&b.key))
}

struct Search<'a> {
    logits: &'a LogitMatrix,
    lm: Option<&'a NGramModel>,
    alpha: f64,
    /// Decoder symbol -> LM symbol (index 0 unused).
    lm_map: Vec<SymbolId>,
    nodes: Vec<PrefixNode>,
    children: FxHashMap<u64, u32>,
    /// LM log-probabilities over decoder symbols for beam nodes; slot 0 holds
    /// the end marker.
    dists: FxHashMap<u32, Box<[f64]>>,
    scratch_dist: Vec<f64>,
    scratch_ctx: Vec<SymbolId>,
}

impl<'a> Search<'a> {
    fn new(logits: &'a LogitMatrix, cfg: &'a DecoderConfig) -> Self {
        let lm = cfg.active_lm();
        let lm_map = match lm {
            Some(m) => logits
                .alphabet()
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    if i == BLANK {
                        BOS_ID
                    } else {
                        m.char_id(s.chars().next().unwrap_or('\u{0}'))
                    }
                })
                .collect(),
            None => Vec::new(),
        };
        Search {
            logits,
            lm,
            alpha: if lm.is_some() { cfg.alpha } else { 0.0 },
            lm_map,
            nodes: vec![PrefixNode {
                parent: NONE,
                symbol: BLANK as u32,
                lm: 0.0,
            }],
            children: FxHashMap::default(),
            dists: FxHashMap::default(),
            scratch_dist: vec![0.0; lm.map(|m| m.vocab_size()).unwrap_or(0)],
            scratch_ctx: Vec::new(),
        }
    }

    fn child_key(parent: u32, symbol: u32) -> u64 {
        ((parent as u64) << 32) | symbol as u64
    }

    fn last_symbol(&self, node: u32) -> u32 {
        if node == ROOT {
            NONE
        } else {
            self.nodes[node as usize].symbol
        }
    }

    /// LM context (forward order) of `node` extended by `extra` when given.
    fn fill_context(&mut self, node: u32, extra: Option<u32>) {
        let lm = self.lm.expect("LM context requested without an LM");
        let need = lm.order() - 1;
        self.scratch_ctx.clear();
        if let Some(s) = extra {
            self.scratch_ctx.push(self.lm_map[s as usize]);
        }
        let mut cur = node;
        while cur != ROOT && self.scratch_ctx.len() < need {
            let n = self.nodes[cur as usize];
            self.scratch_ctx.push(self.lm_map[n.symbol as usize]);
            cur = n.parent;
        }
        while self.scratch_ctx.len() < need {
            self.scratch_ctx.push(BOS_ID);
        }
        self.scratch_ctx.reverse();
    }

    fn ensure_dist(&mut self, node: u32) {
        if self.dists.contains_key(&node) {
            return;
        }
        let lm = self.lm.expect("LM distribution requested without an LM");
        self.fill_context(node, None);
        lm.distribution_ids(&self.scratch_ctx, &mut self.scratch_dist);
        let dist: Box<[f64]> = self
            .lm_map
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                if i == BLANK {
                    self.scratch_dist[EOS_ID as usize]
                } else {
                    self.scratch_dist[m as usize]
                }
            })
            .collect();
        self.dists.insert(node, dist);
    }

    fn eos_score(&mut self, node: u32, extra: Option<u32>) -> f64 {
        let Some(lm) = self.lm else { return 0.0 };
        if extra.is_none() {
            if let Some(d) = self.dists.get(&node) {
                return d[BLANK];
            }
        }
        self.fill_context(node, extra);
        lm.log_prob_ids(&self.scratch_ctx, EOS_ID)
    }

    fn text(&self, mut node: u32, extra: Option<u32>) -> String {
        let alphabet = self.logits.alphabet();
        let mut syms = Vec::new();
        if let Some(s) = extra {
            syms.push(s);
        }
        while node != ROOT {
            let n = self.nodes[node as usize];
            syms.push(n.symbol);
            node = n.parent;
        }
        syms.iter().rev().map(|&s| alphabet[s as usize].as_str()).collect()
    }

    fn run(mut self, k: usize, beam_width: usize, pruning: SymbolPruning) -> Vec<DecodedPath> {
        let logits = self.logits;
        let frames = logits.frames();
        let symbols = logits.symbols();
        let mut beam = vec![Beam {
            node: ROOT,
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        }];
        let mut existing: Vec<Beam> = Vec::new();
        let mut slot: Vec<u32> = Vec::new();
        let mut stamp: Vec<u32> = Vec::new();
        let mut pending: Vec<Pending> = Vec::new();
        let mut ranked: Vec<Ranked> = Vec::new();
        let mut active: Vec<usize> = Vec::with_capacity(symbols);

        for t in 0..frames {
            let row = logits.row(t);
            let frame_stamp = t as u32 + 1;
            active.clear();
            active.extend((1..symbols).filter(|&s| {
                let lp = row[s] as f64;
                lp > f64::NEG_INFINITY && pruning.min_log_prob.is_none_or(|m| lp >= m)
            }));
            if let Some(max) = pruning.max_symbols {
                if active.len() > max {
                    active.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
                    active.truncate(max);
                    active.sort_unstable();
                }
            }
            existing.clear();
            pending.clear();
            if slot.len() < self.nodes.len() {
                slot.resize(self.nodes.len(), 0);
                stamp.resize(self.nodes.len(), 0);
            }

            macro_rules! add_existing {
                ($node:expr, $blank:expr, $non_blank:expr) => {{
                    let n = $node as usize;
                    if stamp[n] != frame_stamp {
                        stamp[n] = frame_stamp;
                        slot[n] = existing.len() as u32;
                        existing.push(Beam {
                            node: $node,
                            blank: f64::NEG_INFINITY,
                            non_blank: f64::NEG_INFINITY,
                        });
                    }
                    let e = &mut existing[slot[n] as usize];
                    e.blank = log_add(e.blank, $blank);
                    e.non_blank = log_add(e.non_blank, $non_blank);
                }};
            }

            for b in &beam {
                let total = log_add(b.blank, b.non_blank);
                let blank_lp = row[BLANK] as f64;
                let last = self.last_symbol(b.node);
                add_existing!(b.node, total + blank_lp, f64::NEG_INFINITY);
                if last != NONE {
                    add_existing!(b.node, f64::NEG_INFINITY, b.non_blank + row[last as usize] as f64);
                }
                if self.lm.is_some() {
                    self.ensure_dist(b.node);
                }
                for &s in &active {
                    let lp = row[s] as f64;
                    let p = if s as u32 == last { b.blank + lp } else { total + lp };
                    if p == f64::NEG_INFINITY {
                        continue;
                    }
                    match self.children.get(&Self::child_key(b.node, s as u32)) {
                        Some(&child) => add_existing!(child, f64::NEG_INFINITY, p),
                        None => pending.push(Pending {
                            parent: b.node,
                            symbol: s as u32,
                            non_blank: p,
                        }),
                    }
                }
            }

            ranked.clear();
            for (i, e) in existing.iter().enumerate() {
                let optical = log_add(e.blank, e.non_blank);
                if optical == f64::NEG_INFINITY {
                    continue;
                }
                ranked.push(Ranked {
                    score: optical + self.alpha * self.nodes[e.node as usize].lm,
                    key: e.node as u64,
                    source: Source::Existing(i as u32),
                });
            }
            for (i, p) in pending.iter().enumerate() {
                let lm = match self.lm {
                    Some(_) => self.nodes[p.parent as usize].lm + self.dists[&p.parent][p.symbol as usize],
                    None => 0.0,
                };
                ranked.push(Ranked {
                    score: p.non_blank + self.alpha * lm,
                    key: (1u64 << 63) | Self::child_key(p.parent, p.symbol),
                    source: Source::Pending(i as u32),
                });
            }

            if t + 1 == frames {
                return self.finish(&existing, &pending, &ranked, k);
            }

            if ranked.len() > beam_width {
                ranked.select_nth_unstable_by(beam_width - 1, rank_order);
                ranked.truncate(beam_width);
            }
            let old_beam = std::mem::take(&mut beam);
            beam.reserve(ranked.len());
            for r in &ranked {
                match r.source {
                    Source::Existing(i) => beam.push(existing[i as usize]),
                    Source::Pending(i) => {
                        let p = pending[i as usize];
                        let lm = match self.lm {
                            Some(_) => self.nodes[p.parent as usize].lm + self.dists[&p.parent][p.symbol as usize],
                            None => 0.0,
                        };
                        let id = self.nodes.len() as u32;
                        self.nodes.push(PrefixNode {
                            parent: p.parent,
                            symbol: p.symbol,
                            lm,
                        });
                        self.children.insert(Self::child_key(p.parent, p.symbol), id);
                        beam.push(Beam {
                            node: id,
                            blank: f64::NEG_INFINITY,
                            non_blank: p.non_blank,
                        });
                    }
                }
            }
            if self.lm.is_some() {
                // Drop cached distributions of nodes that left the beam.
                let next_stamp = frame_stamp + 1;
                stamp.resize(self.nodes.len(), 0);
                slot.resize(self.nodes.len(), 0);
                for b in &beam {
                    stamp[b.node as usize] = next_stamp;
                }
                for b in &old_beam {
                    if stamp[b.node as usize] != next_stamp {
                        self.dists.remove(&b.node);
                    }
                }
                // Reset so the next frame's bookkeeping starts clean.
                for b in &beam {
                    stamp[b.node as usize] = 0;
                }
            }
        }
        unreachable!("frames >= 1")
    }

    fn finish(&mut self, existing: &[Beam], pending: &[Pending], ranked: &[Ranked], k: usize) -> Vec<DecodedPath> {
        struct Final {
            combined: f64,
            optical: f64,
            lm: f64,
            key: u64,
            node: u32,
            extra: Option<u32>,
        }
        let mut finals: Vec<Final> = ranked
            .iter()
            .map(|r| {
                let (node, extra, optical, prefix_lm) = match r.source {
                    Source::Existing(i) => {
                        let e = existing[i as usize];
                        (e.node, None, log_add(e.blank, e.non_blank), self.nodes[e.node as usize].lm)
                    }
                    Source::Pending(i) => {
                        let p = pending[i as usize];
                        let lm = match self.lm {
                            Some(_) => self.nodes[p.parent as usize].lm + self.dists[&p.parent][p.symbol as usize],
                            None => 0.0,
                        };
                        (p.parent, Some(p.symbol), p.non_blank, lm)
                    }
                };
                let lm = if self.lm.is_some() {
                    prefix_lm + self.eos_score(node, extra)
                } else {
                    0.0
                };
                Final {
                    combined: optical + self.alpha * lm,
                    optical,
                    lm,
                    key: r.key,
                    node,
                    extra,
                }
            })
            .collect();
        let by_score = |a: &Final, b: &Final| {
            b.combined
                .partial_cmp(&a.combined)
                .unwrap_or(Ordering::Equal)
                .then(a.key.cmp(&b.key))
        };
        if finals.len() > k {
            finals.select_nth_unstable_by(k - 1, by_score);
            let cutoff = finals[k - 1].combined;
            // Keep ties at the cutoff so the lexicographic order decides them.
            let mut keep: Vec<Final> = Vec::with_capacity(k);
            for f in finals.into_iter() {
                if f.combined >= cutoff {
                    keep.push(f);
                }
            }
            finals = keep;
        }
        let mut out: Vec<DecodedPath> = finals
            .into_iter()
            .map(|f| DecodedPath {
                text: self.text(f.node, f.extra),
                combined_score: f.combined,
                optical_score: f.optical,
                lm_score: f.lm,
            })
            .collect();
        out.sort_by(|a, b| {
            b.combined_score
                .partial_cmp(&a.combined_score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.text.cmp(&b.text))
        });
        out.truncate(k);
        out
    }
}

/// Top-k distinct collapsed strings ranked by `optical + alpha * lm`, ties
/// ordered by text.
pub fn decode_topk(logits: &LogitMatrix, cfg: &DecoderConfig) -> Vec<DecodedPath> {
    if cfg.k == 0 {
        return Vec::new();
    }
    let beam_width = cfg.beam_width.max(cfg.k);
    Search::new(logits, cfg).run(cfg.k, beam_width, cfg.pruning)
}

pub fn decode_top1(logits: &LogitMatrix, cfg: &DecoderConfig) -> DecodedPath {
    let cfg1 = DecoderConfig {
        k: 1,
        beam_width: cfg.beam_width.max(1),
        ..cfg.clone()
    };
    decode_topk(logits, &cfg1)
        .into_iter()
        .next()
        .expect("a logit matrix always yields at least one hypothesis")
}

/// Decodes many lines in parallel with a shared read-only configuration.
pub fn decode_batch(lines: &[&LogitMatrix], cfg: &DecoderConfig) -> Vec<Vec<DecodedPath>> {
    lines.par_iter().map(|l| decode_topk(l, cfg)).collect()
}
