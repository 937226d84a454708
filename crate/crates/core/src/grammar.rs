//! Probabilistic program for synthetic medicine lines.
//!
//! A line visits enumeration, type, root-name and suffix nodes in order and
//! joins the emitted tokens with single spaces. Optional nodes are taken or
//! skipped with equal probability and every choice inside a node is uniform.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum GrammarError {
    #[error("enumeration would produce {count} lines, above the limit of {limit}")]
    TooManyLines { count: u128, limit: u128 },
    #[error("grammar has no entries")]
    NoEntries,
    #[error("invalid grammar: {0}")]
    Invalid(String),
    #[error("samples_per_entry must be at least 1")]
    NoSamples,
    #[error("vocabulary line {line}: {message}")]
    Vocabulary { line: usize, message: String },
    #[error("duplicate medicine name {0:?}")]
    DuplicateName(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MedicineEntry {
    pub name: String,
    pub kind: String,
}

impl MedicineEntry {
    pub fn new(name: &str, kind: &str) -> Self {
        MedicineEntry {
            name: name.trim().to_lowercase(),
            kind: kind.trim().to_lowercase(),
        }
    }
}

/// How a non-root node participates in a line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", from = "NodeModeRepr")]
pub enum NodeMode {
    Required,
    #[default]
    Optional,
    Disabled,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NodeModeRepr {
    Flag(bool),
    Named(NamedMode),
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum NamedMode {
    Required,
    Optional,
    Disabled,
}

impl From<NodeModeRepr> for NodeMode {
    fn from(r: NodeModeRepr) -> Self {
        match r {
            NodeModeRepr::Flag(true) => NodeMode::Optional,
            NodeModeRepr::Flag(false) => NodeMode::Required,
            NodeModeRepr::Named(NamedMode::Required) => NodeMode::Required,
            NodeModeRepr::Named(NamedMode::Optional) => NodeMode::Optional,
            NodeModeRepr::Named(NamedMode::Disabled) => NodeMode::Disabled,
        }
    }
}

/// Participation of the enumeration, type and suffix nodes. The root name is
/// always emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeFlags {
    pub enumeration: NodeMode,
    pub kind: NodeMode,
    pub suffix: NodeMode,
}

impl Default for NodeFlags {
    fn default() -> Self {
        NodeFlags {
            enumeration: NodeMode::Optional,
            kind: NodeMode::Optional,
            suffix: NodeMode::Optional,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrammarSpec {
    pub enum_tokens: Vec<String>,
    /// Surface forms per medicine kind. Kinds without an entry use the kind itself.
    pub type_tokens: BTreeMap<String, Vec<String>>,
    /// Suffix forms; `{n}` expands to every value of `numbers`.
    pub suffix_tokens: Vec<String>,
    pub numbers: Vec<String>,
    pub optional_flags: NodeFlags,
    pub entries: Vec<MedicineEntry>,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut type_tokens = BTreeMap::new();
        for (kind, forms) in [
            ("tab", &["tab", "tab."][..]),
            ("cap", &["cap", "cap."][..]),
            ("inj", &["inj", "inj."][..]),
            ("syp", &["syp", "syrup"][..]),
            ("oint", &["oint", "ointment"][..]),
        ] {
            type_tokens.insert(kind.to_string(), strings(forms));
        }
        GrammarSpec {
            enum_tokens: strings(&["-", ".", "1.", "2.", "1)", "*"]),
            type_tokens,
            suffix_tokens: strings(&[
                "{n}mg", "{n}ml", "1-0-1", "1-1-1", "0-0-1", "1-0-0", "sos", "od", "bd",
            ]),
            numbers: strings(&["250", "500", "650", "5", "10"]),
            optional_flags: NodeFlags::default(),
            entries: Vec::new(),
        }
    }
}

/// Ordered choice list of one grammar node.
#[derive(Debug, Clone)]
struct NodeChoices {
    optional: bool,
    choices: Vec<String>,
}

fn dedup_keep_order(v: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    v.into_iter().filter(|s| seen.insert(s.clone())).collect()
}

impl GrammarSpec {
    pub fn from_json(text: &str) -> Result<GrammarSpec, GrammarError> {
        let spec: GrammarSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GrammarSpec, GrammarError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn with_entries(mut self, entries: Vec<MedicineEntry>) -> Self {
        self.entries = entries;
        self
    }

    /// Spec restricted to the first `ceil(fraction * n)` entries (at least one).
    pub fn with_vocab_fraction(&self, fraction: f64) -> GrammarSpec {
        let n = self.entries.len();
        let keep = ((fraction.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1.min(n), n);
        GrammarSpec {
            entries: self.entries[..keep].to_vec(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        let check = |mode: NodeMode, tokens: &[String], what: &str| {
            if mode != NodeMode::Disabled && tokens.is_empty() {
                return Err(GrammarError::Invalid(format!("{what} node is enabled but has no tokens")));
            }
            if tokens.iter().any(|t| t.trim().is_empty()) {
                return Err(GrammarError::Invalid(format!("{what} node has an empty token")));
            }
            Ok(())
        };
        check(self.optional_flags.enumeration, &self.enum_tokens, "enumeration")?;
        check(self.optional_flags.suffix, &self.suffix_tokens, "suffix")?;
        for (kind, forms) in &self.type_tokens {
            check(self.optional_flags.kind, forms, &format!("type {kind:?}"))?;
        }
        if self.suffix_tokens.iter().any(|t| t.contains("{n}")) && self.numbers.is_empty() {
            return Err(GrammarError::Invalid("suffix template {n} needs numbers".into()));
        }
        if let Some(e) = self.entries.iter().find(|e| e.name.trim().is_empty()) {
            return Err(GrammarError::Invalid(format!("entry with empty name (kind {:?})", e.kind)));
        }
        Ok(())
    }

    fn suffix_choices(&self) -> Vec<String> {
        dedup_keep_order(self.suffix_tokens.iter().flat_map(|t| {
            if t.contains("{n}") {
                self.numbers.iter().map(|n| t.replace("{n}", n)).collect::<Vec<_>>()
            } else {
                vec![t.clone()]
            }
        }))
    }

    /// Nodes in emission order for one entry; disabled nodes are left out.
    fn nodes_for(&self, entry: &MedicineEntry) -> Vec<NodeChoices> {
        let mut nodes = Vec::with_capacity(4);
        let mut push = |mode: NodeMode, choices: Vec<String>| {
            if mode != NodeMode::Disabled {
                nodes.push(NodeChoices {
                    optional: mode == NodeMode::Optional,
                    choices,
                });
            }
        };
        let flags = self.optional_flags;
        push(flags.enumeration, dedup_keep_order(self.enum_tokens.iter().cloned()));
        let kinds = self
            .type_tokens
            .get(&entry.kind)
            .cloned()
            .unwrap_or_else(|| vec![entry.kind.clone()]);
        let kinds = if entry.kind.is_empty() && !self.type_tokens.contains_key("") {
            Vec::new()
        } else {
            dedup_keep_order(kinds)
        };
        if !kinds.is_empty() {
            push(flags.kind, kinds);
        }
        push(NodeMode::Required, vec![entry.name.clone()]);
        push(flags.suffix, self.suffix_choices());
        nodes
    }
}

/// Samples one line for `entry`; deterministic in `seed`.
pub fn sample_line(spec: &GrammarSpec, entry: &MedicineEntry, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_line_with(spec, entry, &mut rng)
}

pub fn sample_line_with<R: Rng + ?Sized>(spec: &GrammarSpec, entry: &MedicineEntry, rng: &mut R) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(4);
    let nodes = spec.nodes_for(entry);
    for node in &nodes {
        if node.optional && !rng.random_bool(0.5) {
            continue;
        }
        let i = rng.random_range(0..node.choices.len());
        parts.push(&node.choices[i]);
    }
    parts.join(" ")
}

/// Closed-form number of distinct lines for `entry`.
pub fn count_lines(spec: &GrammarSpec, entry: &MedicineEntry) -> u128 {
    spec.nodes_for(entry)
        .iter()
        .map(|n| n.choices.len() as u128 + n.optional as u128)
        .product()
}

/// Every line for `entry` in choice-index order (skip before the first choice,
/// last node varying fastest). `limit = 0` means unbounded.
pub fn enumerate_lines(
    spec: &GrammarSpec,
    entry: &MedicineEntry,
    limit: u128,
) -> Result<Vec<String>, GrammarError> {
    let count = count_lines(spec, entry);
    if limit != 0 && count > limit {
        return Err(GrammarError::TooManyLines { count, limit });
    }
    let nodes = spec.nodes_for(entry);
    let radix: Vec<usize> = nodes.iter().map(|n| n.choices.len() + n.optional as usize).collect();
    let mut digits = vec![0usize; nodes.len()];
    let mut out = Vec::with_capacity(count as usize);
    let mut parts: Vec<&str> = Vec::with_capacity(nodes.len());
    loop {
        parts.clear();
        for (node, &d) in nodes.iter().zip(&digits) {
            match (node.optional, d) {
                (true, 0) => {}
                (true, d) => parts.push(&node.choices[d - 1]),
                (false, d) => parts.push(&node.choices[d]),
            }
        }
        out.push(parts.join(" "));
        let mut pos = digits.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < radix[pos] {
                break;
            }
            digits[pos] = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusMode {
    Exhaustive,
    Sampled,
}

/// Corpus over all entries of `spec`, entry by entry.
pub fn build_corpus(
    spec: &GrammarSpec,
    mode: CorpusMode,
    samples_per_entry: usize,
    seed: u64,
) -> Result<Vec<String>, GrammarError> {
    if spec.entries.is_empty() {
        return Err(GrammarError::NoEntries);
    }
    let mut out = Vec::new();
    match mode {
        CorpusMode::Exhaustive => {
            for entry in &spec.entries {
                out.extend(enumerate_lines(spec, entry, 0)?);
            }
        }
        CorpusMode::Sampled => {
            if samples_per_entry == 0 {
                return Err(GrammarError::NoSamples);
            }
            for (i, entry) in spec.entries.iter().enumerate() {
                let entry_seed = derive_seed(seed, i as u64);
                for s in 0..samples_per_entry {
                    out.push(sample_line(spec, entry, derive_seed(entry_seed, s as u64)));
                }
            }
        }
    }
    Ok(out)
}

/// Medicine vocabulary with a lower-cased name index.
#[derive(Debug, Clone, Default)]
pub struct MedicineVocabulary {
    entries: Vec<MedicineEntry>,
    index: HashMap<String, usize>,
}

impl MedicineVocabulary {
    pub fn new(entries: impl IntoIterator<Item = MedicineEntry>) -> Result<Self, GrammarError> {
        let mut vocab = MedicineVocabulary::default();
        for e in entries {
            let e = MedicineEntry::new(&e.name, &e.kind);
            if e.name.is_empty() {
                return Err(GrammarError::Invalid("empty medicine name".into()));
            }
            if vocab.index.contains_key(&e.name) {
                return Err(GrammarError::DuplicateName(e.name));
            }
            vocab.index.insert(e.name.clone(), vocab.entries.len());
            vocab.entries.push(e);
        }
        Ok(vocab)
    }

    /// Parses `name<TAB>kind` lines; blank lines and `#` comments are skipped.
    pub fn from_tsv(text: &str) -> Result<Self, GrammarError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, kind) = line.split_once('\t').ok_or_else(|| GrammarError::Vocabulary {
                line: i + 1,
                message: "expected name<TAB>kind".into(),
            })?;
            if name.trim().is_empty() {
                return Err(GrammarError::Vocabulary {
                    line: i + 1,
                    message: "empty medicine name".into(),
                });
            }
            entries.push(MedicineEntry::new(name, kind));
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GrammarError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        self.entries.iter().map(|e| format!("{}\t{}\n", e.name, e.kind)).collect()
    }

    pub fn entries(&self) -> &[MedicineEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Case-insensitive membership.
    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn get(&self, name: &str) -> Option<&MedicineEntry> {
        let key = name.to_lowercase();
        self.index.get(key.as_str()).map(|&i| &self.entries[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }
}
