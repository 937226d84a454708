//! In-vocabulary prediction from ranked decoder hypotheses.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoder::DecodedPath;
use crate::grammar::MedicineVocabulary;

pub const DEFAULT_EDIT_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Exact vocabulary match in the best hypothesis only.
    Top1Exact,
    /// Nearest vocabulary name to the best hypothesis by normalized
    /// Levenshtein similarity, accepted at or above `threshold`.
    Top1Edit { threshold: f64 },
    /// First exact match scanning hypotheses best-first.
    TopKFirst,
    /// Most frequent exact match over all hypotheses, one vote per hypothesis
    /// for its primary match; ties go to the name matched at the best rank.
    TopKMajority,
}

impl MatchStrategy {
    pub const ALL: [MatchStrategy; 4] = [
        MatchStrategy::Top1Exact,
        MatchStrategy::Top1Edit {
            threshold: DEFAULT_EDIT_THRESHOLD,
        },
        MatchStrategy::TopKFirst,
        MatchStrategy::TopKMajority,
    ];

    pub fn validate(&self) -> Result<(), String> {
        match self {
            MatchStrategy::Top1Edit { threshold } if !(0.0..=1.0).contains(threshold) => {
                Err(format!("edit threshold {threshold} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MatchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchStrategy::Top1Exact => write!(f, "top1_exact"),
            MatchStrategy::Top1Edit { threshold } => write!(f, "top1_edit:{threshold}"),
            MatchStrategy::TopKFirst => write!(f, "topk_first"),
            MatchStrategy::TopKMajority => write!(f, "topk_majority"),
        }
    }
}

impl FromStr for MatchStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let strategy = match name {
            "top1_exact" | "top1" => MatchStrategy::Top1Exact,
            "top1_edit" => MatchStrategy::Top1Edit {
                threshold: match arg {
                    Some(a) => a.parse().map_err(|_| format!("bad threshold {a:?}"))?,
                    None => DEFAULT_EDIT_THRESHOLD,
                },
            },
            "topk_first" | "topk" => MatchStrategy::TopKFirst,
            "topk_majority" | "majority" => MatchStrategy::TopKMajority,
            _ => return Err(format!("unknown strategy {s:?}")),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinePrediction {
    pub medicine: Option<String>,
    pub matched_rank: Option<usize>,
    pub vote_count: usize,
}

impl AsRef<str> for DecodedPath {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

/// Candidate strings of a decoded line: at every token position the token
/// bigram first, then the token itself. Lower-cased.
pub fn candidates(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower.split_whitespace().collect();
    let mut out = Vec::with_capacity(tokens.len() * 2);
    for i in 0..tokens.len() {
        if i + 1 < tokens.len() {
            out.push(format!("{} {}", tokens[i], tokens[i + 1]));
        }
        out.push(tokens[i].to_string());
    }
    out
}

/// Distinct vocabulary names found in `text`, in candidate order.
pub fn exact_matches(text: &str, vocab: &MedicineVocabulary) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in candidates(text) {
        if let Some(e) = vocab.get(&c) {
            if !out.contains(&e.name) {
                out.push(e.name.clone());
            }
        }
    }
    out
}

/// `1 - levenshtein(a, b) / max(|a|, |b|)` over characters; 1 for two empty strings.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / longest as f64
}

pub fn match_line<P: AsRef<str>>(paths: &[P], vocab: &MedicineVocabulary, strategy: MatchStrategy) -> LinePrediction {
    let found = |medicine: String, rank: usize, votes: usize| LinePrediction {
        medicine: Some(medicine),
        matched_rank: Some(rank),
        vote_count: votes,
    };
    match strategy {
        MatchStrategy::Top1Exact => paths
            .first()
            .and_then(|p| exact_matches(p.as_ref(), vocab).into_iter().next())
            .map(|m| found(m, 0, 1))
            .unwrap_or_default(),
        MatchStrategy::Top1Edit { threshold } => {
            let Some(first) = paths.first() else {
                return LinePrediction::default();
            };
            // Ties: earlier candidate first, then name ascending.
            let mut best: Option<(f64, &str)> = None;
            for cand in candidates(first.as_ref()) {
                let mut local: Option<(f64, &str)> = None;
                for name in vocab.names() {
                    let sim = normalized_similarity(&cand, name);
                    let better = match local {
                        None => true,
                        Some((s, n)) => sim > s || (sim == s && name < n),
                    };
                    if better {
                        local = Some((sim, name));
                    }
                }
                if let Some((sim, name)) = local {
                    if best.is_none_or(|(s, _)| sim > s) {
                        best = Some((sim, name));
                    }
                }
            }
            match best {
                Some((sim, name)) if sim >= threshold => found(name.to_string(), 0, 1),
                _ => LinePrediction::default(),
            }
        }
        MatchStrategy::TopKFirst => paths
            .iter()
            .enumerate()
            .find_map(|(rank, p)| exact_matches(p.as_ref(), vocab).into_iter().next().map(|m| found(m, rank, 1)))
            .unwrap_or_default(),
        MatchStrategy::TopKMajority => {
            // name -> (votes, best rank); a path votes for its primary match
            let mut tally: HashMap<String, (usize, usize)> = HashMap::new();
            for (rank, p) in paths.iter().enumerate() {
                if let Some(m) = exact_matches(p.as_ref(), vocab).into_iter().next() {
                    tally.entry(m).and_modify(|e| e.0 += 1).or_insert((1, rank));
                }
            }
            tally
                .into_iter()
                .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
                .map(|(name, (votes, rank))| found(name, rank, votes))
                .unwrap_or_default()
        }
    }
}

/// Union of the per-line predictions of a document.
pub fn predict_document<P: AsRef<str>>(
    lines: &[Vec<P>],
    vocab: &MedicineVocabulary,
    strategy: MatchStrategy,
) -> BTreeSet<String> {
    lines
        .iter()
        .filter_map(|paths| match_line(paths, vocab, strategy).medicine)
        .map(|m| m.to_lowercase())
        .collect()
}
