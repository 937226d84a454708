//! Character n-gram language model with absolute discounting and interpolated
//! backoff, stored ARPA-style.
//!
//! Contexts live in a trie keyed from the most recent character backwards, so
//! a single walk from the root visits every backoff level of a history. The
//! parent of a context node is therefore exactly its backoff context.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rustc_hash::FxHashMap;

pub type SymbolId = u32;

pub const BOS_ID: SymbolId = 0;
pub const EOS_ID: SymbolId = 1;
pub const UNK_ID: SymbolId = 2;
const FIRST_CHAR_ID: SymbolId = 3;

pub const DEFAULT_ORDER: usize = 9;
pub const DEFAULT_DISCOUNT: f64 = 0.4;

/// Log10 value marking an entry that exists only as a context.
const CONTEXT_ONLY_LOG10: f64 = -99.0;
const NO_PARENT: u32 = u32::MAX;

/// A symbol of the model alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Bos,
    Eos,
    Unk,
    Char(char),
}

impl From<char> for Token {
    fn from(c: char) -> Self {
        Token::Char(c)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid order {0}")]
    InvalidOrder(usize),
    #[error("invalid discount {0}, expected a value in (0, 1)")]
    InvalidDiscount(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
struct ContextNode {
    parent: u32,
    /// Oldest symbol of this context (the one prepended to the parent context).
    symbol: SymbolId,
    depth: u32,
    /// Natural-log backoff weight applied when a continuation is not stored here.
    backoff: f64,
    /// Stored continuations, sorted by symbol, natural-log probabilities.
    next: Vec<(SymbolId, f64)>,
    children: Vec<(SymbolId, u32)>,
}

impl ContextNode {
    fn new(parent: u32, symbol: SymbolId, depth: u32) -> Self {
        ContextNode {
            parent,
            symbol,
            depth,
            backoff: 0.0,
            next: Vec::new(),
            children: Vec::new(),
        }
    }

    fn child(&self, symbol: SymbolId) -> Option<u32> {
        self.children
            .binary_search_by_key(&symbol, |c| c.0)
            .ok()
            .map(|i| self.children[i].1)
    }

    fn stored(&self, symbol: SymbolId) -> Option<f64> {
        self.next
            .binary_search_by_key(&symbol, |c| c.0)
            .ok()
            .map(|i| self.next[i].1)
    }
}

/// Character n-gram model. Immutable after training or loading.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    chars: Vec<char>,
    char_ids: FxHashMap<char, SymbolId>,
    nodes: Vec<ContextNode>,
}

/// Trains a model of the given order on `corpus`.
///
/// Each line is lower-cased and wrapped with `order - 1` begin markers and one
/// end marker. Highest-order estimates are absolute-discounted frequencies;
/// the discounted mass of every context is spread over its backoff context,
/// and at the unigram level over a uniform distribution that includes the
/// unknown symbol.
pub fn train_ngram<S: AsRef<str>>(
    corpus: &[S],
    order: usize,
    discount: f64,
) -> Result<NGramModel, LmError> {
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    if order < 1 {
        return Err(LmError::InvalidOrder(order));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(LmError::InvalidDiscount(discount));
    }

    let lines: Vec<String> = corpus.iter().map(|l| l.as_ref().to_lowercase()).collect();
    let alphabet: BTreeSet<char> = lines.iter().flat_map(|l| l.chars()).collect();
    let chars: Vec<char> = alphabet.into_iter().collect();
    let char_ids = char_index(&chars);

    struct CountNode {
        parent: u32,
        symbol: SymbolId,
        depth: u32,
        children: FxHashMap<SymbolId, u32>,
        counts: FxHashMap<SymbolId, u64>,
    }
    let fresh = |parent, symbol, depth| CountNode {
        parent,
        symbol,
        depth,
        children: FxHashMap::default(),
        counts: FxHashMap::default(),
    };
    let mut counts = vec![fresh(NO_PARENT, BOS_ID, 0)];

    let mut seq: Vec<SymbolId> = Vec::new();
    for line in &lines {
        seq.clear();
        seq.extend(std::iter::repeat_n(BOS_ID, order - 1));
        seq.extend(line.chars().map(|c| char_ids[&c]));
        seq.push(EOS_ID);
        for i in (order - 1)..seq.len() {
            let w = seq[i];
            let mut node = 0usize;
            *counts[node].counts.entry(w).or_insert(0) += 1;
            for l in 1..order {
                let sym = seq[i - l];
                let next = match counts[node].children.get(&sym) {
                    Some(&c) => c as usize,
                    None => {
                        let id = counts.len();
                        counts.push(fresh(node as u32, sym, l as u32));
                        counts[node].children.insert(sym, id as u32);
                        id
                    }
                };
                node = next;
                *counts[node].counts.entry(w).or_insert(0) += 1;
            }
        }
    }

    // Parents precede children in `counts`, so a single forward pass sees
    // every backoff distribution finalized before it is needed.
    let predictable = chars.len() as f64 + 2.0;
    let mut model = NGramModel {
        order,
        chars,
        char_ids,
        nodes: Vec::with_capacity(counts.len()),
    };
    for (idx, cn) in counts.iter().enumerate() {
        let total: u64 = cn.counts.values().sum();
        let types = cn.counts.len() as f64;
        let total_f = total as f64;
        let gamma = discount * types / total_f;
        let mut node = ContextNode::new(cn.parent, cn.symbol, cn.depth);
        node.backoff = gamma.ln();
        let mut next: Vec<(SymbolId, f64)> = cn
            .counts
            .iter()
            .map(|(&w, &c)| {
                let lower = if idx == 0 {
                    1.0 / predictable
                } else {
                    model.prob_from(cn.parent, w).exp()
                };
                let p = (c as f64 - discount) / total_f + gamma * lower;
                (w, p.ln())
            })
            .collect();
        if idx == 0 {
            next.push((UNK_ID, (gamma / predictable).ln()));
        }
        next.sort_by_key(|e| e.0);
        node.next = next;
        let mut children: Vec<(SymbolId, u32)> =
            cn.children.iter().map(|(&s, &c)| (s, c)).collect();
        children.sort_by_key(|c| c.0);
        node.children = children;
        model.nodes.push(node);
    }
    Ok(model)
}

fn char_index(chars: &[char]) -> FxHashMap<char, SymbolId> {
    chars
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, FIRST_CHAR_ID + i as SymbolId))
        .collect()
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of symbol ids, including the reserved markers.
    pub fn vocab_size(&self) -> usize {
        self.chars.len() + FIRST_CHAR_ID as usize
    }

    /// Characters seen in training, in id order.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Full alphabet: reserved markers followed by the characters.
    pub fn alphabet(&self) -> Vec<Token> {
        let mut out = vec![Token::Bos, Token::Eos, Token::Unk];
        out.extend(self.chars.iter().map(|&c| Token::Char(c)));
        out
    }

    /// Id of a character after lower-casing; unseen characters map to the unknown symbol.
    pub fn char_id(&self, c: char) -> SymbolId {
        let mut lower = c.to_lowercase();
        let lc = match (lower.next(), lower.next()) {
            (Some(l), None) => l,
            _ => return UNK_ID,
        };
        self.char_ids.get(&lc).copied().unwrap_or(UNK_ID)
    }

    pub fn token_id(&self, token: Token) -> SymbolId {
        match token {
            Token::Bos => BOS_ID,
            Token::Eos => EOS_ID,
            Token::Unk => UNK_ID,
            Token::Char(c) => self.char_id(c),
        }
    }

    pub fn token(&self, id: SymbolId) -> Token {
        match id {
            BOS_ID => Token::Bos,
            EOS_ID => Token::Eos,
            UNK_ID => Token::Unk,
            _ => Token::Char(self.chars[(id - FIRST_CHAR_ID) as usize]),
        }
    }

    /// History ids for `text`, padded with `order - 1` begin markers.
    pub fn history_ids(&self, text: &str) -> Vec<SymbolId> {
        let mut ids = vec![BOS_ID; self.order - 1];
        ids.extend(text.chars().map(|c| self.char_id(c)));
        ids
    }

    /// Log-probability of `next` after `history`, treating the history as the
    /// start of a line (begin-padded).
    pub fn score_next(&self, history: &str, next: impl Into<Token>) -> f64 {
        let ctx = self.history_ids(history);
        self.log_prob_ids(&ctx, self.token_id(next.into()))
    }

    /// Log-probability of `text` followed by the end marker.
    pub fn score_sequence(&self, text: &str) -> f64 {
        let mut ctx = vec![BOS_ID; self.order - 1];
        let mut total = 0.0;
        for c in text.chars() {
            let id = self.char_id(c);
            total += self.log_prob_ids(&ctx, id);
            ctx.push(id);
        }
        total + self.log_prob_ids(&ctx, EOS_ID)
    }

    /// Log-probability of `next` given an explicit token context; only the
    /// last `order - 1` tokens are used.
    pub fn log_prob(&self, context: &[Token], next: Token) -> f64 {
        let ctx: Vec<SymbolId> = context.iter().map(|&t| self.token_id(t)).collect();
        self.log_prob_ids(&ctx, self.token_id(next))
    }

    pub fn log_prob_ids(&self, context: &[SymbolId], next: SymbolId) -> f64 {
        self.traced_log_prob_ids(context, next).0
    }

    /// Like [`NGramModel::log_prob_ids`], also returning the context length
    /// whose table supplied the stored probability.
    pub fn traced_log_prob_ids(&self, context: &[SymbolId], next: SymbolId) -> (f64, usize) {
        let mut path = [0u32; 64];
        let depth = self.walk(context, &mut path);
        let mut acc = 0.0;
        for level in (0..=depth).rev() {
            let node = &self.nodes[path[level] as usize];
            if let Some(lp) = node.stored(next) {
                return (acc + lp, level);
            }
            acc += node.backoff;
        }
        (f64::NEG_INFINITY, 0)
    }

    /// Writes the log-probability of every symbol id after `context` into `out`
    /// (length [`NGramModel::vocab_size`]). The begin marker gets negative infinity.
    pub fn distribution_ids(&self, context: &[SymbolId], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.vocab_size());
        let mut path = [0u32; 64];
        let depth = self.walk(context, &mut path);
        out.fill(f64::NEG_INFINITY);
        for &(s, lp) in &self.nodes[0].next {
            out[s as usize] = lp;
        }
        for &node_id in path.iter().take(depth + 1).skip(1) {
            let node = &self.nodes[node_id as usize];
            for v in out.iter_mut() {
                *v += node.backoff;
            }
            for &(s, lp) in &node.next {
                out[s as usize] = lp;
            }
        }
    }

    /// Fills `path` with the nodes of successively longer stored suffixes of
    /// `context`; returns the deepest level reached.
    fn walk(&self, context: &[SymbolId], path: &mut [u32; 64]) -> usize {
        let max = (self.order - 1).min(context.len()).min(63);
        let mut node = 0u32;
        path[0] = 0;
        let mut depth = 0;
        for l in 1..=max {
            match self.nodes[node as usize].child(context[context.len() - l]) {
                Some(c) => {
                    node = c;
                    depth = l;
                    path[l] = c;
                }
                None => break,
            }
        }
        depth
    }

    /// Backoff walk towards the root starting at `node`.
    fn prob_from(&self, mut node: u32, next: SymbolId) -> f64 {
        let mut acc = 0.0;
        loop {
            let n = &self.nodes[node as usize];
            if let Some(lp) = n.stored(next) {
                return acc + lp;
            }
            acc += n.backoff;
            if n.parent == NO_PARENT {
                return f64::NEG_INFINITY;
            }
            node = n.parent;
        }
    }

    /// Forward-order symbols of the context a node represents.
    fn context_of(&self, mut node: u32) -> Vec<SymbolId> {
        let mut out = Vec::with_capacity(self.nodes[node as usize].depth as usize);
        while node != 0 {
            let n = &self.nodes[node as usize];
            out.push(n.symbol);
            node = n.parent;
        }
        out
    }

    fn find_context(&self, context: &[SymbolId]) -> Option<u32> {
        let mut node = 0u32;
        for &sym in context.iter().rev() {
            node = self.nodes[node as usize].child(sym)?;
        }
        Some(node)
    }

    /// Context-length breakdown of the stored tables (index = context length).
    pub fn contexts_per_length(&self) -> Vec<usize> {
        let mut out = vec![0; self.order];
        for n in &self.nodes {
            out[n.depth as usize] += 1;
        }
        out
    }

    /// Stored contexts in forward order, for inspection and tests.
    pub fn stored_contexts(&self) -> Vec<Vec<Token>> {
        (0..self.nodes.len() as u32)
            .map(|n| self.context_of(n).into_iter().map(|s| self.token(s)).collect())
            .collect()
    }

    fn render_symbol(&self, id: SymbolId, out: &mut String) {
        match self.token(id) {
            Token::Bos => out.push_str("<s>"),
            Token::Eos => out.push_str("</s>"),
            Token::Unk => out.push_str("<unk>"),
            Token::Char(' ') => out.push_str("<sp>"),
            Token::Char(c) if c.is_whitespace() || c.is_control() || c == '<' => {
                let _ = write!(out, "<U+{:04X}>", c as u32);
            }
            Token::Char(c) => out.push(c),
        }
    }

    /// Serializes to ARPA-style text: log10 probabilities, one
    /// `logprob<TAB>ngram<TAB>backoff` line per entry, tokens space-separated.
    pub fn to_arpa(&self) -> String {
        let mut sections: Vec<Vec<(Vec<SymbolId>, f64, f64)>> = vec![Vec::new(); self.order];
        for (idx, node) in self.nodes.iter().enumerate() {
            let ctx = self.context_of(idx as u32);
            for &(w, lp) in &node.next {
                let mut gram = ctx.clone();
                gram.push(w);
                let backoff = if gram.len() < self.order && w != EOS_ID && w != UNK_ID {
                    self.find_context(&gram)
                        .map(|c| self.nodes[c as usize].backoff)
                        .unwrap_or(0.0)
                } else {
                    0.0
                };
                sections[gram.len() - 1].push((gram, lp, backoff));
            }
            if ctx.last() == Some(&BOS_ID) {
                sections[ctx.len() - 1].push((ctx, f64::NAN, node.backoff));
            }
        }
        let ln10 = std::f64::consts::LN_10;
        let mut out = String::from("\\data\\\n");
        for (k, s) in sections.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", k + 1, s.len());
        }
        for (k, mut s) in sections.into_iter().enumerate() {
            s.sort_by(|a, b| a.0.cmp(&b.0));
            let _ = write!(out, "\n\\{}-grams:\n", k + 1);
            for (gram, lp, bo) in s {
                if lp.is_nan() {
                    let _ = write!(out, "{}\t", CONTEXT_ONLY_LOG10);
                } else {
                    let _ = write!(out, "{}\t", (lp / ln10).min(0.0));
                }
                for (i, &sym) in gram.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    self.render_symbol(sym, &mut out);
                }
                let _ = writeln!(out, "\t{}", bo / ln10);
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    /// Parses the text produced by [`NGramModel::to_arpa`].
    pub fn from_arpa(text: &str) -> Result<NGramModel, LmError> {
        let err = |line: usize, message: String| LmError::Parse { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

        // Header.
        let mut last_line = 0;
        loop {
            let Some((no, l)) = lines.next() else {
                return Err(err(last_line + 1, "missing \\data\\ header".into()));
            };
            last_line = no;
            if l.trim() == "\\data\\" {
                break;
            }
        }
        let mut expected: Vec<usize> = Vec::new();
        let mut pending: Option<(usize, usize)> = None;
        for (no, l) in lines.by_ref() {
            last_line = no;
            let l = l.trim();
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix("ngram ") {
                let (k, n) = rest
                    .split_once('=')
                    .ok_or_else(|| err(no, format!("malformed count line {l:?}")))?;
                let k: usize = k.trim().parse().map_err(|_| err(no, format!("bad order {k:?}")))?;
                let n: usize = n.trim().parse().map_err(|_| err(no, format!("bad count {n:?}")))?;
                if k != expected.len() + 1 {
                    return Err(err(no, format!("expected ngram {} count", expected.len() + 1)));
                }
                expected.push(n);
            } else if let Some(k) = section_header(l) {
                pending = Some((no, k));
                break;
            } else {
                return Err(err(no, format!("unexpected line {l:?} in header")));
            }
        }
        let order = expected.len();
        if order == 0 {
            return Err(err(last_line, "no ngram counts in header".into()));
        }

        let mut entries: Vec<Vec<(Vec<Token>, f64, f64)>> = vec![Vec::new(); order];
        let mut current: Option<usize> = None;
        if let Some((no, k)) = pending {
            if k != 1 {
                return Err(err(no, format!("expected \\1-grams: section, found \\{k}-grams:")));
            }
            current = Some(1);
        }
        let mut ended = false;
        for (no, l) in lines.by_ref() {
            last_line = no;
            if l.trim().is_empty() {
                continue;
            }
            if l.trim() == "\\end\\" {
                ended = true;
                break;
            }
            if let Some(k) = section_header(l.trim()) {
                let cur = current.unwrap_or(0);
                if k != cur + 1 || k > order {
                    return Err(err(no, format!("unexpected section \\{k}-grams:")));
                }
                if entries[cur - 1].len() != expected[cur - 1] {
                    return Err(err(
                        no,
                        format!(
                            "section {cur} has {} entries, header declares {}",
                            entries[cur - 1].len(),
                            expected[cur - 1]
                        ),
                    ));
                }
                current = Some(k);
                continue;
            }
            let k = current.ok_or_else(|| err(no, "entry outside of a section".into()))?;
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(no, format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let lp: f64 = fields[0]
                .parse()
                .map_err(|_| err(no, format!("bad log-probability {:?}", fields[0])))?;
            let bo: f64 = fields[2]
                .parse()
                .map_err(|_| err(no, format!("bad backoff {:?}", fields[2])))?;
            if !bo.is_finite() || !(lp.is_finite() && lp <= 1e-9) {
                return Err(err(no, "non-finite or positive value".into()));
            }
            let gram = fields[1]
                .split(' ')
                .map(parse_symbol)
                .collect::<Option<Vec<Token>>>()
                .ok_or_else(|| err(no, format!("bad token in {:?}", fields[1])))?;
            if gram.len() != k {
                return Err(err(no, format!("expected {k} tokens, found {}", gram.len())));
            }
            entries[k - 1].push((gram, lp, bo));
        }
        if !ended {
            return Err(err(last_line + 1, "truncated file: missing \\end\\".into()));
        }
        let last = current.unwrap_or(0);
        if last != order || entries[order - 1].len() != expected[order - 1] {
            return Err(err(last_line, "truncated file: sections incomplete".into()));
        }

        let chars: Vec<char> = entries[0]
            .iter()
            .filter_map(|(g, _, _)| match g[0] {
                Token::Char(c) => Some(c),
                _ => None,
            })
            .collect::<BTreeSet<char>>()
            .into_iter()
            .collect();
        let mut model = NGramModel {
            order,
            char_ids: char_index(&chars),
            chars,
            nodes: vec![ContextNode::new(NO_PARENT, BOS_ID, 0)],
        };
        let ln10 = std::f64::consts::LN_10;
        for section in &entries {
            for (gram, lp, bo) in section {
                let ids: Vec<SymbolId> = gram
                    .iter()
                    .map(|&t| match t {
                        Token::Char(c) if !model.char_ids.contains_key(&c) => None,
                        t => Some(model.token_id(t)),
                    })
                    .collect::<Option<_>>()
                    .ok_or_else(|| err(0, "character missing from unigram section".into()))?;
                let (ctx, w) = ids.split_at(ids.len() - 1);
                let w = w[0];
                if *lp != CONTEXT_ONLY_LOG10 {
                    let node = model.ensure_context(ctx);
                    model.nodes[node as usize].next.push((w, lp.min(0.0) * ln10));
                }
                if ids.len() < order && w != EOS_ID && w != UNK_ID {
                    let node = model.ensure_context(&ids);
                    model.nodes[node as usize].backoff = bo * ln10;
                }
            }
        }
        for node in &mut model.nodes {
            node.next.sort_by_key(|e| e.0);
            node.children.sort_by_key(|e| e.0);
        }
        Ok(model)
    }

    fn ensure_context(&mut self, context: &[SymbolId]) -> u32 {
        let mut node = 0u32;
        for &sym in context.iter().rev() {
            let existing = self.nodes[node as usize]
                .children
                .iter()
                .find(|c| c.0 == sym)
                .map(|c| c.1);
            node = match existing {
                Some(c) => c,
                None => {
                    let id = self.nodes.len() as u32;
                    let depth = self.nodes[node as usize].depth + 1;
                    self.nodes.push(ContextNode::new(node, sym, depth));
                    self.nodes[node as usize].children.push((sym, id));
                    id
                }
            };
        }
        node
    }
}

fn section_header(l: &str) -> Option<usize> {
    l.strip_prefix('\\')?.strip_suffix("-grams:")?.parse().ok()
}

fn parse_symbol(s: &str) -> Option<Token> {
    match s {
        "<s>" => Some(Token::Bos),
        "</s>" => Some(Token::Eos),
        "<unk>" => Some(Token::Unk),
        "<sp>" => Some(Token::Char(' ')),
        _ => {
            if let Some(hex) = s.strip_prefix("<U+").and_then(|r| r.strip_suffix('>')) {
                return u32::from_str_radix(hex, 16).ok().and_then(char::from_u32).map(Token::Char);
            }
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Some(Token::Char(c)),
                _ => None,
            }
        }
    }
}

pub fn save_lm(model: &NGramModel, path: impl AsRef<Path>) -> Result<(), LmError> {
    std::fs::write(path, model.to_arpa())?;
    Ok(())
}

pub fn load_lm(path: impl AsRef<Path>) -> Result<NGramModel, LmError> {
    let text = std::fs::read_to_string(path)?;
    NGramModel::from_arpa(&text)
}
