//! Oracles shared by the integration targets.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rxdecode_core::decoder::collapse;
use rxdecode_core::{decode_topk, train_ngram, DecoderConfig, LogitMatrix, NGramModel};

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// (text, combined, optical) for every collapsed string, best first.
pub fn brute_force(m: &LogitMatrix, lm: Option<&NGramModel>, alpha: f64) -> Vec<(String, f64, f64)> {
    let (t, a) = (m.frames(), m.symbols());
    let mut groups: HashMap<String, Vec<f64>> = HashMap::new();
    let mut labels = vec![0usize; t];
    for code in 0..a.pow(t as u32) {
        let mut c = code;
        let mut score = 0.0;
        for (f, l) in labels.iter_mut().enumerate() {
            *l = c % a;
            c /= a;
            score += m.log_prob(f, *l);
        }
        groups.entry(collapse(&labels, m.alphabet())).or_default().push(score);
    }
    let mut out: Vec<(String, f64, f64)> = groups
        .into_iter()
        .map(|(text, scores)| {
            let optical = log_sum_exp(&scores);
            let lm_score = lm.map_or(0.0, |lm| lm.score_sequence(&text));
            let combined = if alpha > 0.0 { optical + alpha * lm_score } else { optical };
            (text, combined, optical)
        })
        .collect();
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    out
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> LogitMatrix {
    let t = rng.random_range(1..=6);
    let a = rng.random_range(2..=4);
    let alphabet: Vec<String> = ["<b>", "a", "b", "c"][..a].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<f64>> = (0..t)
        .map(|_| (0..a).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    LogitMatrix::from_rows(alphabet, &rows).unwrap()
}

pub fn toy_bigram(rng: &mut ChaCha8Rng) -> Arc<NGramModel> {
    let corpus: Vec<String> = (0..20)
        .map(|_| {
            let n = rng.random_range(0..5);
            (0..n).map(|_| ['a', 'b', 'c'][rng.random_range(0..3)]).collect()
        })
        .collect();
    Arc::new(train_ngram(&corpus, 2, 0.4).unwrap())
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

/// Checks `decode_topk` against enumeration; ties at the k-th place may be
/// returned in either order, so strings are compared as score groups.
pub fn check_decoder(m: &LogitMatrix, lm: Option<Arc<NGramModel>>, alpha: f64, k: usize) -> Result<(), String> {
    let want = brute_force(m, lm.as_deref(), alpha);
    let mut cfg = DecoderConfig::new(k).with_beam(2048);
    if let Some(lm) = lm.clone() {
        cfg = cfg.with_lm(lm, alpha);
    }
    let got = decode_topk(m, &cfg);
    if got.len() != k.min(want.len()) {
        return Err(format!("got {} paths, want {}", got.len(), k.min(want.len())));
    }
    for (i, p) in got.iter().enumerate() {
        if !close(p.combined_score, want[i].1) {
            return Err(format!("rank {i}: score {} vs {}", p.combined_score, want[i].1));
        }
        let Some(w) = want.iter().find(|w| w.0 == p.text) else {
            return Err(format!("rank {i}: unknown string {:?}", p.text));
        };
        if !close(p.combined_score, w.1) || !close(p.optical_score, w.2) {
            return Err(format!("{:?}: ({}, {}) vs ({}, {})", p.text, p.combined_score, p.optical_score, w.1, w.2));
        }
    }
    Ok(())
}

/// (mJI, mP, mR) by plain set arithmetic.
pub fn set_ops_metrics(preds: &[BTreeSet<String>], truths: &[BTreeSet<String>]) -> (f64, f64, f64) {
    let lower = |s: &BTreeSet<String>| s.iter().map(|x| x.to_lowercase()).collect::<BTreeSet<_>>();
    let (mut j, mut p, mut r) = (0.0, 0.0, 0.0);
    for (a, b) in preds.iter().zip(truths) {
        let (a, b) = (lower(a), lower(b));
        let inter = a.intersection(&b).count() as f64;
        let union = a.union(&b).count() as f64;
        j += if union == 0.0 { 1.0 } else { inter / union };
        p += match (a.is_empty(), b.is_empty()) {
            (true, true) => 1.0,
            (true, false) => 0.0,
            _ => inter / a.len() as f64,
        };
        r += if b.is_empty() { 1.0 } else { inter / b.len() as f64 };
    }
    let n = preds.len() as f64;
    (j / n, p / n, r / n)
}
