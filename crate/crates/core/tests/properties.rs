use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;
use rxdecode_core::grammar::{count_lines, enumerate_lines, NodeFlags, NodeMode};
use rxdecode_core::matcher::exact_matches;
use rxdecode_core::metrics::doc_score;
use rxdecode_core::simulator::{gen_dataset, SimConfig};
use rxdecode_core::weaklabel::{
    coverage_accept, iterate, ocr_labeling_fn, BoxSource, IdentitySegmenter, IterationConfig, LabeledBox,
    OracleSegmenter, Segmenter, StrongLabeledDoc,
};
use rxdecode_core::{
    box_iou, jaccard_metrics, match_line, DecoderConfig, GrammarSpec, MatchStrategy, MedicineEntry,
    MedicineVocabulary, RotatedBox,
};

fn name_set() -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set("[a-e]{1,2}", 0..6)
}

fn rbox() -> impl Strategy<Value = RotatedBox> {
    (0.0..100.0f64, 0.0..100.0f64, 1.0..40.0f64, 1.0..80.0f64, -0.5..0.5f64)
        .prop_map(|(t, l, h, w, r)| RotatedBox::new(t, l, h, w, r).unwrap())
}

proptest! {
    #[test]
    fn metrics_agree_with_set_ops(pairs in prop::collection::vec((name_set(), name_set()), 1..20)) {
        let (preds, truths): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let r = jaccard_metrics(&preds, &truths).unwrap();
        let (mut j, mut p, mut rc) = (0.0, 0.0, 0.0);
        for (a, b) in preds.iter().zip(&truths) {
            let inter = a.intersection(b).count() as f64;
            let union = a.union(b).count() as f64;
            j += if union == 0.0 { 1.0 } else { inter / union };
            p += if a.is_empty() { if b.is_empty() { 1.0 } else { 0.0 } } else { inter / a.len() as f64 };
            rc += if b.is_empty() { 1.0 } else { inter / b.len() as f64 };
        }
        let n = preds.len() as f64;
        prop_assert!((r.mji - j / n).abs() < 1e-12);
        prop_assert!((r.mp - p / n).abs() < 1e-12);
        prop_assert!((r.mr - rc / n).abs() < 1e-12);
        prop_assert_eq!(r.m, preds.len());
        for d in &r.docs {
            if !d.predicted.is_empty() && !d.truth.is_empty() {
                prop_assert!(d.jaccard <= d.precision.min(d.recall) + 1e-12);
            }
        }
    }

    #[test]
    fn metrics_ignore_case(a in name_set(), b in name_set()) {
        let upper: BTreeSet<String> = a.iter().map(|s| s.to_uppercase()).collect();
        prop_assert_eq!(doc_score(&a, &b).jaccard, doc_score(&upper, &b).jaccard);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in rbox(), b in rbox()) {
        let (x, y) = (box_iou(&a, &b), box_iou(&b, &a));
        prop_assert!((x - y).abs() <= 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&x));
        prop_assert!((box_iou(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn majority_is_histogram_mode(
        names in prop::collection::btree_set("[a-c]{2,3}", 1..10),
        paths in prop::collection::vec("[a-c ]{0,9}", 1..15),
    ) {
        let vocab = MedicineVocabulary::new(names.iter().map(|n| MedicineEntry::new(n, "tab"))).unwrap();
        let got = match_line(&paths, &vocab, MatchStrategy::TopKMajority);
        let mut hist: HashMap<String, (usize, usize)> = HashMap::new();
        for (rank, p) in paths.iter().enumerate() {
            if let Some(m) = exact_matches(p, &vocab).into_iter().next() {
                hist.entry(m).or_insert((0, rank)).0 += 1;
            }
        }
        let best = hist.iter().map(|(_, v)| v.0).max();
        match best {
            None => prop_assert_eq!(&got.medicine, &None),
            Some(votes) => {
                let rank = hist.values().filter(|v| v.0 == votes).map(|v| v.1).min().unwrap();
                let want = hist.iter().find(|(_, v)| **v == (votes, rank)).unwrap().0;
                prop_assert_eq!(got.medicine.as_ref(), Some(want));
                prop_assert_eq!(got.vote_count, votes);
            }
        }
        let first = match_line(&paths, &vocab, MatchStrategy::TopKFirst);
        let top1 = match_line(&paths, &vocab, MatchStrategy::Top1Exact);
        if top1.medicine.is_some() {
            prop_assert_eq!(&first.medicine, &top1.medicine);
        }
        prop_assert_eq!(first.medicine.is_some(), got.medicine.is_some());
    }

    #[test]
    fn edit_contains_exact(names in prop::collection::btree_set("[a-c]{2,4}", 1..8), path in "[a-c ]{0,9}") {
        let vocab = MedicineVocabulary::new(names.iter().map(|n| MedicineEntry::new(n, "tab"))).unwrap();
        let exact = match_line(&[&path], &vocab, MatchStrategy::Top1Exact);
        let edit = match_line(&[&path], &vocab, MatchStrategy::Top1Edit { threshold: 0.85 });
        if exact.medicine.is_some() {
            prop_assert_eq!(exact.medicine, edit.medicine);
        }
    }

    #[test]
    fn grammar_count_law(
        n_enum in 0usize..4, n_forms in 1usize..3, n_suffix in 0usize..3, n_numbers in 1usize..4,
        modes in prop::collection::vec(0u8..3, 3),
    ) {
        let tokens = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>();
        let mode = |m: u8, has_tokens: bool| match (m, has_tokens) {
            (_, false) | (2, _) => NodeMode::Disabled,
            (0, _) => NodeMode::Required,
            _ => NodeMode::Optional,
        };
        let mut suffix = tokens("x", n_suffix);
        suffix.push("{n}mg".into());
        let flags = NodeFlags {
            enumeration: mode(modes[0], n_enum > 0),
            kind: mode(modes[1], true),
            suffix: mode(modes[2], true),
        };
        let spec = GrammarSpec {
            enum_tokens: tokens("e", n_enum),
            type_tokens: BTreeMap::from([("tab".to_string(), tokens("t", n_forms))]),
            suffix_tokens: suffix,
            numbers: tokens("", n_numbers),
            optional_flags: flags,
            entries: vec![MedicineEntry::new("dolo", "tab")],
        };
        let factor = |m: NodeMode, n: usize| match m {
            NodeMode::Disabled => 1u128,
            NodeMode::Required => n as u128,
            NodeMode::Optional => n as u128 + 1,
        };
        let want = factor(flags.enumeration, n_enum) * factor(flags.kind, n_forms) * factor(flags.suffix, n_suffix + n_numbers);
        let entry = &spec.entries[0];
        prop_assert_eq!(count_lines(&spec, entry), want);
        let lines = enumerate_lines(&spec, entry, 10_000).unwrap();
        prop_assert_eq!(lines.len() as u128, want);
        prop_assert_eq!(lines.iter().collect::<BTreeSet<_>>().len(), lines.len());
        prop_assert!(lines.iter().all(|l| l.split(' ').any(|t| t == "dolo")));
    }

    #[test]
    fn merge_is_idempotent(boxes in prop::collection::vec(rbox(), 0..8), extra in prop::collection::vec(rbox(), 0..8)) {
        let label = |b: &RotatedBox| LabeledBox { bbox: *b, medicine: None, source: BoxSource::Segmenter { iteration: 2 } };
        let mut doc = StrongLabeledDoc { doc_id: 0, boxes: Vec::new() };
        doc.merge(boxes.iter().map(label), 0.5);
        let before = doc.boxes.len();
        let added = doc.merge(extra.iter().map(label), 0.5);
        prop_assert_eq!(doc.boxes.len(), before + added);
        let snapshot = doc.clone();
        prop_assert_eq!(doc.merge(snapshot.boxes.iter().cloned(), 0.5), 0);
        prop_assert_eq!(doc, snapshot);
    }

    #[test]
    fn coverage_monotone_in_matches(q in 0usize..20, n in 0usize..20, thr in 0.0..=1.0f64) {
        if coverage_accept(q, n, thr) {
            prop_assert!(coverage_accept(q + 1, n, thr));
            prop_assert!(n > 0);
        }
    }
}

fn small_dataset(sigma: f64) -> Vec<rxdecode_core::simulator::SimDocument> {
    let vocab = MedicineVocabulary::new(["dolo", "folvite", "pan", "crocin", "zincovit", "emtel", "ondem"].iter().map(|n| MedicineEntry::new(n, "tab"))).unwrap();
    let grammar = GrammarSpec::default().with_entries(vocab.entries().to_vec());
    let cfg = SimConfig {
        n_docs: 40,
        noise_sigma: sigma,
        writers: 10,
        seed: 9,
        ..SimConfig::default()
    };
    let distractors = vec!["c/o fever since 3 days".to_string(), "review after one week".to_string()];
    gen_dataset(&cfg, &vocab, &grammar, &distractors).unwrap().0
}

#[test]
fn ocr_labels_claim_truth_names_once() {
    let docs = small_dataset(1.5);
    let dec = DecoderConfig::new(20);
    for d in &docs {
        let boxes = ocr_labeling_fn(d, &dec);
        assert!(boxes.len() <= d.weak_labels.len());
        let names: BTreeSet<_> = boxes.iter().map(|b| b.medicine.clone().unwrap()).collect();
        assert_eq!(names.len(), boxes.len());
        assert!(names.is_subset(&d.weak_labels));
    }
}

#[test]
fn admission_never_shrinks() {
    let docs = small_dataset(0.8);
    let dec = DecoderConfig::new(20);
    let cfg = IterationConfig {
        iterations: 4,
        ..IterationConfig::default()
    };
    let factories: [&(dyn Fn() -> Box<dyn Segmenter> + Sync); 2] =
        [&|| Box::new(OracleSegmenter), &|| Box::new(IdentitySegmenter)];
    for factory in factories {
        let out = iterate(&docs, factory, &cfg, &dec).unwrap();
        for w in out.admitted.windows(2) {
            assert!(w[0].iter().zip(&w[1]).all(|(a, b)| !a || *b));
        }
        for w in out.stats.windows(2) {
            assert!(w[1].admitted >= w[0].admitted);
        }
    }
}
