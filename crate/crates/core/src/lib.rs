//! Lexicon-constrained decoding of handwritten prescription lines.

pub mod decoder;
pub mod geometry;
pub mod grammar;
pub mod lm;
pub mod matcher;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod simulator;
pub mod weaklabel;

pub use decoder::{decode_batch, decode_top1, decode_topk, DecodedPath, DecoderConfig, LogitMatrix};
pub use geometry::{box_iou, RotatedBox};
pub use grammar::{GrammarSpec, MedicineEntry, MedicineVocabulary};
pub use lm::{load_lm, save_lm, train_ngram, NGramModel};
pub use matcher::{match_line, predict_document, LinePrediction, MatchStrategy};
pub use metrics::{jaccard_metrics, seg_miou, ExtractionReport, SegReport};
