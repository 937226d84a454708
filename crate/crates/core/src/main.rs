use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use rxdecode_core::lm::{load_lm, save_lm, train_ngram, NGramModel};
use rxdecode_core::matcher::MatchStrategy;
use rxdecode_core::metrics::jaccard_metrics;
use rxdecode_core::pipeline::{
    ablate, extract_decode, rows_to_csv, rows_to_table, Axis, ExtractMode, ExtractionSetup, Experiment,
    LanguageModels, LmChoice, PipelineConfig, PipelineError, Result, SegmenterChoice,
};
use rxdecode_core::simulator::{read_dataset, write_dataset, DatasetStats, SimDocument};
use rxdecode_core::weaklabel::{
    write_strong_labels, IdentitySegmenter, LogisticSegmenter, OracleSegmenter, Segmenter,
};

#[derive(Parser, Debug)]
#[command(name = "rxdecode", version, about = "Weakly supervised medicine-name extraction on simulated prescriptions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON pipeline config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `paths.output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/test datasets.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train and save language models as ARPA files.
    TrainLm {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = LmSource::Both)]
        source: LmSource,
        /// Plain-text corpus for the textfile source, one line per sentence.
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long)]
        order: Option<usize>,
    },
    /// Iterative weak-to-strong labeling of the training split.
    Label {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        segmenter: Option<SegmenterChoice>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        k_label: Option<usize>,
    },
    /// Medicine-name extraction on the test split.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<ExtractMode>,
        #[arg(long)]
        lm: Option<LmChoice>,
        #[arg(long)]
        strategy: Option<MatchStrategy>,
        #[arg(long)]
        segmenter: Option<SegmenterChoice>,
        /// Number of decoded paths per line.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Sweep one ablation axis on the test split.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: Axis,
        #[arg(long)]
        segmenter: Option<SegmenterChoice>,
    },
    /// Score a predictions file against a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum LmSource {
    Grammar,
    Textfile,
    Both,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    doc_id: usize,
    predicted: BTreeSet<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("RXDECODE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| PipelineError::Config(format!("RXDECODE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| PipelineError::Config(e.to_string()))
}

fn load_config(common: &Common, seed_required: bool) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match common.seed {
        Some(s) => cfg = cfg.with_seed(s),
        None if seed_required => return Err(PipelineError::Config("--seed is required".into())),
        None => {}
    }
    if let Some(out) = &common.out {
        cfg.paths.output_dir = out.clone();
    }
    Ok(cfg)
}

fn artifact(dir: &Path, name: &str, hint: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(PipelineError::Data(format!("missing {} ({hint})", p.display())))
    }
}

fn out_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    let dir = cfg.paths.output_dir.clone();
    fs::create_dir_all(&dir)
        .map_err(|e| PipelineError::Data(format!("cannot create output dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| PipelineError::Data(format!("cannot write {}: {e}", path.display())))
}

fn read_split(dir: &Path, split: &str) -> Result<Vec<SimDocument>> {
    let p = artifact(dir, &format!("{split}.jsonl"), "run `rxdecode gen` first")?;
    Ok(read_dataset(p)?)
}

fn load_model(dir: &Path, name: &str) -> Result<Arc<NGramModel>> {
    let p = artifact(dir, name, "run `rxdecode train-lm` first")?;
    Ok(Arc::new(load_lm(p)?))
}

fn load_lms(dir: &Path) -> Result<LanguageModels> {
    Ok(LanguageModels {
        vanilla: load_model(dir, "vanilla.arpa")?,
        medicine: load_model(dir, "medicine.arpa")?,
    })
}

fn load_segmenter(dir: &Path, choice: SegmenterChoice) -> Result<Box<dyn Segmenter>> {
    Ok(match choice {
        SegmenterChoice::Oracle => Box::new(OracleSegmenter),
        SegmenterChoice::Identity => Box::new(IdentitySegmenter),
        SegmenterChoice::Reference => {
            let p = artifact(dir, "segmenter.json", "run `rxdecode label` first")?;
            Box::new(LogisticSegmenter::load(p)?)
        }
    })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { common } => cmd_gen(&common),
        Command::TrainLm {
            common,
            source,
            text,
            order,
        } => cmd_train_lm(&common, source, text, order),
        Command::Label {
            common,
            segmenter,
            iterations,
            k_label,
        } => cmd_label(&common, segmenter, iterations, k_label),
        Command::Extract {
            common,
            mode,
            lm,
            strategy,
            segmenter,
            k,
            alpha,
        } => {
            let mut cfg = load_config(&common, true)?;
            let ex = &mut cfg.extract;
            ex.mode = mode.unwrap_or(ex.mode);
            ex.lm = lm.unwrap_or(ex.lm);
            ex.strategy = strategy.unwrap_or(ex.strategy);
            ex.segmenter = segmenter.unwrap_or(ex.segmenter);
            let lm = ex.lm;
            let fusion = match lm {
                LmChoice::Vanilla => &mut cfg.vanilla,
                _ => &mut cfg.medicine,
            };
            fusion.k = k.unwrap_or(fusion.k);
            fusion.alpha = alpha.unwrap_or(fusion.alpha);
            cmd_extract(cfg)
        }
        Command::Ablate {
            common,
            axis,
            segmenter,
        } => {
            let mut cfg = load_config(&common, true)?;
            cfg.extract.segmenter = segmenter.unwrap_or(cfg.extract.segmenter);
            cmd_ablate(cfg, axis)
        }
        Command::Eval {
            common,
            predictions,
            truth,
        } => cmd_eval(&common, predictions, truth),
    }
}

fn cmd_gen(common: &Common) -> Result<()> {
    let cfg = load_config(common, true)?;
    let exp = Experiment::new(cfg)?;
    let dir = out_dir(&exp.cfg)?;
    let (train, test) = exp.generate()?;
    write_dataset(&train, dir.join("train.jsonl"), exp.cfg.logit_storage)?;
    write_dataset(&test, dir.join("test.jsonl"), exp.cfg.logit_storage)?;
    let mut all = train.clone();
    all.extend(test.iter().cloned());
    let table = DatasetStats::to_table(&[
        ("train", DatasetStats::of(&train)),
        ("test", DatasetStats::of(&test)),
        ("all", DatasetStats::of(&all)),
    ]);
    write_file(&dir.join("dataset_stats.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_train_lm(common: &Common, source: LmSource, text: Option<PathBuf>, order: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common, true)?;
    if let Some(n) = order {
        cfg.lm.order = n;
    }
    if let Some(t) = text {
        cfg.paths.vanilla_corpus = Some(t);
    }
    let exp = Experiment::new(cfg)?;
    let dir = out_dir(&exp.cfg)?;
    let order = exp.cfg.lm.order;
    let save = |name: &str, model: NGramModel, lines: usize| -> Result<()> {
        let path = dir.join(name);
        save_lm(&model, &path)?;
        println!("{} order {order} trained on {lines} lines", path.display());
        Ok(())
    };
    if matches!(source, LmSource::Grammar | LmSource::Both) {
        let corpus = exp.medicine_corpus(1.0)?;
        let model = train_ngram(&corpus, order, exp.cfg.lm.discount)?;
        save("medicine.arpa", model, corpus.len())?;
    }
    if matches!(source, LmSource::Textfile | LmSource::Both) {
        let corpus = &exp.res.vanilla_corpus;
        let model = train_ngram(corpus, order, exp.cfg.lm.discount)?;
        save("vanilla.arpa", model, corpus.len())?;
    }
    Ok(())
}

fn cmd_label(
    common: &Common,
    segmenter: Option<SegmenterChoice>,
    iterations: Option<usize>,
    k_label: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(common, true)?;
    let label = &mut cfg.label;
    label.segmenter = segmenter.unwrap_or(label.segmenter);
    label.iteration.iterations = iterations.unwrap_or(label.iteration.iterations);
    label.iteration.k_label = k_label.unwrap_or(label.iteration.k_label);
    let exp = Experiment::new(cfg)?;
    let dir = out_dir(&exp.cfg)?;
    let train = read_split(&dir, "train")?;
    let lms = load_lms(&dir)?;
    let outcome = exp.label(&train, &lms)?;

    write_strong_labels(&outcome.labels, dir.join("strong_labels.jsonl"))?;
    let mut csv = String::from("iteration,admitted,admitted_fraction,boxes,new_boxes,seg_miou\n");
    for s in &outcome.stats {
        csv.push_str(&format!(
            "{},{},{:.6},{},{},{:.6}\n",
            s.iteration, s.admitted, s.admitted_fraction, s.boxes, s.new_boxes, s.seg_miou
        ));
    }
    write_file(&dir.join("label_stats.csv"), &csv)?;
    write_file(&dir.join("label_stats.json"), &serde_json::to_string_pretty(&outcome.stats)?)?;
    if let Some(json) = outcome.segmenter.to_json() {
        write_file(&dir.join("segmenter.json"), &json)?;
    }

    println!("{:>9} {:>9} {:>9} {:>7} {:>9} {:>9}", "iteration", "admitted", "fraction", "boxes", "new", "seg_mIoU");
    for s in &outcome.stats {
        println!(
            "{:>9} {:>9} {:>9.4} {:>7} {:>9} {:>9.4}",
            s.iteration, s.admitted, s.admitted_fraction, s.boxes, s.new_boxes, s.seg_miou
        );
    }
    Ok(())
}

fn cmd_extract(cfg: PipelineConfig) -> Result<()> {
    let exp = Experiment::new(cfg)?;
    let dir = out_dir(&exp.cfg)?;
    let test = read_split(&dir, "test")?;
    let ex = exp.cfg.extract.clone();
    let lms = load_lms(&dir)?;
    let segmenter: Box<dyn Segmenter> = match ex.mode {
        ExtractMode::Segmented => load_segmenter(&dir, ex.segmenter)?,
        ExtractMode::FullPage => Box::new(IdentitySegmenter),
    };
    let chosen = exp.fusion(ex.lm).decoder(lms.get(ex.lm));
    let vanilla = exp.cfg.vanilla.decoder(Some(lms.vanilla.clone()));
    let setup = ExtractionSetup {
        mode: ex.mode,
        chosen: &chosen,
        vanilla: &vanilla,
        segmenter: segmenter.as_ref(),
    };
    let decoded = extract_decode(&test, &setup);
    let predictions = decoded.predictions(&exp.res.vocab, ex.strategy);
    let truths: Vec<BTreeSet<String>> = test.iter().map(|d| d.weak_labels.clone()).collect();
    let report = jaccard_metrics(&predictions, &truths)?;

    let mut lines = String::new();
    for (doc_id, predicted) in decoded.doc_ids.iter().zip(predictions) {
        lines.push_str(&serde_json::to_string(&PredictionRecord {
            doc_id: *doc_id,
            predicted,
        })?);
        lines.push('\n');
    }
    write_file(&dir.join("predictions.jsonl"), &lines)?;
    write_file(&dir.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    let label = format!("{:?}/{:?}/{}", ex.mode, ex.lm, ex.strategy).to_lowercase();
    let table = report.to_table(&label);
    write_file(&dir.join("report.txt"), &table)?;
    print!("{table}");
    println!("units matched: {}", decoded.selected_units());
    Ok(())
}

fn cmd_ablate(cfg: PipelineConfig, axis: Axis) -> Result<()> {
    let exp = Experiment::new(cfg)?;
    let dir = out_dir(&exp.cfg)?;
    let test = read_split(&dir, "test")?;
    let lms = load_lms(&dir)?;
    let segmenter: Box<dyn Segmenter> = match exp.cfg.extract.mode {
        ExtractMode::Segmented => load_segmenter(&dir, exp.cfg.extract.segmenter)?,
        ExtractMode::FullPage => Box::new(IdentitySegmenter),
    };
    let rows = ablate(&exp, axis, &test, &lms, segmenter.as_ref())?;
    write_file(&dir.join(format!("ablation_{axis}.csv")), &rows_to_csv(&rows))?;
    let table = rows_to_table(&rows);
    write_file(&dir.join(format!("ablation_{axis}.txt")), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_eval(common: &Common, predictions: Option<PathBuf>, truth: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(common, false)?;
    let dir = cfg.paths.output_dir.clone();
    let pred_path = match predictions {
        Some(p) => p,
        None => artifact(&dir, "predictions.jsonl", "run `rxdecode extract` first")?,
    };
    let truth_path = match truth {
        Some(p) => p,
        None => artifact(&dir, "test.jsonl", "run `rxdecode gen` first")?,
    };
    let records = read_predictions(&pred_path)?;
    let docs = read_dataset(&truth_path)?;
    let mut preds = Vec::with_capacity(docs.len());
    let mut truths = Vec::with_capacity(docs.len());
    for d in &docs {
        let rec = records
            .iter()
            .find(|r| r.doc_id == d.doc_id)
            .ok_or_else(|| PipelineError::Data(format!("no prediction for doc {}", d.doc_id)))?;
        preds.push(rec.predicted.clone());
        truths.push(d.weak_labels.clone());
    }
    let report = jaccard_metrics(&preds, &truths)?;
    let table = report.to_table(&pred_path.display().to_string());
    if let Some(parent) = pred_path.parent() {
        let mut f = fs::File::create(parent.join("eval.json"))?;
        f.write_all(serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = fs::File::open(path).map_err(|e| PipelineError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
