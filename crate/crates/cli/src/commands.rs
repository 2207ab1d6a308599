use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use log::{info, warn};
use offenseval::embeddings::{load_embeddings, EMBEDDING_DIM};
use offenseval::eval::{confusion, report, EvalReport};
use offenseval::heuristics::{
    build_lexicon as collect_lexicon, classify_target, parse_word_list, Annotations, Annotator,
    BuiltinAnnotator, HeuristicLexicon, LexiconOptions,
};
use offenseval::ingest::{
    apply_exclusions, load_olid, stratified_split, ClassLabel, Dataset, ExclusionList, OffenseLabel,
    TargetLabel, Task,
};
use offenseval::models::{
    ensemble_predict, predict as predict_one, train_model, write_predictions, Architecture,
    TrainedModel, TrainingOptions, DEFAULT_THRESHOLD,
};
use offenseval::nncore::TrainConfig;
use offenseval::preprocess::{
    corpus_word_counts, NormalizationTable, PreprocessConfig, SegmentationDictionary,
};

use crate::config::{existing, ConfigFile};
use crate::{EvaluateArgs, LexiconArgs, PredictArgs, PreprocessArgs, TaskbArgs, TextArgs, TrainArgs};

const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn input(cfg: &ConfigFile, flag: Option<PathBuf>, key: &str) -> Result<PathBuf, Failure> {
    existing(cfg.require(flag, key).usage()?).usage()
}

fn optional_input(cfg: &ConfigFile, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>, Failure> {
    cfg.get(flag, key).usage()?.map(existing).transpose().usage()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display())).runtime()?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_dataset(path: &Path, has_labels: bool) -> Result<Dataset, Failure> {
    load_olid(path, has_labels)
        .with_context(|| format!("reading {}", path.display()))
        .runtime()
}

/// Normalization table and segmentation dictionary, extended with the word
/// counts of `corpus`.
fn preprocess_config(text: TextArgs, cfg: &ConfigFile, corpus: &Dataset) -> Result<PreprocessConfig, Failure> {
    let table = match optional_input(cfg, text.normalization, "normalization")? {
        Some(p) => {
            let raw = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display())).runtime()?;
            NormalizationTable::parse(&raw).with_context(|| p.display().to_string()).runtime()?
        }
        None => NormalizationTable::builtin(),
    };
    let mut extra = corpus_word_counts(corpus.records.iter().map(|r| r.text.as_str()));
    let builtin = match optional_input(cfg, text.dictionary, "dictionary")? {
        Some(p) => {
            let raw = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display())).runtime()?;
            let dict = SegmentationDictionary::parse(&raw).with_context(|| p.display().to_string()).runtime()?;
            extra.extend(&dict);
            false
        }
        None => true,
    };
    Ok(PreprocessConfig::new(&table, builtin, &extra))
}

pub fn preprocess(a: PreprocessArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    let data_path = input(cfg, a.data, "data")?;
    let out_path: Option<PathBuf> = cfg.get(a.out, "out").usage()?;
    let data = load_dataset(&data_path, false)?;
    let pre = preprocess_config(a.text, cfg, &data)?.build().runtime()?;
    let mut w = output(out_path.as_deref())?;
    for r in &data.records {
        writeln!(w, "{}\t{}", r.id, pre.process(&r.text).join(" ")).runtime()?;
    }
    w.flush().runtime()
}

pub fn train(a: TrainArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    let data_path = input(cfg, a.data, "data")?;
    let emb_path = input(cfg, a.embeddings, "embeddings")?;
    let exclude = optional_input(cfg, a.exclude, "exclude")?;
    let architecture: Architecture = cfg.require(a.arch, "arch").usage()?.parse().usage()?;
    let out: PathBuf = cfg.require(a.out, "out").usage()?;
    let defaults = TrainConfig::default();
    let train_cfg = TrainConfig {
        learning_rate: cfg.or(a.learning_rate, "learning_rate", defaults.learning_rate).usage()?,
        batch_size: cfg.or(a.batch_size, "batch_size", defaults.batch_size).usage()?,
        max_epochs: cfg.or(a.max_epochs, "max_epochs", defaults.max_epochs).usage()?,
        patience: cfg.or(a.patience, "patience", defaults.patience).usage()?,
        seed: cfg.or(a.seed, "seed", defaults.seed).usage()?,
    };
    train_cfg.validate().usage()?;
    let fraction = cfg
        .or(a.validation_fraction, "validation_fraction", DEFAULT_VALIDATION_FRACTION)
        .usage()?;
    let min_count = cfg.or(a.min_count, "min_count", 1).usage()?;
    let dim = cfg.or(a.embedding_dim, "embedding_dim", EMBEDDING_DIM).usage()?;

    let mut data = load_dataset(&data_path, true)?;
    if let Some(p) = exclude {
        let list = ExclusionList::load(&p).runtime()?;
        let filtered = apply_exclusions(&data, &list);
        if filtered.unmatched > 0 {
            warn!("{} excluded ids do not occur in {}", filtered.unmatched, data_path.display());
        }
        info!("excluded {} records", data.len() - filtered.dataset.len());
        data = filtered.dataset;
    }
    let (train_set, val_set) = stratified_split(&data, fraction, train_cfg.seed).runtime()?;
    let table = load_embeddings(&emb_path, dim).runtime()?;
    let preprocessing = preprocess_config(a.text, cfg, &train_set)?;
    let opts = TrainingOptions {
        min_count,
        train: train_cfg,
        ..TrainingOptions::new(architecture)
    };
    let (model, history) = train_model(&train_set, &val_set, &table, preprocessing, &opts).runtime()?;
    model.save(&out).runtime()?;

    let preds = predict_one(&model, &val_set, DEFAULT_THRESHOLD).runtime()?;
    let correct = preds
        .iter()
        .zip(&val_set.records)
        .filter(|(p, r)| Some(p.label) == r.label_a)
        .count();
    let best = history.best();
    println!(
        "{architecture}: {} epochs, best epoch {}, validation loss {:.4}, validation accuracy {:.4}",
        history.epochs.len(),
        best.epoch,
        best.val_loss,
        correct as f64 / val_set.len().max(1) as f64
    );
    Ok(())
}

pub fn predict(a: PredictArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    let paths: Vec<PathBuf> = cfg
        .list(a.models.iter().map(|p| p.display().to_string()).collect(), "models")
        .into_iter()
        .map(PathBuf::from)
        .collect();
    if paths.is_empty() {
        return Err(Failure::Usage(anyhow!("missing --model (or `models` in the config file)")));
    }
    let paths = paths.into_iter().map(existing).collect::<Result<Vec<_>, _>>().usage()?;
    let data_path = input(cfg, a.data, "data")?;
    let threshold = cfg.or(a.threshold, "threshold", DEFAULT_THRESHOLD).usage()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Failure::Usage(anyhow!("threshold {threshold} outside [0, 1]")));
    }
    let out_path: Option<PathBuf> = cfg.get(a.out, "out").usage()?;
    let models = paths
        .iter()
        .map(|p| TrainedModel::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>, _>>()
        .runtime()?;
    let data = load_dataset(&data_path, false)?;
    let results = ensemble_predict(&models, &data, threshold).runtime()?;
    write_predictions(output(out_path.as_deref())?, &results).runtime()
}

/// (id, label) pairs; the label is the first column after the id that
/// parses as a label of the task.
fn read_predictions<L: ClassLabel>(path: &Path) -> anyhow::Result<Vec<(String, L)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().trim().to_string();
        let label = fields
            .find_map(|f| L::parse(f.trim()))
            .ok_or_else(|| anyhow!("{}:{}: no {} label", path.display(), i + 1, L::ALL.map(|l| l.to_string()).join("/")))?;
        if !seen.insert(id.clone()) {
            bail!("{}:{}: duplicate id {id:?}", path.display(), i + 1);
        }
        out.push((id, label));
    }
    Ok(out)
}

fn score<L: ClassLabel>(
    predictions: &Path,
    gold: Vec<(&str, L)>,
) -> anyhow::Result<EvalReport<L>> {
    let preds: HashMap<String, L> = read_predictions(predictions)?.into_iter().collect();
    let gold_ids: HashSet<&str> = gold.iter().map(|(id, _)| *id).collect();
    if let Some((id, _)) = gold.iter().find(|(id, _)| !preds.contains_key(*id)) {
        bail!("no prediction for gold id {id}");
    }
    if preds.len() != gold.len() {
        let mut extra: Vec<&String> = preds.keys().filter(|id| !gold_ids.contains(id.as_str())).collect();
        extra.sort();
        bail!("prediction for id {} has no gold label", extra[0]);
    }
    let (p, g): (Vec<L>, Vec<L>) = gold.iter().map(|(id, l)| (preds[*id], *l)).unzip();
    Ok(report(&confusion(&p, &g)?)?)
}

pub fn evaluate(a: EvaluateArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    let predictions = input(cfg, a.predictions, "predictions")?;
    let gold_path = input(cfg, a.data, "data")?;
    let task: Task = cfg.or(a.task, "task", "A".to_string()).usage()?.parse().map_err(|e: String| Failure::Usage(anyhow!(e)))?;
    let out: PathBuf = cfg.require(a.out, "out").usage()?;
    let data = load_dataset(&gold_path, true)?;
    let (text, json) = match task {
        Task::A => {
            let gold: Vec<(&str, OffenseLabel)> = data
                .records
                .iter()
                .filter_map(|r| r.label_a.map(|l| (r.id.as_str(), l)))
                .collect();
            let r = score(&predictions, gold).runtime()?;
            (r.to_text(), r.to_json())
        }
        Task::B => {
            let gold: Vec<(&str, TargetLabel)> = data
                .records
                .iter()
                .filter_map(|r| r.label_b.map(|l| (r.id.as_str(), l)))
                .collect();
            let r = score(&predictions, gold).runtime()?;
            (r.to_text(), r.to_json())
        }
    };
    print!("{text}");
    let mut w = output(Some(&out))?;
    serde_json::to_writer_pretty(&mut w, &json).runtime()?;
    writeln!(w).runtime()?;
    w.flush().runtime()
}

pub fn taskb(a: TaskbArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    let data_path = input(cfg, a.data, "data")?;
    let lexicon_path = input(cfg, a.lexicon, "lexicon")?;
    let annotations = optional_input(cfg, a.annotations, "annotations")?;
    let out_path: Option<PathBuf> = cfg.get(a.out, "out").usage()?;
    let lexicon = HeuristicLexicon::load(&lexicon_path).runtime()?;
    let annotator = match annotations {
        Some(p) => Annotator::External(Annotations::load(&p).runtime()?),
        None => Annotator::Builtin(BuiltinAnnotator::default()),
    };
    let data = load_dataset(&data_path, false)?;
    let mut w = output(out_path.as_deref())?;
    for r in &data.records {
        let tweet = annotator.annotate(&r.id, &r.text).runtime()?;
        let (label, trace) = classify_target(&tweet, &lexicon);
        writeln!(w, "{}\t{label}\t{}", r.id, trace.rule_fired).runtime()?;
    }
    w.flush().runtime()
}

pub fn build_lexicon(a: LexiconArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    let data_path = input(cfg, a.data, "data")?;
    let out: Option<PathBuf> = cfg.get(a.out, "out").usage()?;
    let k = cfg.or(a.k, "k", LexiconOptions::default().k).usage()?;
    let stoplist = match optional_input(cfg, a.stoplist, "stoplist")? {
        Some(p) => parse_word_list(
            &std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display())).runtime()?,
        ),
        None => LexiconOptions::builtin_stoplist(),
    };
    let overrides: BTreeSet<String> = cfg.list(a.overrides, "overrides").iter().map(|s| s.to_lowercase()).collect();
    if k == 0 {
        warn!("k = 0, the lexicon will be empty");
    }
    let data = load_dataset(&data_path, true)?;
    let offensive = Dataset::new(
        data.records
            .iter()
            .filter(|r| r.label_a == Some(OffenseLabel::Off))
            .cloned()
            .collect(),
        data.split_tag,
    );
    info!("counting over {} offensive tweets", offensive.len());
    let lexicon = collect_lexicon(&offensive, &LexiconOptions { k, stoplist, overrides });
    info!("{} hashtags, {} words", lexicon.hashtags.len(), lexicon.tokens.len());
    lexicon.write_to(output(out.as_deref())?).runtime()
}
