use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use radlabel_core::augment::{build_augmented_set, length_filter, translate_all, AugmentMode, TranslationRecord};
use radlabel_core::backend::{
    ChatBackend, ChatResponse, Client, GenerationParams, HttpBackend, HttpConfig, MockBackend, RawAnswer, RetryPolicy,
};
use radlabel_core::corpus::{
    filter_findings_by_support, finding_supports, load_dataset, restrict_labels, top_k_findings, write_jsonl,
    AnnotatedReport, Language, TaxonomySpec,
};
use radlabel_core::extractor::parse_answer;
use radlabel_core::metrics::{evaluate, EvalReport, PredictionRecord};
use radlabel_core::promptgen::{
    build_instruction, build_prompt, export_sft as write_sft_file, sample_shots, serialize_answer, PromptBundle,
};
use radlabel_core::splitter::{stratified_split, stratified_split_with_counts, subsample, SplitAssignment, Subset};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, EndpointConfig, MockMode, RunConfig, SupportScope};
use crate::CliError;

type DynBackend = Box<dyn ChatBackend>;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(CliError::io(path))?))
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T, path: &Path) -> Result<(), CliError> {
    serde_json::to_writer(&mut *w, value).map_err(|e| CliError::io(path)(e.into()))?;
    w.write_all(b"\n").map_err(CliError::io(path))
}

pub fn manifest_path(cfg: &RunConfig, dataset: &str) -> PathBuf {
    cfg.output_dir.join(format!("{dataset}.split.jsonl"))
}

fn read_split(cfg: &RunConfig, dataset: &str) -> Result<SplitAssignment, CliError> {
    let path = manifest_path(cfg, dataset);
    if !path.exists() {
        return Err(CliError::MissingManifest(path));
    }
    let file = File::open(&path).map_err(CliError::io(&path))?;
    Ok(SplitAssignment::read_manifest(BufReader::new(file))?)
}

/// A dataset after loading, splitting and finding selection.
pub struct Prepared {
    pub taxonomy: TaxonomySpec,
    pub records: Vec<AnnotatedReport>,
    pub split: SplitAssignment,
}

impl Prepared {
    pub fn subset(&self, subset: Subset) -> Result<Vec<AnnotatedReport>, CliError> {
        Ok(self.split.select(&self.records, subset)?)
    }

    /// Training reports, optionally reduced to a stratified fraction.
    pub fn train(&self, fraction: Option<f64>, seed: u64) -> Result<Vec<AnnotatedReport>, CliError> {
        let train = self.subset(Subset::Train)?;
        match fraction {
            Some(f) if f < 1.0 => Ok(subsample(&train, &self.taxonomy, f, seed)?),
            _ => Ok(train),
        }
    }
}

fn select_findings(
    ds: &DatasetConfig,
    taxonomy: &TaxonomySpec,
    counted_on: &[AnnotatedReport],
) -> Result<TaxonomySpec, CliError> {
    let mut tax = taxonomy.clone();
    let mut basis = counted_on.to_vec();
    if let Some(min) = ds.min_support {
        (tax, basis) = filter_findings_by_support(&basis, &tax, min)?;
    }
    if let Some(k) = ds.top_k {
        let k = k.min(tax.len());
        (tax, _) = top_k_findings(&basis, &tax, k)?;
    }
    Ok(tax)
}

/// Loads a dataset with its manifest and applies the configured finding selection.
pub fn prepare(cfg: &RunConfig, dataset: &str) -> Result<Prepared, CliError> {
    let ds = cfg.dataset(dataset)?;
    let declared = cfg.taxonomy(dataset)?;
    let records = load_dataset(&ds.path, declared)?;
    let split = read_split(cfg, dataset)?;
    if split.len() != records.len() {
        return Err(CliError::BadInput {
            path: manifest_path(cfg, dataset),
            message: format!("manifest covers {} reports, dataset has {}", split.len(), records.len()),
        });
    }
    let basis = match ds.support_scope {
        SupportScope::Train => split.select(&records, Subset::Train)?,
        SupportScope::All => records.clone(),
    };
    let taxonomy = select_findings(ds, declared, &basis)?;
    if taxonomy.len() != declared.len() {
        log::info!("{dataset}: kept {} of {} findings", taxonomy.len(), declared.len());
    }
    let records = restrict_labels(&records, &taxonomy);
    Ok(Prepared {
        taxonomy,
        records,
        split,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub dataset_id: String,
    pub n_reports: usize,
    pub mean_chars: f64,
    pub languages: Vec<(Language, usize)>,
    pub supports: Vec<(String, usize)>,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{}: {} reports, {:.1} characters per report",
            self.dataset_id, self.n_reports, self.mean_chars
        )?;
        for (lang, n) in &self.languages {
            writeln!(f, "  language {:<8} {n}", lang.tag())?;
        }
        for (finding, n) in &self.supports {
            writeln!(f, "  {finding:<40} {n}")?;
        }
        Ok(())
    }
}

pub fn ingest(cfg: &RunConfig) -> Result<Vec<DatasetSummary>, CliError> {
    cfg.datasets
        .iter()
        .map(|ds| {
            let tax = cfg.taxonomy(&ds.id)?;
            let records = load_dataset(&ds.path, tax)?;
            let chars: usize = records.iter().map(|r| r.text().chars().count()).sum();
            let mut languages: Vec<(Language, usize)> = Vec::new();
            for r in &records {
                match languages.iter_mut().find(|(l, _)| *l == r.report.language) {
                    Some((_, n)) => *n += 1,
                    None => languages.push((r.report.language, 1)),
                }
            }
            Ok(DatasetSummary {
                dataset_id: ds.id.clone(),
                n_reports: records.len(),
                mean_chars: if records.is_empty() {
                    0.0
                } else {
                    chars as f64 / records.len() as f64
                },
                languages,
                supports: tax
                    .findings()
                    .iter()
                    .cloned()
                    .zip(finding_supports(&records, tax))
                    .collect(),
            })
        })
        .collect()
}

pub fn split(cfg: &RunConfig, dataset: &str) -> Result<(PathBuf, SplitAssignment), CliError> {
    let ds = cfg.dataset(dataset)?;
    let tax = cfg.taxonomy(dataset)?;
    let records = load_dataset(&ds.path, tax)?;
    let assignment = match cfg.split.counts {
        Some(counts) => stratified_split_with_counts(&records, tax, counts, cfg.seed)?,
        None => stratified_split(&records, tax, cfg.split.fractions, cfg.seed)?,
    };
    let path = manifest_path(cfg, dataset);
    let mut w = create(&path)?;
    assignment.write_manifest(&mut w).map_err(CliError::io(&path))?;
    w.flush().map_err(CliError::io(&path))?;
    Ok((path, assignment))
}

#[derive(Debug, Deserialize)]
struct CannedLine {
    id: String,
    answer: String,
}

fn read_canned(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CannedLine = serde_json::from_str(&line).map_err(|e| CliError::BadInput {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        out.insert(entry.id, entry.answer);
    }
    Ok(out)
}

/// Mock keyed by report text, built from per-report answers.
fn mock_for(answers: HashMap<String, String>, records: &[AnnotatedReport], id: &str) -> MockBackend {
    let mut by_text: HashMap<String, String> = HashMap::new();
    for r in records {
        if let Some(a) = answers.get(r.id()) {
            if let Some(prev) = by_text.insert(r.text().to_string(), a.clone()) {
                if prev != *a {
                    log::warn!("{}: another report has the same text; its answer is replaced", r.id());
                }
            }
        }
    }
    MockBackend::new(id.to_string(), move |req| {
        let key = req.last_user_message().unwrap_or_default();
        Ok(ChatResponse::stopped(by_text.get(key).cloned().unwrap_or_default()))
    })
}

/// Builds the configured backend. `records` supplies report ids for mock modes.
pub fn build_client(
    cfg: &RunConfig,
    records: &[AnnotatedReport],
    taxonomy: &TaxonomySpec,
) -> Result<Client<DynBackend>, CliError> {
    let (backend, retry): (DynBackend, RetryPolicy) = match &cfg.endpoint {
        EndpointConfig::Mock { mode, answers } => {
            let backend: DynBackend = match (mode, answers) {
                (MockMode::Canned, Some(path)) => Box::new(mock_for(read_canned(path)?, records, "mock:canned")),
                (MockMode::Canned, None) => return Err(CliError::Config("canned mock requires `answers`".into())),
                (MockMode::Gold, _) => {
                    let answers = records
                        .iter()
                        .map(|r| (r.id().to_string(), serialize_answer(&r.labels, taxonomy)))
                        .collect();
                    Box::new(mock_for(answers, records, "mock:gold"))
                }
                (MockMode::Echo, _) => Box::new(MockBackend::echo()),
            };
            (backend, RetryPolicy::no_backoff(1))
        }
        EndpointConfig::Http {
            base_url,
            model,
            api_key_env,
            timeout_secs,
            max_attempts,
            initial_backoff_ms,
        } => {
            let api_key = std::env::var(api_key_env).ok().filter(|k| !k.is_empty());
            if api_key.is_none() {
                log::info!("{api_key_env} not set; sending requests without authorization");
            }
            let backend = HttpBackend::new(HttpConfig {
                base_url: base_url.clone(),
                model: model.clone(),
                api_key,
                timeout_secs: *timeout_secs,
            })
            .map_err(|e| CliError::Backend(e.to_string()))?;
            let retry = RetryPolicy {
                max_attempts: *max_attempts,
                initial_backoff: Duration::from_millis(*initial_backoff_ms),
                ..RetryPolicy::default()
            };
            (Box::new(backend), retry)
        }
    };
    Ok(Client::new(backend)
        .with_retry(retry)
        .with_max_in_flight(cfg.classify.max_in_flight))
}

#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    pub subset: Subset,
    pub shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifySummary {
    pub dataset_id: String,
    pub subset: Subset,
    pub shots: usize,
    pub n_reports: usize,
    pub invalid: usize,
    pub invalid_rate: f64,
    pub backend_errors: usize,
    pub max_tokens: u32,
    pub wall_time_ms: u64,
    pub endpoint_id: String,
    pub generation: GenerationParams,
}

#[derive(Debug)]
pub struct ClassifyOutcome {
    pub predictions_path: PathBuf,
    pub runlog_path: PathBuf,
    pub predictions: Vec<PredictionRecord>,
    pub summary: ClassifySummary,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RunLogLine<'a> {
    Request {
        id: &'a str,
        #[serde(flatten)]
        answer: &'a RawAnswer,
    },
    Summary(&'a ClassifySummary),
}

pub fn predictions_stem(dataset: &str, subset: Subset, shots: usize) -> String {
    format!("{dataset}.{}.{shots}shot", subset.as_str())
}

pub fn classify(cfg: &RunConfig, dataset: &str, opts: &ClassifyOptions) -> Result<ClassifyOutcome, CliError> {
    let prepared = prepare(cfg, dataset)?;
    let targets = prepared.subset(opts.subset)?;
    let shots = if opts.shots > 0 {
        let train = prepared.train(cfg.classify.train_fraction, cfg.seed)?;
        sample_shots(
            &train,
            &prepared.taxonomy,
            opts.shots,
            cfg.seed,
            cfg.classify.shot_strategy,
        )?
    } else {
        Vec::new()
    };
    let instruction = build_instruction(&prepared.taxonomy);
    let bundles: Vec<PromptBundle> = targets
        .iter()
        .map(|r| build_prompt(&instruction, &shots, r.text()))
        .collect();
    let client = build_client(cfg, &targets, &prepared.taxonomy)?;

    let started = Instant::now();
    let answers = client.complete_batch(&bundles, &cfg.generation);
    let wall = started.elapsed();

    let predictions: Vec<PredictionRecord> = targets
        .iter()
        .zip(&answers)
        .map(|(r, a)| PredictionRecord::from_parsed(r.id(), parse_answer(a, &prepared.taxonomy)))
        .collect();
    let invalid = predictions.iter().filter(|p| !p.valid).count();
    let backend_errors = answers.iter().filter(|a| a.is_error()).count();
    let summary = ClassifySummary {
        dataset_id: dataset.to_string(),
        subset: opts.subset,
        shots: opts.shots,
        n_reports: predictions.len(),
        invalid,
        invalid_rate: if predictions.is_empty() {
            0.0
        } else {
            invalid as f64 / predictions.len() as f64
        },
        backend_errors,
        max_tokens: cfg.generation.max_tokens_for(opts.shots),
        wall_time_ms: wall.as_millis() as u64,
        endpoint_id: client.backend().id().to_string(),
        generation: cfg.generation.clone(),
    };

    let stem = predictions_stem(dataset, opts.subset, opts.shots);
    let predictions_path = cfg.output_dir.join(format!("{stem}.predictions.jsonl"));
    let mut w = create(&predictions_path)?;
    for p in &predictions {
        write_json_line(&mut w, p, &predictions_path)?;
    }
    w.flush().map_err(CliError::io(&predictions_path))?;

    let runlog_path = cfg.output_dir.join(format!("{stem}.runlog.jsonl"));
    let mut w = create(&runlog_path)?;
    for (r, a) in targets.iter().zip(&answers) {
        write_json_line(&mut w, &RunLogLine::Request { id: r.id(), answer: a }, &runlog_path)?;
    }
    write_json_line(&mut w, &RunLogLine::Summary(&summary), &runlog_path)?;
    w.flush().map_err(CliError::io(&runlog_path))?;

    Ok(ClassifyOutcome {
        predictions_path,
        runlog_path,
        predictions,
        summary,
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::BadInput {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub jsonl_path: PathBuf,
    pub table_path: PathBuf,
}

pub fn eval(cfg: &RunConfig, dataset: &str, subset: Subset, predictions: &Path) -> Result<EvalOutcome, CliError> {
    let prepared = prepare(cfg, dataset)?;
    let golds = prepared.subset(subset)?;
    let preds = read_predictions(predictions)?;
    let report = evaluate(&preds, &golds, &prepared.taxonomy)?;

    let name = predictions
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("predictions");
    let stem = name
        .strip_suffix(".predictions.jsonl")
        .or_else(|| name.strip_suffix(".jsonl"))
        .unwrap_or(name);
    let jsonl_path = cfg.output_dir.join(format!("{stem}.eval.jsonl"));
    let mut w = create(&jsonl_path)?;
    report.write_jsonl(&mut w).map_err(CliError::io(&jsonl_path))?;
    w.flush().map_err(CliError::io(&jsonl_path))?;

    let table_path = cfg.output_dir.join(format!("{stem}.eval.txt"));
    fs::write(&table_path, report.to_table()).map_err(CliError::io(&table_path))?;
    Ok(EvalOutcome {
        report,
        jsonl_path,
        table_path,
    })
}

#[derive(Debug)]
pub struct AugmentOutcome {
    pub dataset_path: PathBuf,
    pub log_path: PathBuf,
    pub n_records: usize,
    pub kept: usize,
    pub dropped: usize,
    pub failed: usize,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TranslationLogLine<'a> {
    Translation(&'a TranslationRecord),
    Failure { error: String },
}

pub fn augment(
    cfg: &RunConfig,
    dataset: &str,
    target: Language,
    mode: AugmentMode,
) -> Result<AugmentOutcome, CliError> {
    let prepared = prepare(cfg, dataset)?;
    let train = prepared.train(cfg.classify.train_fraction, cfg.seed)?;
    let client = build_client(cfg, &train, &prepared.taxonomy)?;
    let (translations, failures) = translate_all(&train, target, &client, &cfg.generation);
    let (kept, dropped) = length_filter(translations, cfg.augment.max_tokens)?;
    let augmented = build_augmented_set(&train, &kept, mode)?;

    let mode_tag = match mode {
        AugmentMode::Union => "union",
        AugmentMode::TranslatedOnly => "translated",
    };
    let dataset_path = cfg
        .output_dir
        .join(format!("{dataset}.train.{}.{mode_tag}.jsonl", target.tag()));
    let mut w = create(&dataset_path)?;
    write_jsonl(&mut w, &augmented).map_err(CliError::io(&dataset_path))?;

    let log_path = cfg
        .output_dir
        .join(format!("{dataset}.train.{}.translations.jsonl", target.tag()));
    let mut w = create(&log_path)?;
    for t in kept.iter().chain(&dropped) {
        write_json_line(&mut w, &TranslationLogLine::Translation(t), &log_path)?;
    }
    for e in &failures {
        write_json_line(&mut w, &TranslationLogLine::Failure { error: e.to_string() }, &log_path)?;
    }
    w.flush().map_err(CliError::io(&log_path))?;

    Ok(AugmentOutcome {
        dataset_path,
        log_path,
        n_records: augmented.len(),
        kept: kept.len(),
        dropped: dropped.len(),
        failed: failures.len(),
    })
}

pub fn export_sft(cfg: &RunConfig, dataset: &str, subset: Subset) -> Result<(PathBuf, usize), CliError> {
    let prepared = prepare(cfg, dataset)?;
    let records = match subset {
        Subset::Train => prepared.train(cfg.classify.train_fraction, cfg.seed)?,
        other => prepared.subset(other)?,
    };
    let path = cfg.output_dir.join(format!("{dataset}.{}.sft.jsonl", subset.as_str()));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let n = write_sft_file(&records, &prepared.taxonomy, &path)?;
    Ok((path, n))
}
