//! Instruction grammar, few-shot bundles, canonical answers and SFT export.
//!
//! The instruction is a fixed header followed by one interpretation clause per
//! code the taxonomy allows. Clause wording depends on which mention classes
//! the taxonomy distinguishes: without an uncertain class, code `1` also covers
//! uncertain mentions; without a negative class, code `-1` also covers negated
//! mentions.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ChatMessage, Role};
use crate::corpus::{AnnotatedReport, Code, Labels, MentionClass, TaxonomySpec};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("requested {requested} shots from a training set of {available}")]
    NotEnoughShots { requested: usize, available: usize },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

const HEADER: &str = "You are a helpful radiology assistant. Given a radiology report, classify each abnormality into a class. Output a valid JSON with each abnormality as key, and the class as value. The keys must be {findings}. The values can be one of {classes}. The values have the following interpretation:";

const POSITIVE_STRICT: &str = "(1) the abnormality was positively mentioned in the report";
const POSITIVE_LENIENT: &str = "(1) the abnormality was mentioned, even with uncertainty, in the report e.g. 'A large pleural effusion', 'The cardiac contours are stable.', 'The cardiac size cannot be evaluated.'";
const NEGATIVE: &str = "(2) the abnormality was negatively mentioned in the report; e.g. 'No pneumothorax.'";
const UNCERTAIN: &str = "(0) the abnormality was either: mentioned with uncertainty in the report,or mentioned with ambiguous language in the report and it is unclear if the pathology exists or not, e.g. Explicit uncertainty: 'The cardiac size cannot be evaluated.', Ambiguous language: 'The cardiac contours are stable.'";
const ABSENT_STRICT: &str = "(-1) the abnormality was not mentioned in the report";
const ABSENT_LENIENT: &str = "(-1) the abnormality was not mentioned in the report, or the abnormality was negatively mentioned in the report; e.g. 'No pneumothorax.'";

/// Interpretation clauses, in prompt order, for a taxonomy's class set.
pub fn clauses(taxonomy: &TaxonomySpec) -> Vec<&'static str> {
    let uncertain = taxonomy.has_class(MentionClass::Uncertain);
    let negative = taxonomy.has_class(MentionClass::Negative);
    let mut out = vec![if uncertain { POSITIVE_STRICT } else { POSITIVE_LENIENT }];
    if negative {
        out.push(NEGATIVE);
    }
    if uncertain {
        out.push(UNCERTAIN);
    }
    out.push(if negative { ABSENT_STRICT } else { ABSENT_LENIENT });
    out
}

fn python_list<T>(items: &[T], render: impl Fn(&T) -> String) -> String {
    let inner: Vec<String> = items.iter().map(render).collect();
    format!("[{}]", inner.join(", "))
}

/// Renders the instruction for `taxonomy`. Clauses are separated by `;` and
/// two spaces; the last one is closed with a period.
pub fn build_instruction(taxonomy: &TaxonomySpec) -> String {
    let findings = python_list(taxonomy.findings(), |f| format!("'{}'", f.replace('\'', "\\'")));
    let classes = python_list(&taxonomy.allowed_codes(), |c| c.to_string());
    let header = HEADER.replace("{findings}", &findings).replace("{classes}", &classes);
    let body: Vec<String> = clauses(taxonomy).iter().map(|c| c.to_string()).collect();
    format!("{header} {}.", body.join(";  "))
}

/// Single-line JSON object with keys in taxonomy order, e.g. `{"pneumonia": 1, "mass": -1}`.
pub fn serialize_answer(labels: &Labels, taxonomy: &TaxonomySpec) -> String {
    let not_mentioned = MentionClass::NotMentioned.code();
    let parts: Vec<String> = taxonomy
        .findings()
        .iter()
        .map(|f| {
            let code: Code = labels.get(f).copied().unwrap_or(not_mentioned);
            let key = serde_json::to_string(f).expect("string serializes");
            format!("{key}: {code}")
        })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

/// One in-context example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub report_text: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotStrategy {
    /// Uniform draw without replacement.
    #[default]
    Uniform,
    /// Greedy cover of (finding, code) pairs not yet shown, random among ties.
    Balanced,
}

/// Draws `n` distinct training reports as shots, in draw order.
pub fn sample_shots(
    train: &[AnnotatedReport],
    taxonomy: &TaxonomySpec,
    n: usize,
    seed: u64,
    strategy: ShotStrategy,
) -> Result<Vec<Shot>, PromptError> {
    if n > train.len() {
        return Err(PromptError::NotEnoughShots {
            requested: n,
            available: train.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = match strategy {
        ShotStrategy::Uniform => index::sample(&mut rng, train.len(), n).into_vec(),
        ShotStrategy::Balanced => balanced_indices(train, n, &mut rng),
    };
    Ok(picked
        .into_iter()
        .map(|i| Shot {
            report_text: train[i].text().to_string(),
            answer: serialize_answer(&train[i].labels, taxonomy),
        })
        .collect())
}

fn balanced_indices(train: &[AnnotatedReport], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut covered: Vec<(String, Code)> = Vec::new();
    let mut used = vec![false; train.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let gain = |r: &AnnotatedReport| {
            r.labels
                .iter()
                .filter(|(f, &c)| {
                    c != MentionClass::NotMentioned.code() && !covered.iter().any(|(cf, cc)| cf == *f && *cc == c)
                })
                .count()
        };
        let best = (0..train.len())
            .filter(|&i| !used[i])
            .map(|i| gain(&train[i]))
            .max()
            .unwrap_or(0);
        let tied: Vec<usize> = (0..train.len())
            .filter(|&i| !used[i] && gain(&train[i]) == best)
            .collect();
        let i = *tied.choose(rng).expect("n <= train.len()");
        used[i] = true;
        for (f, &c) in &train[i].labels {
            if c != MentionClass::NotMentioned.code() {
                covered.push((f.clone(), c));
            }
        }
        out.push(i);
    }
    out
}

/// A classification request ready for a chat endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub instruction: String,
    pub shots: Vec<Shot>,
    pub target_text: String,
}

impl PromptBundle {
    /// System instruction, one user/assistant pair per shot, then the target report.
    pub fn to_messages(&self) -> Vec<ChatMessage> {
        let mut msgs = Vec::with_capacity(2 + 2 * self.shots.len());
        msgs.push(ChatMessage::new(Role::System, &self.instruction));
        for shot in &self.shots {
            msgs.push(ChatMessage::new(Role::User, &shot.report_text));
            msgs.push(ChatMessage::new(Role::Assistant, &shot.answer));
        }
        msgs.push(ChatMessage::new(Role::User, &self.target_text));
        msgs
    }

    pub fn is_few_shot(&self) -> bool {
        !self.shots.is_empty()
    }
}

pub fn build_prompt(instruction: &str, shots: &[Shot], report_text: &str) -> PromptBundle {
    PromptBundle {
        instruction: instruction.to_string(),
        shots: shots.to_vec(),
        target_text: report_text.to_string(),
    }
}

/// Instruction/input/completion triple for supervised fine-tuning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub instruction: String,
    pub input: String,
    pub completion: String,
}

pub fn sft_records(dataset: &[AnnotatedReport], taxonomy: &TaxonomySpec) -> Vec<SftRecord> {
    let instruction = build_instruction(taxonomy);
    dataset
        .iter()
        .map(|r| SftRecord {
            instruction: instruction.clone(),
            input: r.text().to_string(),
            completion: serialize_answer(&r.labels, taxonomy),
        })
        .collect()
}

pub fn write_sft<W: Write>(mut w: W, records: &[SftRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Writes one SFT line per report to `path`; returns the number written.
pub fn export_sft(dataset: &[AnnotatedReport], taxonomy: &TaxonomySpec, path: &Path) -> Result<usize, PromptError> {
    let records = sft_records(dataset, taxonomy);
    let werr = |source| PromptError::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(werr)?;
    write_sft(BufWriter::new(file), &records).map_err(werr)?;
    Ok(records.len())
}
