//! Translation-based augmentation of training sets.
//!
//! Reports are translated through the chat backend with the stop sequence
//! disabled, over-length translations are cut, and the survivors carry their
//! source labels unchanged.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ChatBackend, Client, FinishReason, GenerationParams, RawAnswer};
use crate::corpus::{AnnotatedReport, Labels, Language, Report};
use crate::metrics::Meteor;
use crate::promptgen::{build_prompt, PromptBundle};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AugmentError {
    #[error("translation of `{id}` failed: {reason}")]
    Backend { id: String, reason: String },
    #[error("translation of `{0}` is empty")]
    EmptyTranslation(String),
    #[error("length cap must be at least 1 token")]
    ZeroLengthCap,
    #[error("no translations kept; augmented set would be empty")]
    EmptyTrainingSet,
    #[error("duplicate report id `{0}` after suffixing")]
    DuplicateId(String),
    #[error("empty corpus")]
    EmptyCorpus,
}

/// Prompt asking for a bare translation into `language`.
pub fn translation_prompt(language: Language) -> String {
    format!(
        "Translate this text into {}. Respond only with the translation.",
        language.name()
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub source_id: String,
    pub source_dataset: String,
    pub source_lang: Language,
    pub target_lang: Language,
    pub translated_text: String,
    pub labels: Labels,
    pub token_count: usize,
    pub kept: bool,
    pub identity_direction: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meteor_vs_reference: Option<f64>,
}

impl TranslationRecord {
    pub fn translated_id(&self) -> String {
        format!("{}-{}", self.source_id, self.target_lang.tag())
    }
}

/// Reported completion tokens, else a four-characters-per-token estimate.
pub fn token_count(answer: &RawAnswer) -> usize {
    answer
        .completion_tokens
        .map(|t| t as usize)
        .unwrap_or_else(|| answer.text.chars().count().div_ceil(4))
}

fn translation_bundle(report: &AnnotatedReport, target: Language) -> PromptBundle {
    build_prompt(&translation_prompt(target), &[], report.text())
}

fn to_record(report: &AnnotatedReport, target: Language, answer: RawAnswer) -> Result<TranslationRecord, AugmentError> {
    if answer.finished_by == FinishReason::Error {
        return Err(AugmentError::Backend {
            id: report.id().to_string(),
            reason: answer.error.unwrap_or_else(|| "unknown".into()),
        });
    }
    let text = answer.text.trim().to_string();
    if text.is_empty() {
        return Err(AugmentError::EmptyTranslation(report.id().to_string()));
    }
    let tokens = token_count(&answer);
    Ok(TranslationRecord {
        source_id: report.id().to_string(),
        source_dataset: report.report.source.clone(),
        source_lang: report.report.language,
        target_lang: target,
        translated_text: text,
        labels: report.labels.clone(),
        token_count: tokens,
        kept: true,
        identity_direction: report.report.language == target,
        meteor_vs_reference: None,
    })
}

/// Translates one report. Stop handling is disabled for the request.
pub fn translate<B: ChatBackend>(
    report: &AnnotatedReport,
    target: Language,
    client: &Client<B>,
    params: &GenerationParams,
) -> Result<TranslationRecord, AugmentError> {
    let params = params.clone().without_stop();
    let answer = client.complete(&translation_bundle(report, target), &params);
    to_record(report, target, answer)
}

/// Batch form of [`translate`]; failures are returned alongside successes, in input order.
pub fn translate_all<B: ChatBackend>(
    reports: &[AnnotatedReport],
    target: Language,
    client: &Client<B>,
    params: &GenerationParams,
) -> (Vec<TranslationRecord>, Vec<AugmentError>) {
    let params = params.clone().without_stop();
    let bundles: Vec<PromptBundle> = reports.iter().map(|r| translation_bundle(r, target)).collect();
    let answers = client.complete_batch(&bundles, &params);
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (report, answer) in reports.iter().zip(answers) {
        match to_record(report, target, answer) {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::warn!("{e}");
                failed.push(e);
            }
        }
    }
    (ok, failed)
}

/// Splits translations into those within `max_tokens` and those above it.
pub fn length_filter(
    records: Vec<TranslationRecord>,
    max_tokens: usize,
) -> Result<(Vec<TranslationRecord>, Vec<TranslationRecord>), AugmentError> {
    if max_tokens == 0 {
        return Err(AugmentError::ZeroLengthCap);
    }
    let (kept, dropped): (Vec<_>, Vec<_>) = records
        .into_iter()
        .map(|mut r| {
            r.kept = r.token_count <= max_tokens;
            r
        })
        .partition(|r| r.kept);
    Ok((kept, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    TranslatedOnly,
    Union,
}

/// Training set from kept translations, optionally preceded by the originals.
pub fn build_augmented_set(
    original: &[AnnotatedReport],
    translations: &[TranslationRecord],
    mode: AugmentMode,
) -> Result<Vec<AnnotatedReport>, AugmentError> {
    let mut out: Vec<AnnotatedReport> = match mode {
        AugmentMode::Union => original.to_vec(),
        AugmentMode::TranslatedOnly => Vec::new(),
    };
    let mut ids: HashSet<String> = out.iter().map(|r| r.id().to_string()).collect();
    for t in translations.iter().filter(|t| t.kept) {
        let id = t.translated_id();
        if !ids.insert(id.clone()) {
            return Err(AugmentError::DuplicateId(id));
        }
        out.push(AnnotatedReport {
            report: Report {
                id,
                language: t.target_lang,
                text: t.translated_text.clone(),
                source: t.source_dataset.clone(),
            },
            labels: t.labels.clone(),
        });
    }
    if out.is_empty() {
        return Err(AugmentError::EmptyTrainingSet);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktranslationScore {
    pub target_lang: Language,
    pub mean_meteor: f64,
    pub scores: Vec<f64>,
    pub failures: usize,
}

/// Translates each source into `target` and scores it against its reference.
/// Failed translations score zero.
pub fn score_backtranslation<B: ChatBackend>(
    pairs: &[(String, String)],
    target: Language,
    client: &Client<B>,
    params: &GenerationParams,
) -> Result<BacktranslationScore, AugmentError> {
    if pairs.is_empty() {
        return Err(AugmentError::EmptyCorpus);
    }
    let params = params.clone().without_stop();
    let prompt = translation_prompt(target);
    let bundles: Vec<PromptBundle> = pairs.iter().map(|(src, _)| build_prompt(&prompt, &[], src)).collect();
    let answers = client.complete_batch(&bundles, &params);
    let meteor = Meteor::new(target);
    let mut failures = 0;
    let scores: Vec<f64> = answers
        .iter()
        .zip(pairs)
        .map(|(a, (_, reference))| {
            if a.is_error() {
                failures += 1;
                0.0
            } else {
                meteor.score(a.text.trim(), reference).score
            }
        })
        .collect();
    Ok(BacktranslationScore {
        target_lang: target,
        mean_meteor: scores.iter().sum::<f64>() / scores.len() as f64,
        scores,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, ChatResponse, MockBackend, RetryPolicy};
    use crate::corpus::{MentionClass, TaxonomySpec};

    fn report(id: &str, text: &str) -> AnnotatedReport {
        let t = TaxonomySpec::new(
            "dansk",
            ["effusion", "mass"],
            [MentionClass::Positive, MentionClass::Negative],
        )
        .unwrap();
        AnnotatedReport::new(
            Report {
                id: id.into(),
                language: Language::Danish,
                text: text.into(),
                source: "dansk".into(),
            },
            Labels::from([("effusion".into(), 1), ("mass".into(), 2)]),
            &t,
        )
        .unwrap()
    }

    fn record(id: &str, tokens: usize) -> TranslationRecord {
        TranslationRecord {
            source_id: id.into(),
            source_dataset: "d".into(),
            source_lang: Language::Danish,
            target_lang: Language::English,
            translated_text: "x".into(),
            labels: Labels::new(),
            token_count: tokens,
            kept: true,
            identity_direction: false,
            meteor_vs_reference: None,
        }
    }

    #[test]
    fn prompt_template() {
        assert_eq!(
            translation_prompt(Language::English),
            "Translate this text into English. Respond only with the translation."
        );
    }

    #[test]
    fn translation_carries_labels_and_skips_stop() {
        let client = Client::new(MockBackend::new("tr", |req| {
            assert!(req.stop.is_none());
            assert!(req.messages[0].content.contains("into English"));
            Ok(ChatResponse::stopped("Small effusion {left}. No mass."))
        }));
        let src = report("r1", "Lille ansamling. Ingen tumor.");
        let t = translate(&src, Language::English, &client, &GenerationParams::default()).unwrap();
        assert_eq!(t.translated_text, "Small effusion {left}. No mass.");
        assert_eq!(t.labels, src.labels);
        assert!(!t.identity_direction);
        assert_eq!(t.token_count, 8);
    }

    #[test]
    fn identity_direction_is_flagged() {
        let client = Client::new(MockBackend::echo());
        let t = translate(
            &report("r1", "Ingen tumor."),
            Language::Danish,
            &client,
            &GenerationParams::default(),
        )
        .unwrap();
        assert!(t.identity_direction);
        assert_eq!(t.translated_text, "Ingen tumor.");
    }

    #[test]
    fn empty_or_failed_translations_are_errors() {
        let client = Client::new(MockBackend::new("e", |_| Ok(ChatResponse::stopped("  "))));
        assert_eq!(
            translate(
                &report("r1", "x"),
                Language::English,
                &client,
                &GenerationParams::default()
            ),
            Err(AugmentError::EmptyTranslation("r1".into()))
        );
        let down = Client::new(MockBackend::new("d", |_| Err(BackendError::Transient("down".into()))))
            .with_retry(RetryPolicy::no_backoff(2));
        let (ok, failed) = translate_all(
            &[report("r1", "x"), report("r2", "y")],
            Language::English,
            &down,
            &GenerationParams::default(),
        );
        assert!(ok.is_empty());
        assert_eq!(failed.len(), 2);
    }

    #[test]
    fn length_filter_partitions() {
        let (kept, dropped) = length_filter(vec![record("a", 2050), record("b", 2048), record("c", 10)], 2048).unwrap();
        assert_eq!(
            kept.iter().map(|r| r.source_id.as_str()).collect::<Vec<_>>(),
            ["b", "c"]
        );
        assert_eq!(dropped.len(), 1);
        assert!(!dropped[0].kept);
        let (_, dropped) = length_filter(vec![record("a", 1)], 5).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(length_filter(vec![], 0), Err(AugmentError::ZeroLengthCap));
    }

    #[test]
    fn augmented_set_modes() {
        let originals: Vec<_> = (0..100).map(|i| report(&format!("r{i}"), "tekst")).collect();
        let translations: Vec<_> = (0..95).map(|i| record(&format!("r{i}"), 10)).collect();
        let union = build_augmented_set(&originals, &translations, AugmentMode::Union).unwrap();
        assert_eq!(union.len(), 195);
        assert_eq!(union[100].id(), "r0-en");
        let only = build_augmented_set(&originals, &translations, AugmentMode::TranslatedOnly).unwrap();
        assert_eq!(only.len(), 95);
        assert_eq!(
            build_augmented_set(&originals, &[], AugmentMode::TranslatedOnly),
            Err(AugmentError::EmptyTrainingSet)
        );
        let dup = vec![record("r1", 1), record("r1", 1)];
        assert_eq!(
            build_augmented_set(&[], &dup, AugmentMode::TranslatedOnly),
            Err(AugmentError::DuplicateId("r1-en".into()))
        );
    }

    #[test]
    fn backtranslation_with_echo_and_disjoint_mocks() {
        let long = "the cardiac silhouette is within normal limits and there is no focal consolidation effusion or pneumothorax";
        let pairs = vec![(long.to_string(), long.to_string()); 3];
        let echo = Client::new(MockBackend::echo());
        let s = score_backtranslation(&pairs, Language::English, &echo, &GenerationParams::default()).unwrap();
        assert!(s.mean_meteor > 0.99);
        let disjoint = Client::new(MockBackend::new("z", |_| Ok(ChatResponse::stopped("zzz qqq"))));
        let s = score_backtranslation(&pairs, Language::English, &disjoint, &GenerationParams::default()).unwrap();
        assert_eq!(s.mean_meteor, 0.0);
        assert_eq!(
            score_backtranslation(&[], Language::English, &echo, &GenerationParams::default()),
            Err(AugmentError::EmptyCorpus)
        );
    }
}
