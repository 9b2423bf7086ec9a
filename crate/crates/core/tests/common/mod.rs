#![allow(dead_code)]

use proptest::prelude::*;
use radlabel_core::corpus::{AnnotatedReport, Code, Labels, Language, MentionClass, Report, TaxonomySpec};

pub const CLASS_SETS: [&[MentionClass]; 4] = [
    &[MentionClass::Positive],
    &[MentionClass::Positive, MentionClass::Negative],
    &[MentionClass::Positive, MentionClass::Uncertain],
    &[MentionClass::Positive, MentionClass::Negative, MentionClass::Uncertain],
];

pub fn taxonomy(findings: &[String], classes: &[MentionClass]) -> TaxonomySpec {
    TaxonomySpec::new("fixture", findings.iter().cloned(), classes.iter().copied()).unwrap()
}

pub fn record(id: &str, text: &str, pairs: &[(String, Code)], tax: &TaxonomySpec) -> AnnotatedReport {
    let report = Report {
        id: id.to_string(),
        language: Language::English,
        text: text.to_string(),
        source: tax.dataset_id().to_string(),
    };
    AnnotatedReport::new(report, pairs.iter().cloned().collect(), tax).unwrap()
}

/// Distinct lowercase finding names, possibly with inner spaces.
pub fn findings(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set("[a-z]{2,8}( [a-z]{2,8})?", 1..=max).prop_map(|s| s.into_iter().collect())
}

pub fn class_set() -> impl Strategy<Value = &'static [MentionClass]> {
    (0..CLASS_SETS.len()).prop_map(|i| CLASS_SETS[i])
}

pub fn taxonomy_strategy(max_findings: usize) -> impl Strategy<Value = TaxonomySpec> {
    (findings(max_findings), class_set()).prop_map(|(f, c)| taxonomy(&f, c))
}

/// A label map over `tax` drawn from its allowed codes.
pub fn labels_for(tax: &TaxonomySpec) -> impl Strategy<Value = Labels> {
    let codes = tax.allowed_codes();
    let names: Vec<String> = tax.findings().to_vec();
    prop::collection::vec(prop::sample::select(codes), names.len())
        .prop_map(move |cs| names.iter().cloned().zip(cs).collect())
}

pub fn tax_and_labels(max_findings: usize) -> impl Strategy<Value = (TaxonomySpec, Labels)> {
    taxonomy_strategy(max_findings).prop_flat_map(|t| {
        let labels = labels_for(&t);
        (Just(t), labels)
    })
}

/// A dataset of `n` reports over `tax`, each label drawn from the allowed codes.
pub fn dataset_for(
    tax: TaxonomySpec,
    n: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = Vec<AnnotatedReport>> {
    let labels = labels_for(&tax);
    prop::collection::vec(labels, n).prop_map(move |rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, labels)| AnnotatedReport {
                report: Report {
                    id: format!("r{i:04}"),
                    language: Language::English,
                    text: format!("report number {i}"),
                    source: tax.dataset_id().to_string(),
                },
                labels,
            })
            .collect()
    })
}
