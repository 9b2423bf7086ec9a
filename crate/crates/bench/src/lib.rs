//! Synthetic fixtures shared by the benchmarks.

use radlabel_core::corpus::{AnnotatedReport, Labels, Language, MentionClass, Report, TaxonomySpec};
use radlabel_core::metrics::PredictionRecord;
use radlabel_core::promptgen::serialize_answer;

/// Taxonomy of `n` findings with positive, negative and uncertain classes.
pub fn taxonomy(n: usize) -> TaxonomySpec {
    TaxonomySpec::new(
        "bench",
        (0..n).map(|i| format!("finding {i}")),
        [MentionClass::Positive, MentionClass::Negative, MentionClass::Uncertain],
    )
    .expect("valid taxonomy")
}

/// Small deterministic generator so fixtures need no RNG dependency.
fn mix(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51afd7ed558ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ceb9fe1a85ec53);
    x ^ (x >> 33)
}

/// `n` reports; finding `f` is mentioned with probability falling off with `f`.
pub fn dataset(tax: &TaxonomySpec, n: usize) -> Vec<AnnotatedReport> {
    (0..n)
        .map(|i| {
            let labels: Labels = tax
                .findings()
                .iter()
                .enumerate()
                .map(|(f, name)| {
                    let h = mix((i as u64) << 16 | f as u64);
                    let mentioned = h % 100 < (40 / (f as u64 + 1)).max(3);
                    let code = if mentioned {
                        [1, 2, 0][(h >> 8) as usize % 3]
                    } else {
                        -1
                    };
                    (name.clone(), code)
                })
                .collect();
            AnnotatedReport {
                report: Report {
                    id: format!("b{i:06}"),
                    language: Language::English,
                    text: format!("Synthetic report {i} with a stable cardiac silhouette and clear lungs."),
                    source: "bench".into(),
                },
                labels,
            }
        })
        .collect()
}

/// Predictions that disagree with the gold label on roughly one cell in `every`.
pub fn predictions(golds: &[AnnotatedReport], every: u64) -> Vec<PredictionRecord> {
    golds
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let labels = g
                .labels
                .iter()
                .enumerate()
                .map(|(f, (k, &c))| {
                    let flip = mix((i as u64) << 20 | f as u64).is_multiple_of(every);
                    (
                        k.clone(),
                        if flip {
                            if c == 1 {
                                -1
                            } else {
                                1
                            }
                        } else {
                            c
                        },
                    )
                })
                .collect();
            PredictionRecord {
                id: g.id().to_string(),
                labels,
                valid: true,
                repairs: Vec::new(),
                failure: None,
            }
        })
        .collect()
}

/// Model-like answer text for each report: canonical JSON inside a fence with prose around it.
pub fn answers(golds: &[AnnotatedReport], tax: &TaxonomySpec) -> Vec<String> {
    golds
        .iter()
        .map(|g| {
            format!(
                "Here is the result:\n```json\n{}\n```\n",
                serialize_answer(&g.labels, tax)
            )
        })
        .collect()
}
