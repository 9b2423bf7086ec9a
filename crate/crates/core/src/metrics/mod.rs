//! Evaluation of predicted label maps against gold annotations.
//!
//! Scores are one-vs-rest per finding and mention class. A finding's F1 is
//! undefined when the class never occurs in gold or predictions for it, and
//! undefined cells are left out of every average. The weighted score weights
//! each (finding, class) cell by its gold support over the taxonomy's declared
//! classes; not-mentioned cells are never weighted.

mod meteor;
mod stem;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedReport, Code, Labels, MentionClass, TaxonomySpec};
use crate::extractor::{ParsedPrediction, Repair};

pub use meteor::{meteor, tokenize, Meteor, MeteorScore, METEOR_VARIANT};
pub use stem::stem;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{preds} predictions for {golds} gold reports")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no prediction for gold report `{0}`")]
    MissingPrediction(String),
    #[error("duplicate prediction for `{0}`")]
    DuplicatePrediction(String),
    #[error("class {0} is not part of the taxonomy")]
    ClassNotInTaxonomy(MentionClass),
    #[error("no finding has a defined F1 for class {0}")]
    NoDefinedF1(MentionClass),
    #[error("total gold support is zero")]
    ZeroSupport,
    #[error("empty prediction list")]
    Empty,
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Anything carrying a report id and a label map.
pub trait Labeled {
    fn id(&self) -> &str;
    fn labels(&self) -> &Labels;
}

impl Labeled for AnnotatedReport {
    fn id(&self) -> &str {
        &self.report.id
    }
    fn labels(&self) -> &Labels {
        &self.labels
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub labels: Labels,
    pub valid: bool,
    #[serde(default)]
    pub repairs: Vec<Repair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl PredictionRecord {
    pub fn from_parsed(id: impl Into<String>, parsed: ParsedPrediction) -> Self {
        PredictionRecord {
            id: id.into(),
            labels: parsed.labels,
            valid: parsed.valid,
            repairs: parsed.repairs,
            failure: parsed.failure,
        }
    }
}

impl Labeled for PredictionRecord {
    fn id(&self) -> &str {
        &self.id
    }
    fn labels(&self) -> &Labels {
        &self.labels
    }
}

/// Pairs each gold record with the prediction of the same id.
fn align<'a, P: Labeled, G: Labeled>(preds: &'a [P], golds: &'a [G]) -> Result<Vec<(&'a Labels, &'a Labels)>> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let mut by_id: HashMap<&str, &Labels> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.id(), p.labels()).is_some() {
            return Err(MetricsError::DuplicatePrediction(p.id().to_string()));
        }
    }
    golds
        .iter()
        .map(|g| {
            by_id
                .get(g.id())
                .map(|p| (*p, g.labels()))
                .ok_or_else(|| MetricsError::MissingPrediction(g.id().to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    /// Gold occurrences of the class.
    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

fn code_of(labels: &Labels, finding: &str) -> Code {
    labels
        .get(finding)
        .copied()
        .unwrap_or(MentionClass::NotMentioned.code())
}

fn count_aligned(pairs: &[(&Labels, &Labels)], finding: &str, code: Code) -> Counts {
    let mut c = Counts::default();
    for (pred, gold) in pairs {
        let p = code_of(pred, finding) == code;
        let g = code_of(gold, finding) == code;
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

/// One-vs-rest confusion counts for `finding` and `class_code`.
pub fn confusion<P: Labeled, G: Labeled>(preds: &[P], golds: &[G], finding: &str, class_code: Code) -> Result<Counts> {
    Ok(count_aligned(&align(preds, golds)?, finding, class_code))
}

/// `2tp / (2tp + fp + fn)`, undefined when all counts are zero.
pub fn f1_from_counts(c: Counts) -> Option<f64> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    (denom > 0).then(|| 2.0 * c.tp as f64 / denom as f64)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_class(taxonomy: &TaxonomySpec, class: MentionClass) -> Result<()> {
    if class == MentionClass::NotMentioned || !taxonomy.has_class(class) {
        Err(MetricsError::ClassNotInTaxonomy(class))
    } else {
        Ok(())
    }
}

fn macro_aligned(pairs: &[(&Labels, &Labels)], taxonomy: &TaxonomySpec, class: MentionClass) -> Result<f64> {
    check_class(taxonomy, class)?;
    let defined: Vec<f64> = taxonomy
        .findings()
        .iter()
        .filter_map(|f| f1_from_counts(count_aligned(pairs, f, class.code())))
        .collect();
    if defined.is_empty() {
        return Err(MetricsError::NoDefinedF1(class));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

fn weighted_aligned(pairs: &[(&Labels, &Labels)], taxonomy: &TaxonomySpec) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0usize;
    for class in taxonomy.mention_classes() {
        for f in taxonomy.findings() {
            let c = count_aligned(pairs, f, class.code());
            if let Some(f1) = f1_from_counts(c) {
                num += c.support() as f64 * f1;
                den += c.support();
            }
        }
    }
    if den == 0 {
        return Err(MetricsError::ZeroSupport);
    }
    Ok(num / den as f64)
}

/// Unweighted mean of per-finding F1 for `class`, over findings where it is defined.
pub fn macro_f1<P: Labeled, G: Labeled>(
    preds: &[P],
    golds: &[G],
    taxonomy: &TaxonomySpec,
    class: MentionClass,
) -> Result<f64> {
    macro_aligned(&align(preds, golds)?, taxonomy, class)
}

/// Support-weighted mean of per-(finding, class) F1.
pub fn weighted_f1<P: Labeled, G: Labeled>(preds: &[P], golds: &[G], taxonomy: &TaxonomySpec) -> Result<f64> {
    weighted_aligned(&align(preds, golds)?, taxonomy)
}

/// Share of predictions flagged invalid.
pub fn invalid_rate(valid_flags: impl IntoIterator<Item = bool>) -> Result<f64> {
    let (mut n, mut invalid) = (0usize, 0usize);
    for v in valid_flags {
        n += 1;
        invalid += usize::from(!v);
    }
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(invalid as f64 / n as f64)
}

/// Number of (report, finding) cells whose codes differ, and that number over all cells.
pub fn count_mismatches<P: Labeled, G: Labeled>(
    preds: &[P],
    golds: &[G],
    taxonomy: &TaxonomySpec,
) -> Result<(usize, f64)> {
    let pairs = align(preds, golds)?;
    Ok(mismatches_aligned(&pairs, taxonomy))
}

fn mismatches_aligned(pairs: &[(&Labels, &Labels)], taxonomy: &TaxonomySpec) -> (usize, f64) {
    let count = pairs
        .iter()
        .map(|(p, g)| {
            taxonomy
                .findings()
                .iter()
                .filter(|f| code_of(p, f) != code_of(g, f))
                .count()
        })
        .sum();
    (count, ratio(count, pairs.len() * taxonomy.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: Option<f64>,
    pub support: usize,
    pub counts: Counts,
}

impl ClassScore {
    fn from_counts(counts: Counts) -> Self {
        ClassScore {
            precision: ratio(counts.tp, counts.tp + counts.fp),
            recall: ratio(counts.tp, counts.tp + counts.fn_),
            f1: f1_from_counts(counts),
            support: counts.support(),
            counts,
        }
    }
}

/// Notes stored with every report describing aggregation choices.
pub const EVAL_NOTES: &[&str] = &[
    "f1 undefined when tp+fp+fn=0; undefined cells excluded from averages",
    "weighted_f1 weights (finding, class) cells by gold support over declared classes; not_mentioned excluded",
    "invalid predictions are scored with their default-filled labels",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub per_finding: IndexMap<String, IndexMap<MentionClass, ClassScore>>,
    pub macro_pos_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_neg_f1: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub invalid_rate: f64,
    pub n_reports: usize,
    pub mismatches: usize,
    pub mismatch_rate: f64,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine<'a> {
    Cell {
        finding: &'a str,
        class: MentionClass,
        #[serde(flatten)]
        score: &'a ClassScore,
    },
    Summary {
        dataset_id: &'a str,
        macro_pos_f1: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        macro_neg_f1: Option<f64>,
        weighted_f1: Option<f64>,
        invalid_rate: f64,
        n_reports: usize,
        mismatches: usize,
        mismatch_rate: f64,
        notes: &'a [String],
    },
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

impl EvalReport {
    /// One line per (finding, class) cell, then a summary line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (finding, classes) in &self.per_finding {
            for (class, score) in classes {
                serde_json::to_writer(
                    &mut w,
                    &ReportLine::Cell {
                        finding,
                        class: *class,
                        score,
                    },
                )?;
                w.write_all(b"\n")?;
            }
        }
        let summary = ReportLine::Summary {
            dataset_id: &self.dataset_id,
            macro_pos_f1: self.macro_pos_f1,
            macro_neg_f1: self.macro_neg_f1,
            weighted_f1: self.weighted_f1,
            invalid_rate: self.invalid_rate,
            n_reports: self.n_reports,
            mismatches: self.mismatches,
            mismatch_rate: self.mismatch_rate,
            notes: &self.notes,
        };
        serde_json::to_writer(&mut w, &summary)?;
        w.write_all(b"\n")?;
        w.flush()
    }

    /// Plain-text table, scores in percent.
    pub fn to_table(&self) -> String {
        let width = self
            .per_finding
            .keys()
            .map(|f| f.chars().count())
            .max()
            .unwrap_or(7)
            .max(7);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:<9}  {:>6}  {:>6}  {:>6}  {:>7}",
            "finding", "class", "P", "R", "F1", "support"
        );
        for (finding, classes) in &self.per_finding {
            for (class, score) in classes {
                let _ = writeln!(
                    s,
                    "{:<width$}  {:<9}  {:>6}  {:>6}  {:>6}  {:>7}",
                    finding,
                    class.as_str(),
                    fmt_score(Some(score.precision)),
                    fmt_score(Some(score.recall)),
                    fmt_score(score.f1),
                    score.support
                );
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "(+)F1 {}", fmt_score(self.macro_pos_f1));
        if self.macro_neg_f1.is_some() {
            let _ = writeln!(s, "(-)F1 {}", fmt_score(self.macro_neg_f1));
        }
        let _ = writeln!(s, "(w)F1 {}", fmt_score(self.weighted_f1));
        let _ = writeln!(
            s,
            "invalid {:.2}%  mismatches {} ({:.2}%)  reports {}",
            100.0 * self.invalid_rate,
            self.mismatches,
            100.0 * self.mismatch_rate,
            self.n_reports
        );
        s
    }
}

/// Full evaluation of predictions against gold records.
pub fn evaluate(preds: &[PredictionRecord], golds: &[AnnotatedReport], taxonomy: &TaxonomySpec) -> Result<EvalReport> {
    let pairs = align(preds, golds)?;
    let per_finding = taxonomy
        .findings()
        .iter()
        .map(|f| {
            let classes = taxonomy
                .mention_classes()
                .map(|c| (c, ClassScore::from_counts(count_aligned(&pairs, f, c.code()))))
                .collect();
            (f.clone(), classes)
        })
        .collect();
    let macro_for = |class| macro_aligned(&pairs, taxonomy, class).ok();
    let (mismatches, mismatch_rate) = mismatches_aligned(&pairs, taxonomy);
    Ok(EvalReport {
        dataset_id: taxonomy.dataset_id().to_string(),
        per_finding,
        macro_pos_f1: macro_for(MentionClass::Positive),
        macro_neg_f1: taxonomy
            .has_class(MentionClass::Negative)
            .then(|| macro_for(MentionClass::Negative))
            .flatten(),
        weighted_f1: weighted_aligned(&pairs, taxonomy).ok(),
        invalid_rate: invalid_rate(preds.iter().map(|p| p.valid))?,
        n_reports: golds.len(),
        mismatches,
        mismatch_rate,
        notes: EVAL_NOTES.iter().map(|s| s.to_string()).collect(),
    })
}

/// Finding × dataset grid of F1 for `class`, one column per report.
pub fn finding_grid(reports: &[&EvalReport], class: MentionClass) -> String {
    let mut findings: Vec<&str> = Vec::new();
    for r in reports {
        for f in r.per_finding.keys() {
            if !findings.contains(&f.as_str()) {
                findings.push(f);
            }
        }
    }
    let width = findings.iter().map(|f| f.chars().count()).max().unwrap_or(7).max(7);
    let mut s = format!("{:<width$}", "finding");
    for r in reports {
        let _ = write!(s, "  {:>8}", r.dataset_id);
    }
    s.push('\n');
    for f in findings {
        let _ = write!(s, "{f:<width$}");
        for r in reports {
            let cell = r
                .per_finding
                .get(f)
                .and_then(|m| m.get(&class))
                .map_or_else(|| "".to_string(), |c| fmt_score(c.f1));
            let _ = write!(s, "  {cell:>8}");
        }
        s.push('\n');
    }
    s
}
