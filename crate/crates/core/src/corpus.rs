//! Taxonomies, annotated reports and dataset loading.
//!
//! A [`TaxonomySpec`] fixes which findings a dataset annotates and which mention
//! classes its labels may take. Every [`AnnotatedReport`] carries one code per
//! taxonomy finding, in taxonomy order; findings the annotators did not mark
//! hold [`MentionClass::NotMentioned`] (`-1`).

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Integer label code as it appears in datasets and model answers.
pub type Code = i32;

/// Finding name to code, kept in taxonomy order.
pub type Labels = IndexMap<String, Code>;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("taxonomy has no findings")]
    EmptyTaxonomy,
    #[error("taxonomy finding name is empty")]
    EmptyFinding,
    #[error("duplicate finding `{0}` in taxonomy")]
    DuplicateFinding(String),
    #[error("mention classes must include positive")]
    MissingPositiveClass,
    #[error("`not_mentioned` is implicit and cannot be declared as a mention class")]
    NotMentionedDeclared,
    #[error("unknown mention class `{0}`")]
    UnknownMentionClass(String),
    #[error("unknown language `{0}` (expected en, es, fr or da)")]
    UnknownLanguage(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported dataset format for {0} (expected .jsonl, .csv or .tsv)")]
    UnsupportedFormat(PathBuf),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown finding `{key}`")]
    UnknownFinding { line: usize, key: String },
    #[error("line {line}: code {code} not allowed for `{finding}`")]
    CodeNotAllowed { line: usize, finding: String, code: Code },
    #[error("line {line}: duplicate report id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: report text is empty")]
    EmptyText { line: usize },
    #[error("report `{id}`: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("certainty score {0} outside 1..=5")]
    CertaintyOutOfRange(i64),
    #[error("minimum support must be at least 1")]
    ZeroMinSupport,
    #[error("no finding reaches a support of {0}")]
    AllFindingsDropped(usize),
    #[error("k = {k} outside 1..={n}")]
    TopKOutOfRange { k: usize, n: usize },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Mention status of a finding in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionClass {
    Positive,
    Negative,
    Uncertain,
    NotMentioned,
}

impl MentionClass {
    pub const fn code(self) -> Code {
        match self {
            MentionClass::Positive => 1,
            MentionClass::Negative => 2,
            MentionClass::Uncertain => 0,
            MentionClass::NotMentioned => -1,
        }
    }

    pub fn from_code(code: Code) -> Option<Self> {
        match code {
            1 => Some(MentionClass::Positive),
            2 => Some(MentionClass::Negative),
            0 => Some(MentionClass::Uncertain),
            -1 => Some(MentionClass::NotMentioned),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MentionClass::Positive => "positive",
            MentionClass::Negative => "negative",
            MentionClass::Uncertain => "uncertain",
            MentionClass::NotMentioned => "not_mentioned",
        }
    }
}

impl fmt::Display for MentionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MentionClass {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" | "+" => Ok(MentionClass::Positive),
            "negative" | "neg" | "-" => Ok(MentionClass::Negative),
            "uncertain" | "unc" | "~" => Ok(MentionClass::Uncertain),
            "not_mentioned" | "not mentioned" => Ok(MentionClass::NotMentioned),
            other => Err(CorpusError::UnknownMentionClass(other.to_string())),
        }
    }
}

/// Report languages covered by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Language {
    English,
    Spanish,
    French,
    Danish,
}

impl Language {
    pub const ALL: [Language; 4] = [Language::English, Language::Spanish, Language::French, Language::Danish];

    pub fn tag(self) -> &'static str {
        match self {
            Language::English => "en",
            Language::Spanish => "es",
            Language::French => "fr",
            Language::Danish => "da",
        }
    }

    /// Full English name, as substituted into translation prompts.
    pub fn name(self) -> &'static str {
        match self {
            Language::English => "English",
            Language::Spanish => "Spanish",
            Language::French => "French",
            Language::Danish => "Danish",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Language {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        Language::ALL
            .into_iter()
            .find(|l| l.tag() == norm || l.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| CorpusError::UnknownLanguage(s.to_string()))
    }
}

impl Serialize for Language {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for Language {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Trim and lowercase a finding name.
pub fn normalize_finding(name: &str) -> String {
    name.trim().to_lowercase()
}

/// A dataset's finding vocabulary and the mention classes its labels use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyDecl", into = "TaxonomyDecl")]
pub struct TaxonomySpec {
    dataset_id: String,
    findings: Vec<String>,
    mention_classes: BTreeSet<MentionClass>,
}

/// Serialized form of a taxonomy, validated on conversion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomyDecl {
    pub dataset_id: String,
    pub findings: Vec<String>,
    pub mention_classes: Vec<MentionClass>,
}

impl TryFrom<TaxonomyDecl> for TaxonomySpec {
    type Error = CorpusError;

    fn try_from(decl: TaxonomyDecl) -> Result<Self> {
        TaxonomySpec::new(decl.dataset_id, decl.findings, decl.mention_classes)
    }
}

impl From<TaxonomySpec> for TaxonomyDecl {
    fn from(t: TaxonomySpec) -> Self {
        TaxonomyDecl {
            dataset_id: t.dataset_id,
            findings: t.findings,
            mention_classes: t.mention_classes.into_iter().collect(),
        }
    }
}

impl TaxonomySpec {
    pub fn new<F, C>(dataset_id: impl Into<String>, findings: F, mention_classes: C) -> Result<Self>
    where
        F: IntoIterator,
        F::Item: AsRef<str>,
        C: IntoIterator<Item = MentionClass>,
    {
        let mut seen = HashSet::new();
        let mut names = Vec::new();
        for f in findings {
            let name = normalize_finding(f.as_ref());
            if name.is_empty() {
                return Err(CorpusError::EmptyFinding);
            }
            if !seen.insert(name.clone()) {
                return Err(CorpusError::DuplicateFinding(name));
            }
            names.push(name);
        }
        if names.is_empty() {
            return Err(CorpusError::EmptyTaxonomy);
        }
        let classes: BTreeSet<_> = mention_classes.into_iter().collect();
        if classes.contains(&MentionClass::NotMentioned) {
            return Err(CorpusError::NotMentionedDeclared);
        }
        if !classes.contains(&MentionClass::Positive) {
            return Err(CorpusError::MissingPositiveClass);
        }
        Ok(TaxonomySpec {
            dataset_id: dataset_id.into(),
            findings: names,
            mention_classes: classes,
        })
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn findings(&self) -> &[String] {
        &self.findings
    }

    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    /// Declared classes, excluding the implicit not-mentioned state.
    pub fn mention_classes(&self) -> impl Iterator<Item = MentionClass> + '_ {
        self.mention_classes.iter().copied()
    }

    pub fn has_class(&self, class: MentionClass) -> bool {
        class == MentionClass::NotMentioned || self.mention_classes.contains(&class)
    }

    /// Allowed codes in ascending order; always contains `-1`.
    pub fn allowed_codes(&self) -> Vec<Code> {
        let mut codes: Vec<Code> = self
            .mention_classes
            .iter()
            .map(|c| c.code())
            .chain(std::iter::once(MentionClass::NotMentioned.code()))
            .collect();
        codes.sort_unstable();
        codes
    }

    pub fn is_allowed(&self, code: Code) -> bool {
        MentionClass::from_code(code).is_some_and(|c| self.has_class(c))
    }

    pub fn position(&self, finding: &str) -> Option<usize> {
        self.findings.iter().position(|f| f == finding)
    }

    pub fn contains(&self, finding: &str) -> bool {
        self.position(finding).is_some()
    }

    /// Same dataset and classes, restricted to `keep` (taxonomy order preserved).
    pub fn restricted_to(&self, keep: &HashSet<&str>) -> Result<TaxonomySpec> {
        TaxonomySpec::new(
            self.dataset_id.clone(),
            self.findings.iter().filter(|f| keep.contains(f.as_str())),
            self.mention_classes.iter().copied(),
        )
    }

    /// Labels with every finding not mentioned.
    pub fn default_labels(&self) -> Labels {
        self.findings
            .iter()
            .map(|f| (f.clone(), MentionClass::NotMentioned.code()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub language: Language,
    pub text: String,
    pub source: String,
}

/// A report with one gold code per taxonomy finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedReport {
    pub report: Report,
    pub labels: Labels,
}

impl AnnotatedReport {
    /// Builds a record whose labels are reordered to taxonomy order; findings
    /// absent from `labels` are filled with `-1`.
    pub fn new(report: Report, labels: Labels, taxonomy: &TaxonomySpec) -> Result<Self> {
        if report.text.trim().is_empty() {
            return Err(CorpusError::InvalidRecord {
                id: report.id,
                message: "empty text".into(),
            });
        }
        let mut out = taxonomy.default_labels();
        for (key, code) in labels {
            let key = normalize_finding(&key);
            let Some(slot) = out.get_mut(&key) else {
                return Err(CorpusError::InvalidRecord {
                    id: report.id,
                    message: format!("unknown finding `{key}`"),
                });
            };
            if !taxonomy.is_allowed(code) {
                return Err(CorpusError::InvalidRecord {
                    id: report.id,
                    message: format!("code {code} not allowed for `{key}`"),
                });
            }
            *slot = code;
        }
        Ok(AnnotatedReport { report, labels: out })
    }

    pub fn id(&self) -> &str {
        &self.report.id
    }

    pub fn text(&self) -> &str {
        &self.report.text
    }

    pub fn code(&self, finding: &str) -> Option<Code> {
        self.labels.get(finding).copied()
    }

    /// Checks the record against `taxonomy`: exact key set in order, allowed codes.
    pub fn conforms_to(&self, taxonomy: &TaxonomySpec) -> bool {
        self.labels.len() == taxonomy.len()
            && self
                .labels
                .iter()
                .zip(taxonomy.findings())
                .all(|((k, &c), f)| k == f && taxonomy.is_allowed(c))
    }
}

/// Maps a 1–5 certainty score to a code: 4 and 5 are positive, lower scores uncertain.
pub fn map_certainty(score: i64) -> Result<Code> {
    match score {
        4 | 5 => Ok(MentionClass::Positive.code()),
        1..=3 => Ok(MentionClass::Uncertain.code()),
        other => Err(CorpusError::CertaintyOutOfRange(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// One JSON object per line with `id`, `language`, `text`, `labels`.
    JsonLines,
    /// Delimited table with `id`, `language`, `text` and one column per finding.
    Table { delimiter: u8 },
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("jsonl") | Some("ndjson") | Some("json") => Ok(DatasetFormat::JsonLines),
            Some("csv") => Ok(DatasetFormat::Table { delimiter: b',' }),
            Some("tsv") => Ok(DatasetFormat::Table { delimiter: b'\t' }),
            _ => Err(CorpusError::UnsupportedFormat(path.to_path_buf())),
        }
    }
}

/// Loads a dataset file, choosing the format from its extension.
pub fn load_dataset(path: &Path, taxonomy: &TaxonomySpec) -> Result<Vec<AnnotatedReport>> {
    let format = DatasetFormat::from_path(path)?;
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        DatasetFormat::JsonLines => read_jsonl(BufReader::new(file), taxonomy),
        DatasetFormat::Table { delimiter } => read_table(file, delimiter, taxonomy),
    }
}

struct RecordChecker<'a> {
    taxonomy: &'a TaxonomySpec,
    ids: HashSet<String>,
}

impl<'a> RecordChecker<'a> {
    fn new(taxonomy: &'a TaxonomySpec) -> Self {
        RecordChecker {
            taxonomy,
            ids: HashSet::new(),
        }
    }

    fn finding(&self, line: usize, key: &str) -> Result<String> {
        let key = normalize_finding(key);
        if self.taxonomy.contains(&key) {
            Ok(key)
        } else {
            Err(CorpusError::UnknownFinding { line, key })
        }
    }

    fn code(&self, line: usize, finding: &str, code: Code) -> Result<Code> {
        if self.taxonomy.is_allowed(code) {
            Ok(code)
        } else {
            Err(CorpusError::CodeNotAllowed {
                line,
                finding: finding.to_string(),
                code,
            })
        }
    }

    fn finish(
        &mut self,
        line: usize,
        id: String,
        language: &str,
        text: String,
        assigned: Vec<(String, Code)>,
    ) -> Result<AnnotatedReport> {
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText { line });
        }
        let language = language.parse::<Language>().map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if !self.ids.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line, id });
        }
        let mut labels = self.taxonomy.default_labels();
        for (k, c) in assigned {
            labels[&k] = c;
        }
        Ok(AnnotatedReport {
            report: Report {
                id,
                language,
                text,
                source: self.taxonomy.dataset_id().to_string(),
            },
            labels,
        })
    }
}

fn json_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Reads line-delimited records. Blank lines are ignored; line numbers are 1-based.
pub fn read_jsonl<R: BufRead>(reader: R, taxonomy: &TaxonomySpec) -> Result<Vec<AnnotatedReport>> {
    let mut checker = RecordChecker::new(taxonomy);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::Malformed { line: line_no, message };
        let value: Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("record is not an object".into()))?;
        let id = obj
            .get("id")
            .and_then(json_id)
            .ok_or_else(|| malformed("missing or empty `id`".into()))?;
        let language = obj
            .get("language")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("missing `language`".into()))?;
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("missing `text`".into()))?;
        let mut assigned = Vec::new();
        if let Some(labels) = obj.get("labels") {
            let labels = labels
                .as_object()
                .ok_or_else(|| malformed("`labels` is not an object".into()))?;
            for (key, v) in labels {
                let finding = checker.finding(line_no, key)?;
                let code = v
                    .as_i64()
                    .and_then(|c| Code::try_from(c).ok())
                    .ok_or_else(|| malformed(format!("label `{key}` is not an integer")))?;
                let code = checker.code(line_no, &finding, code)?;
                assigned.push((finding, code));
            }
        }
        out.push(checker.finish(line_no, id, language, text.to_string(), assigned)?);
    }
    Ok(out)
}

/// Reads a delimited table. Empty finding cells mean not mentioned; line numbers
/// count the header as line 1.
pub fn read_table<R: Read>(reader: R, delimiter: u8, taxonomy: &TaxonomySpec) -> Result<Vec<AnnotatedReport>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut checker = RecordChecker::new(taxonomy);
    let (mut id_col, mut lang_col, mut text_col) = (None, None, None);
    let mut finding_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        match normalize_finding(h).as_str() {
            "id" => id_col = Some(i),
            "language" => lang_col = Some(i),
            "text" => text_col = Some(i),
            _ => finding_cols.push((i, checker.finding(1, h)?)),
        }
    }
    let missing = |name: &str| CorpusError::Malformed {
        line: 1,
        message: format!("missing `{name}` column"),
    };
    let id_col = id_col.ok_or_else(|| missing("id"))?;
    let lang_col = lang_col.ok_or_else(|| missing("language"))?;
    let text_col = text_col.ok_or_else(|| missing("text"))?;

    let mut out = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let fallback_line = idx + 2;
        let row = row.map_err(|e| CorpusError::Malformed {
            line: fallback_line,
            message: e.to_string(),
        })?;
        let line_no = row.position().map(|p| p.line() as usize).unwrap_or(fallback_line);
        let id = row[id_col].trim().to_string();
        if id.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "empty `id`".into(),
            });
        }
        let mut assigned = Vec::new();
        for (col, finding) in &finding_cols {
            let cell = row[*col].trim();
            if cell.is_empty() {
                continue;
            }
            let code: Code = cell.parse().map_err(|_| CorpusError::Malformed {
                line: line_no,
                message: format!("label `{finding}` is not an integer: `{cell}`"),
            })?;
            let code = checker.code(line_no, finding, code)?;
            assigned.push((finding.clone(), code));
        }
        out.push(checker.finish(line_no, id, &row[lang_col], row[text_col].to_string(), assigned)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct RecordLine<'a> {
    id: &'a str,
    language: Language,
    text: &'a str,
    labels: &'a Labels,
}

/// Writes records in the line-delimited input format, labels in taxonomy order.
pub fn write_jsonl<W: Write>(mut writer: W, records: &[AnnotatedReport]) -> io::Result<()> {
    for r in records {
        let line = RecordLine {
            id: &r.report.id,
            language: r.report.language,
            text: &r.report.text,
            labels: &r.labels,
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

/// Number of reports mentioning each finding (any code other than `-1`), in taxonomy order.
pub fn finding_supports(dataset: &[AnnotatedReport], taxonomy: &TaxonomySpec) -> Vec<usize> {
    taxonomy
        .findings()
        .iter()
        .map(|f| {
            dataset
                .iter()
                .filter(|r| r.code(f).is_some_and(|c| c != MentionClass::NotMentioned.code()))
                .count()
        })
        .collect()
}

/// Projects records onto a sub-taxonomy, dropping labels of removed findings.
pub fn restrict_labels(dataset: &[AnnotatedReport], taxonomy: &TaxonomySpec) -> Vec<AnnotatedReport> {
    dataset
        .iter()
        .map(|r| AnnotatedReport {
            report: r.report.clone(),
            labels: taxonomy
                .findings()
                .iter()
                .map(|f| {
                    let code = r.code(f).unwrap_or(MentionClass::NotMentioned.code());
                    (f.clone(), code)
                })
                .collect(),
        })
        .collect()
}

/// Keeps findings mentioned in at least `min_count` reports.
pub fn filter_findings_by_support(
    dataset: &[AnnotatedReport],
    taxonomy: &TaxonomySpec,
    min_count: usize,
) -> Result<(TaxonomySpec, Vec<AnnotatedReport>)> {
    if min_count == 0 {
        return Err(CorpusError::ZeroMinSupport);
    }
    let supports = finding_supports(dataset, taxonomy);
    let keep: HashSet<&str> = taxonomy
        .findings()
        .iter()
        .zip(&supports)
        .filter(|(_, &s)| s >= min_count)
        .map(|(f, _)| f.as_str())
        .collect();
    if keep.is_empty() {
        return Err(CorpusError::AllFindingsDropped(min_count));
    }
    let reduced = taxonomy.restricted_to(&keep)?;
    let records = restrict_labels(dataset, &reduced);
    Ok((reduced, records))
}

/// Keeps the `k` most supported findings; ties go to the earlier finding.
pub fn top_k_findings(
    dataset: &[AnnotatedReport],
    taxonomy: &TaxonomySpec,
    k: usize,
) -> Result<(TaxonomySpec, Vec<AnnotatedReport>)> {
    let n = taxonomy.len();
    if k == 0 || k > n {
        return Err(CorpusError::TopKOutOfRange { k, n });
    }
    let supports = finding_supports(dataset, taxonomy);
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps taxonomy order among equal supports
    order.sort_by(|&a, &b| supports[b].cmp(&supports[a]));
    let keep: HashSet<&str> = order[..k].iter().map(|&i| taxonomy.findings()[i].as_str()).collect();
    let reduced = taxonomy.restricted_to(&keep)?;
    let records = restrict_labels(dataset, &reduced);
    Ok((reduced, records))
}
