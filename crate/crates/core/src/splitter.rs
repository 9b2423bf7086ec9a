//! Multilabel iterative stratification.
//!
//! Each finding with a code other than `-1` counts as a label of the report.
//! Labels are processed rarest first; each of their unassigned reports goes to
//! the subset that still wants the most of that label, then to the subset with
//! the most free capacity, then to a seeded random pick among the tied subsets.
//! Subset sizes are fixed up front (largest-remainder rounding of the requested
//! fractions) and never exceeded, so every subset lands within one report of
//! `fraction * N`.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedReport, MentionClass, TaxonomySpec};

const FRACTION_TOLERANCE: f64 = 1e-9;
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid fractions {0:?}: expected three nonnegative values summing to 1")]
    InvalidFractions([f64; 3]),
    #[error("subset counts {counts:?} do not sum to dataset size {n}")]
    InvalidCounts { counts: [usize; 3], n: usize },
    #[error("subsample fraction {0} outside (0, 1]")]
    FractionOutOfRange(f64),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("report `{0}` has no subset in the manifest")]
    MissingId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = SplitError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Dev,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Dev, Subset::Test];

    fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Dev => "dev",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Subset::Train),
            "dev" | "val" | "validation" => Ok(Subset::Dev),
            "test" => Ok(Subset::Test),
            other => Err(format!("unknown subset `{other}`")),
        }
    }
}

/// Report id to subset, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    assignment: IndexMap<String, Subset>,
    fractions: [f64; 3],
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    fractions: [f64; 3],
    seed: u64,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    subset: Subset,
}

impl SplitAssignment {
    pub fn fractions(&self) -> [f64; 3] {
        self.fractions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn subset_of(&self, id: &str) -> Option<Subset> {
        self.assignment.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Subset)> {
        self.assignment.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn ids(&self, subset: Subset) -> impl Iterator<Item = &str> {
        self.iter().filter(move |(_, s)| *s == subset).map(|(id, _)| id)
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in self.assignment.values() {
            c[s.index()] += 1;
        }
        c
    }

    /// Records of `dataset` assigned to `subset`, in dataset order. Fails if a
    /// record is not covered by the assignment.
    pub fn select(&self, dataset: &[AnnotatedReport], subset: Subset) -> Result<Vec<AnnotatedReport>> {
        let mut out = Vec::new();
        for r in dataset {
            match self.subset_of(r.id()) {
                Some(s) if s == subset => out.push(r.clone()),
                Some(_) => {}
                None => return Err(SplitError::MissingId(r.id().to_string())),
            }
        }
        Ok(out)
    }

    /// Header line with fractions and seed, then one `{id, subset}` line per report.
    pub fn write_manifest<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = ManifestHeader {
            fractions: self.fractions,
            seed: self.seed,
            n: self.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (id, subset) in self.iter() {
            serde_json::to_writer(
                &mut w,
                &ManifestLine {
                    id: id.to_string(),
                    subset,
                },
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_manifest<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
            Ok(l) => !l.trim().is_empty(),
            Err(_) => true,
        });
        let bad = |line: usize, e: &dyn fmt::Display| SplitError::Manifest {
            line,
            message: e.to_string(),
        };
        let (_, first) = lines.next().ok_or(SplitError::Manifest {
            line: 1,
            message: "empty manifest".into(),
        })?;
        let header: ManifestHeader = serde_json::from_str(&first?).map_err(|e| bad(1, &e))?;
        let mut assignment = IndexMap::new();
        for (idx, line) in lines {
            let entry: ManifestLine = serde_json::from_str(&line?).map_err(|e| bad(idx + 1, &e))?;
            if assignment.insert(entry.id.clone(), entry.subset).is_some() {
                return Err(bad(idx + 1, &format!("duplicate id `{}`", entry.id)));
            }
        }
        if assignment.len() != header.n {
            return Err(bad(
                1,
                &format!("header declares {} ids, found {}", header.n, assignment.len()),
            ));
        }
        Ok(SplitAssignment {
            assignment,
            fractions: header.fractions,
            seed: header.seed,
        })
    }
}

fn validate_fractions(fractions: [f64; 3]) -> Result<()> {
    let ok = fractions.iter().all(|f| f.is_finite() && *f >= 0.0)
        && (fractions.iter().sum::<f64>() - 1.0).abs() <= FRACTION_TOLERANCE;
    if ok {
        Ok(())
    } else {
        Err(SplitError::InvalidFractions(fractions))
    }
}

/// Integer subset sizes by largest remainder; each is within one of `fraction * n`.
pub fn target_counts(fractions: [f64; 3], n: usize) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = (e + TIE_EPS).floor() as usize;
    }
    let mut assigned: usize = counts.iter().sum();
    // floor can overshoot only through the epsilon on values like 0.9999999999
    while assigned > n {
        let j = (0..3).rev().find(|&j| counts[j] > 0).unwrap();
        counts[j] -= 1;
        assigned -= 1;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &j in order.iter().cycle().take(n - assigned) {
        counts[j] += 1;
    }
    counts
}

fn label_sets(dataset: &[AnnotatedReport], taxonomy: &TaxonomySpec) -> Vec<Vec<usize>> {
    dataset
        .iter()
        .map(|r| {
            taxonomy
                .findings()
                .iter()
                .enumerate()
                .filter(|(_, f)| r.code(f).is_some_and(|c| c != MentionClass::NotMentioned.code()))
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

fn pick<R: rand::Rng>(candidates: &[usize], rng: &mut R) -> usize {
    if candidates.len() == 1 {
        candidates[0]
    } else {
        *candidates.choose(rng).expect("non-empty candidates")
    }
}

/// Core assignment; returns a subset index per example.
fn iterative_stratification(labels: &[Vec<usize>], n_labels: usize, capacity: [usize; 3], seed: u64) -> Vec<usize> {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cap = capacity.map(|c| c as f64);
    let share: Vec<f64> = capacity.iter().map(|&c| c as f64 / n as f64).collect();

    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
    for (i, ls) in labels.iter().enumerate() {
        for &l in ls {
            by_label[l].push(i);
        }
    }
    let mut remaining: Vec<usize> = by_label.iter().map(Vec::len).collect();
    let mut demand: Vec<[f64; 3]> = remaining
        .iter()
        .map(|&s| [0, 1, 2].map(|j| share[j] * s as f64))
        .collect();
    let mut assigned: Vec<Option<usize>> = vec![None; n];

    while let Some(min_rem) = remaining.iter().copied().filter(|&r| r > 0).min() {
        let rarest: Vec<usize> = (0..n_labels).filter(|&l| remaining[l] == min_rem).collect();
        let label = pick(&rarest, &mut rng);

        for &ex in &by_label[label] {
            if assigned[ex].is_some() {
                continue;
            }
            let open: Vec<usize> = (0..3).filter(|&j| cap[j] > 0.5).collect();
            // demand of every label on the report, relative to its support
            let joint = |j: usize| -> f64 {
                labels[ex]
                    .iter()
                    .map(|&l| demand[l][j] / by_label[l].len() as f64)
                    .sum()
            };
            let best_joint = open.iter().map(|&j| joint(j)).fold(f64::NEG_INFINITY, f64::max);
            let by_demand: Vec<usize> = open
                .iter()
                .copied()
                .filter(|&j| joint(j) >= best_joint - TIE_EPS)
                .collect();
            let best_cap = by_demand.iter().map(|&j| cap[j]).fold(f64::NEG_INFINITY, f64::max);
            let by_cap: Vec<usize> = by_demand
                .into_iter()
                .filter(|&j| cap[j] >= best_cap - TIE_EPS)
                .collect();
            let j = pick(&by_cap, &mut rng);

            assigned[ex] = Some(j);
            cap[j] -= 1.0;
            for &l in &labels[ex] {
                demand[l][j] -= 1.0;
                remaining[l] -= 1;
            }
        }
    }

    // reports without any mention only fill leftover capacity
    for slot in assigned.iter_mut().filter(|a| a.is_none()) {
        let best = cap.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..3).filter(|&j| cap[j] >= best - TIE_EPS).collect();
        let j = pick(&tied, &mut rng);
        *slot = Some(j);
        cap[j] -= 1.0;
    }

    let mut subsets: Vec<usize> = assigned.into_iter().map(|a| a.expect("all assigned")).collect();
    refine(labels, n_labels, &mut subsets, capacity);
    subsets
}

/// Reports per side considered when looking for a swap.
const SWAP_CANDIDATES: usize = 24;

/// Swaps reports between subsets while that lowers the distance of per-label
/// counts from their targets (squared, divided by squared support). Subset
/// sizes do not change.
fn refine(labels: &[Vec<usize>], n_labels: usize, subsets: &mut [usize], capacity: [usize; 3]) {
    let n = labels.len();
    if n == 0 {
        return;
    }
    let share = capacity.map(|c| c as f64 / n as f64);
    let mut support = vec![0usize; n_labels];
    let mut count = vec![[0i64; 3]; n_labels];
    for (ls, &j) in labels.iter().zip(subsets.iter()) {
        for &l in ls {
            support[l] += 1;
            count[l][j] += 1;
        }
    }
    let target: Vec<[f64; 3]> = support.iter().map(|&s| share.map(|f| f * s as f64)).collect();
    let weight: Vec<f64> = support
        .iter()
        .map(|&s| if s == 0 { 0.0 } else { 1.0 / (s * s) as f64 })
        .collect();
    let dev = |count: &[[i64; 3]], l: usize, j: usize| count[l][j] as f64 - target[l][j];
    // cost change when one report with label `l` moves from `p` to `q`
    let shift = |count: &[[i64; 3]], l: usize, p: usize, q: usize| {
        weight[l] * (2.0 * (dev(count, l, q) - dev(count, l, p)) + 2.0)
    };
    let open: Vec<usize> = (0..3).filter(|&j| capacity[j] > 0).collect();

    for _ in 0..50 * n_labels.max(1) {
        let mut gaps: Vec<(f64, usize, usize, usize)> = Vec::new();
        for (l, &w) in weight.iter().enumerate() {
            for &p in &open {
                for &q in &open {
                    let gap = dev(&count, l, p) - dev(&count, l, q);
                    if p != q && gap > 1.0 + TIE_EPS {
                        gaps.push((w * gap, l, p, q));
                    }
                }
            }
        }
        gaps.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));

        let mut swapped = false;
        for &(_, l, p, q) in &gaps {
            let solo = |i: usize, from: usize, to: usize| -> f64 {
                labels[i].iter().map(|&m| shift(&count, m, from, to)).sum()
            };
            let best_of = |from: usize, to: usize, with_l: bool| {
                let mut c: Vec<(f64, usize)> = (0..n)
                    .filter(|&i| subsets[i] == from && labels[i].contains(&l) == with_l)
                    .map(|i| (solo(i, from, to), i))
                    .collect();
                c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                c.truncate(SWAP_CANDIDATES);
                c
            };
            let outs = best_of(p, q, true);
            let ins = best_of(q, p, false);
            let mut best: Option<(f64, usize, usize)> = None;
            for &(_, a) in &outs {
                for &(_, b) in &ins {
                    let delta: f64 = labels[a]
                        .iter()
                        .filter(|m| !labels[b].contains(m))
                        .map(|&m| shift(&count, m, p, q))
                        .chain(
                            labels[b]
                                .iter()
                                .filter(|m| !labels[a].contains(m))
                                .map(|&m| shift(&count, m, q, p)),
                        )
                        .sum();
                    if delta < -TIE_EPS && best.is_none_or(|(d, _, _)| delta < d) {
                        best = Some((delta, a, b));
                    }
                }
            }
            if let Some((_, a, b)) = best {
                for &m in &labels[a] {
                    count[m][p] -= 1;
                    count[m][q] += 1;
                }
                for &m in &labels[b] {
                    count[m][q] -= 1;
                    count[m][p] += 1;
                }
                subsets[a] = q;
                subsets[b] = p;
                swapped = true;
                break;
            }
        }
        if !swapped {
            break;
        }
    }
}

fn assemble(dataset: &[AnnotatedReport], subsets: &[usize], fractions: [f64; 3], seed: u64) -> SplitAssignment {
    let assignment = dataset
        .iter()
        .zip(subsets)
        .map(|(r, &j)| (r.id().to_string(), Subset::ALL[j]))
        .collect();
    SplitAssignment {
        assignment,
        fractions,
        seed,
    }
}

/// Stratified train/dev/test split with sizes derived from `fractions`.
pub fn stratified_split(
    dataset: &[AnnotatedReport],
    taxonomy: &TaxonomySpec,
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    validate_fractions(fractions)?;
    if dataset.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    let counts = target_counts(fractions, dataset.len());
    let subsets = iterative_stratification(&label_sets(dataset, taxonomy), taxonomy.len(), counts, seed);
    Ok(assemble(dataset, &subsets, fractions, seed))
}

/// Stratified split with absolute subset sizes, e.g. a fixed number of dev reports.
pub fn stratified_split_with_counts(
    dataset: &[AnnotatedReport],
    taxonomy: &TaxonomySpec,
    counts: [usize; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    let n = dataset.len();
    if n == 0 {
        return Err(SplitError::EmptyDataset);
    }
    if counts.iter().sum::<usize>() != n {
        return Err(SplitError::InvalidCounts { counts, n });
    }
    let fractions = counts.map(|c| c as f64 / n as f64);
    let subsets = iterative_stratification(&label_sets(dataset, taxonomy), taxonomy.len(), counts, seed);
    Ok(assemble(dataset, &subsets, fractions, seed))
}

/// Stratified subset of `ceil(fraction * N)` training reports, in original order.
pub fn subsample(
    train: &[AnnotatedReport],
    taxonomy: &TaxonomySpec,
    fraction: f64,
    seed: u64,
) -> Result<Vec<AnnotatedReport>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SplitError::FractionOutOfRange(fraction));
    }
    if train.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    let n = train.len();
    let keep = ((fraction * n as f64) - TIE_EPS).ceil().clamp(1.0, n as f64) as usize;
    let subsets = iterative_stratification(&label_sets(train, taxonomy), taxonomy.len(), [keep, n - keep, 0], seed);
    Ok(train
        .iter()
        .zip(subsets)
        .filter(|(_, j)| *j == 0)
        .map(|(r, _)| r.clone())
        .collect())
}

/// Share of each finding's mentioning reports that landed in `subset`.
pub fn label_shares(
    dataset: &[AnnotatedReport],
    taxonomy: &TaxonomySpec,
    split: &SplitAssignment,
    subset: Subset,
) -> HashMap<String, f64> {
    taxonomy
        .findings()
        .iter()
        .map(|f| {
            let mentioned: Vec<&AnnotatedReport> =
                dataset.iter().filter(|r| r.code(f).is_some_and(|c| c != -1)).collect();
            let inside = mentioned
                .iter()
                .filter(|r| split.subset_of(r.id()) == Some(subset))
                .count();
            let share = if mentioned.is_empty() {
                0.0
            } else {
                inside as f64 / mentioned.len() as f64
            };
            (f.clone(), share)
        })
        .collect()
}
