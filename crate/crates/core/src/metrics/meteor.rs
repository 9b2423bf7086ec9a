//! METEOR with exact and stemmed unigram matching.
//!
//! There is no synonym stage. Within a stage, each hypothesis token prefers
//! the reference position right after its predecessor's match, which keeps
//! contiguous runs together and the chunk count low.

use serde::{Deserialize, Serialize};

use super::stem::stem;
use crate::corpus::Language;

const ALPHA_WEIGHT: f64 = 9.0;
const PENALTY_GAMMA: f64 = 0.5;
const PENALTY_BETA: i32 = 3;

/// Recorded alongside scores wherever METEOR results are persisted.
pub const METEOR_VARIANT: &str = "meteor: exact + light-stem matching, no synonym stage";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorScore {
    pub score: f64,
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
}

impl MeteorScore {
    fn zero() -> Self {
        MeteorScore {
            score: 0.0,
            matches: 0,
            chunks: 0,
            precision: 0.0,
            recall: 0.0,
            fmean: 0.0,
            penalty: 0.0,
        }
    }
}

/// Lowercases, splits on whitespace and detaches punctuation into its own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn align_stage(hyp: &[String], reference: &[String], hyp_match: &mut [Option<usize>], ref_used: &mut [bool]) {
    for i in 0..hyp.len() {
        if hyp_match[i].is_some() {
            continue;
        }
        let free = |j: usize| !ref_used[j] && reference[j] == hyp[i];
        let follow = i
            .checked_sub(1)
            .and_then(|p| hyp_match[p])
            .map(|j| j + 1)
            .filter(|&j| j < reference.len() && free(j));
        if let Some(j) = follow.or_else(|| (0..reference.len()).find(|&j| free(j))) {
            hyp_match[i] = Some(j);
            ref_used[j] = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Meteor {
    language: Language,
}

impl Default for Meteor {
    fn default() -> Self {
        Meteor::new(Language::English)
    }
}

impl Meteor {
    /// `language` selects the stemmer for the second stage.
    pub fn new(language: Language) -> Self {
        Meteor { language }
    }

    pub fn score(&self, hypothesis: &str, reference: &str) -> MeteorScore {
        let hyp = tokenize(hypothesis);
        let reference = tokenize(reference);
        if hyp.is_empty() || reference.is_empty() {
            return MeteorScore::zero();
        }
        let mut hyp_match = vec![None; hyp.len()];
        let mut ref_used = vec![false; reference.len()];
        align_stage(&hyp, &reference, &mut hyp_match, &mut ref_used);
        let hyp_stems: Vec<String> = hyp.iter().map(|t| stem(t, self.language)).collect();
        let ref_stems: Vec<String> = reference.iter().map(|t| stem(t, self.language)).collect();
        align_stage(&hyp_stems, &ref_stems, &mut hyp_match, &mut ref_used);

        let pairs: Vec<(usize, usize)> = hyp_match
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|j| (i, j)))
            .collect();
        let m = pairs.len();
        if m == 0 {
            return MeteorScore::zero();
        }
        let chunks = 1 + pairs
            .windows(2)
            .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
            .count();
        let precision = m as f64 / hyp.len() as f64;
        let recall = m as f64 / reference.len() as f64;
        let fmean = (1.0 + ALPHA_WEIGHT) * precision * recall / (recall + ALPHA_WEIGHT * precision);
        let penalty = PENALTY_GAMMA * (chunks as f64 / m as f64).powi(PENALTY_BETA);
        MeteorScore {
            score: fmean * (1.0 - penalty),
            matches: m,
            chunks,
            precision,
            recall,
            fmean,
            penalty,
        }
    }
}

/// METEOR score in `[0, 1]` with English stemming.
pub fn meteor(hypothesis: &str, reference: &str) -> f64 {
    Meteor::default().score(hypothesis, reference).score
}
