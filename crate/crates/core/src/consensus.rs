//! Consensus relabeling from per-annotator votes.
//!
//! Evaluators are scored by how often their votes agree with the original
//! consensus; votes from evaluators scoring below the threshold are
//! dropped, and every sample is re-aggregated by majority vote in a
//! single pass.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::AnnotationRecord;
use crate::error::{Error, Result};
use crate::labels::{EmotionLabel, CLASSES, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// Evaluators scoring strictly below this are discarded.
    pub evaluator_threshold: f64,
    /// Resolve a tie between Neutral and exactly one other label in favour
    /// of the other label.
    pub neutral_drop_tie: bool,
}

impl ConsensusConfig {
    pub fn new(evaluator_threshold: f64, neutral_drop_tie: bool) -> Result<Self> {
        let cfg = ConsensusConfig {
            evaluator_threshold,
            neutral_drop_tie,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.evaluator_threshold) {
            return Err(Error::InvalidConfig(format!(
                "evaluator threshold {} outside [0, 1]",
                self.evaluator_threshold
            )));
        }
        Ok(())
    }
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            evaluator_threshold: 0.5,
            neutral_drop_tie: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Original,
    Recomputed,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Original => "original",
            LabelSource::Recomputed => "recomputed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusResult {
    pub sample_id: String,
    pub label: EmotionLabel,
    pub source: LabelSource,
    /// Surviving votes per label.
    pub vote_histogram: BTreeMap<EmotionLabel, usize>,
}

/// Modal label of a vote multiset.
///
/// Ties resolve to `X`, except a tie between Neutral and exactly one other
/// label when `neutral_drop_tie` is set, which resolves to the other label.
pub fn majority_consensus(votes: &[EmotionLabel], neutral_drop_tie: bool) -> Result<EmotionLabel> {
    if votes.is_empty() {
        return Err(Error::EmptyVotes);
    }
    let mut counts = [0usize; NUM_CLASSES];
    for v in votes {
        let i = v.index().ok_or_else(|| Error::XVote(String::new()))?;
        counts[i] += 1;
    }
    Ok(modal_label(&counts, neutral_drop_tie))
}

fn modal_label(counts: &[usize; NUM_CLASSES], neutral_drop_tie: bool) -> EmotionLabel {
    let max = *counts.iter().max().unwrap();
    if max == 0 {
        return EmotionLabel::NoConsensus;
    }
    let tied: Vec<EmotionLabel> = CLASSES
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c == max)
        .map(|(l, _)| *l)
        .collect();
    match tied.as_slice() {
        [only] => *only,
        [a, b] if neutral_drop_tie && (*a == EmotionLabel::Neutral || *b == EmotionLabel::Neutral) => {
            if *a == EmotionLabel::Neutral {
                *b
            } else {
                *a
            }
        }
        _ => EmotionLabel::NoConsensus,
    }
}

/// Fraction of each annotator's votes that agree with the consensus,
/// counting only samples whose consensus is not `X`. Annotators with no
/// countable votes score 1.
pub fn evaluator_scores(
    annotations: &[AnnotationRecord],
    consensus: &BTreeMap<String, EmotionLabel>,
) -> Result<BTreeMap<String, f64>> {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for a in annotations {
        let c = consensus
            .get(&a.sample_id)
            .ok_or_else(|| Error::MissingConsensus(a.sample_id.clone()))?;
        let entry = tally.entry(&a.annotator_id).or_default();
        if c.is_class() {
            entry.1 += 1;
            if a.vote == *c {
                entry.0 += 1;
            }
        }
    }
    Ok(tally
        .into_iter()
        .map(|(id, (hits, total))| {
            let score = if total == 0 { 1.0 } else { hits as f64 / total as f64 };
            (id.to_string(), score)
        })
        .collect())
}

/// Everything produced by one filter-and-recompute pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusRun {
    pub scores: BTreeMap<String, f64>,
    pub discarded: BTreeSet<String>,
    /// One entry per sample of the original consensus, sorted by id.
    pub results: Vec<ConsensusResult>,
}

pub fn run_consensus(
    annotations: &[AnnotationRecord],
    original: &BTreeMap<String, EmotionLabel>,
    config: &ConsensusConfig,
) -> Result<ConsensusRun> {
    config.validate()?;
    if let Some(a) = annotations.iter().find(|a| !a.vote.is_class()) {
        return Err(Error::XVote(a.sample_id.clone()));
    }
    let scores = evaluator_scores(annotations, original)?;
    let discarded: BTreeSet<String> = scores
        .iter()
        .filter(|(_, &s)| s < config.evaluator_threshold)
        .map(|(id, _)| id.clone())
        .collect();

    let mut surviving: BTreeMap<&str, [usize; NUM_CLASSES]> = BTreeMap::new();
    for a in annotations {
        if discarded.contains(&a.annotator_id) {
            continue;
        }
        let i = a.vote.index().expect("checked above");
        surviving.entry(&a.sample_id).or_insert([0; NUM_CLASSES])[i] += 1;
    }

    let results = original
        .iter()
        .map(|(id, &orig)| {
            let counts = surviving.get(id.as_str()).copied().unwrap_or([0; NUM_CLASSES]);
            let label = modal_label(&counts, config.neutral_drop_tie);
            let vote_histogram = CLASSES
                .iter()
                .zip(counts)
                .filter(|(_, c)| *c > 0)
                .map(|(l, c)| (*l, c))
                .collect();
            ConsensusResult {
                sample_id: id.clone(),
                label,
                source: if label == orig {
                    LabelSource::Original
                } else {
                    LabelSource::Recomputed
                },
                vote_histogram,
            }
        })
        .collect();

    Ok(ConsensusRun {
        scores,
        discarded,
        results,
    })
}

/// Scores evaluators against `original`, drops low scorers, and
/// re-aggregates every sample of `original`. Samples left with no votes
/// are labeled `X`.
pub fn recompute_consensus(
    annotations: &[AnnotationRecord],
    original: &BTreeMap<String, EmotionLabel>,
    config: &ConsensusConfig,
) -> Result<Vec<ConsensusResult>> {
    Ok(run_consensus(annotations, original, config)?.results)
}

/// Samples that had no consensus and received a class label.
pub fn newly_labeled<'a>(
    original: &BTreeMap<String, EmotionLabel>,
    results: &'a [ConsensusResult],
) -> Vec<&'a ConsensusResult> {
    results
        .iter()
        .filter(|r| r.label.is_class() && original.get(&r.sample_id) == Some(&EmotionLabel::NoConsensus))
        .collect()
}

/// Training label set after augmentation: every original class label,
/// plus the newly attributed labels of previously unresolved samples.
/// Changed class labels keep their original value.
pub fn augmented_labels(
    original: &BTreeMap<String, EmotionLabel>,
    results: &[ConsensusResult],
) -> Vec<(String, EmotionLabel)> {
    let fresh: BTreeMap<&str, EmotionLabel> = newly_labeled(original, results)
        .into_iter()
        .map(|r| (r.sample_id.as_str(), r.label))
        .collect();
    original
        .iter()
        .filter_map(|(id, &l)| {
            let label = if l.is_class() { l } else { *fresh.get(id.as_str())? };
            Some((id.clone(), label))
        })
        .collect()
}

/// Per-class count table before and after augmentation, rows ordered by
/// descending `before` count.
pub fn augmentation_report(before: &[usize; NUM_CLASSES], after: &[usize; NUM_CLASSES]) -> String {
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| before[b].cmp(&before[a]).then(a.cmp(&b)));
    let delta = |b: usize, a: usize| a as i64 - b as i64;

    let mut out = String::new();
    let rule = format!("{:-<14}+{:-<12}+{:-<17}+{:-<9}\n", "", "", "", "");
    writeln!(
        out,
        "{:<13} | {:>10} | {:>15} | {:>7}",
        "Emotion Class", "Train", "Train Augmented", "Delta"
    )
    .unwrap();
    out.push_str(&rule);
    for i in order {
        writeln!(
            out,
            "{:<13} | {:>10} | {:>15} | {:>7}",
            CLASSES[i].code(),
            before[i],
            after[i],
            delta(before[i], after[i])
        )
        .unwrap();
    }
    out.push_str(&rule);
    let (tb, ta): (usize, usize) = (before.iter().sum(), after.iter().sum());
    writeln!(out, "{:<13} | {:>10} | {:>15} | {:>7}", "Total", tb, ta, delta(tb, ta)).unwrap();
    out
}
