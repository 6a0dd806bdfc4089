//! CSV formats: annotations, labels, and per-sample predictions.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{AnnotationRecord, PosteriorVector};
use crate::error::{Error, Result};
use crate::labels::{parse_label, EmotionLabel, CLASSES, NUM_CLASSES};

pub const ANNOTATIONS_HEADER: [&str; 3] = ["sample_id", "annotator_id", "label"];
pub const LABELS_HEADER: [&str; 2] = ["sample_id", "label"];
pub const PREDICTIONS_HEADER: [&str; 10] = ["sample_id", "pA", "pC", "pD", "pF", "pH", "pN", "pS", "pU", "pred"];

/// Rows read back from a predictions file are rounded to 6 decimals, so
/// their sums are only accurate to a few 1e-6.
pub const PRINTED_SUM_TOLERANCE: f64 = 1e-5;

fn reader<R: Read>(input: R, expected: &[&str]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers()?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Malformed(format!(
            "header {:?}, expected {:?}",
            headers.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    Ok(rdr)
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn parse_annotations<R: Read>(input: R) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = reader(input, &ANNOTATIONS_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let vote = parse_label(&row[2])?;
        let rec = AnnotationRecord::new(&row[0], &row[1], vote)?;
        if !seen.insert((rec.sample_id.clone(), rec.annotator_id.clone())) {
            return Err(Error::Duplicate(format!(
                "annotation ({}, {})",
                rec.sample_id, rec.annotator_id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    parse_annotations(File::open(path)?)
}

pub fn write_annotations<W: Write>(records: &[AnnotationRecord], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(ANNOTATIONS_HEADER)?;
    for r in records {
        w.write_record([r.sample_id.as_str(), &r.annotator_id, &r.vote.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Labels in file order. Duplicate sample ids are rejected.
pub fn parse_labels<R: Read>(input: R) -> Result<Vec<(String, EmotionLabel)>> {
    let mut rdr = reader(input, &LABELS_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row[0].is_empty() {
            return Err(Error::Malformed("empty sample id in labels".into()));
        }
        if !seen.insert(row[0].to_string()) {
            return Err(Error::Duplicate(format!("label for {}", &row[0])));
        }
        out.push((row[0].to_string(), parse_label(&row[1])?));
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(String, EmotionLabel)>> {
    parse_labels(File::open(path)?)
}

pub fn read_label_map(path: impl AsRef<Path>) -> Result<BTreeMap<String, EmotionLabel>> {
    Ok(read_labels(path)?.into_iter().collect())
}

pub fn write_labels<W: Write>(labels: &[(String, EmotionLabel)], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(LABELS_HEADER)?;
    for (id, l) in labels {
        w.write_record([id.as_str(), &l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sample_id: String,
    pub posterior: PosteriorVector,
    pub label: EmotionLabel,
}

impl Prediction {
    /// Prediction whose label is the posterior argmax.
    pub fn from_posterior(sample_id: impl Into<String>, posterior: PosteriorVector) -> Self {
        Prediction {
            sample_id: sample_id.into(),
            label: posterior.argmax(),
            posterior,
        }
    }
}

pub fn write_predictions<W: Write>(predictions: &[Prediction], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(PREDICTIONS_HEADER)?;
    for p in predictions {
        let mut row = Vec::with_capacity(PREDICTIONS_HEADER.len());
        row.push(p.sample_id.clone());
        row.extend(p.posterior.probs().iter().map(|v| format!("{v:.6}")));
        row.push(p.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads predictions and renormalizes each printed posterior so that it
/// sums to one again.
pub fn parse_predictions<R: Read>(input: R) -> Result<Vec<Prediction>> {
    let mut rdr = reader(input, &PREDICTIONS_HEADER)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let id = row[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Duplicate(format!("prediction for {id}")));
        }
        let mut probs = [0.0; NUM_CLASSES];
        for (i, p) in probs.iter_mut().enumerate() {
            *p = row[i + 1]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidPosterior(id.clone()))?;
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > PRINTED_SUM_TOLERANCE {
            return Err(Error::InvalidPosterior(id));
        }
        probs.iter_mut().for_each(|p| *p /= sum);
        let posterior = PosteriorVector::new(probs).map_err(|_| Error::InvalidPosterior(id.clone()))?;
        let label = parse_label(&row[NUM_CLASSES + 1])?;
        if !label.is_class() {
            return Err(Error::LabelX(id));
        }
        out.push(Prediction {
            sample_id: id,
            posterior,
            label,
        });
    }
    Ok(out)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    parse_predictions(File::open(path)?)
}

/// Per-class counts of a label list; `X` entries are skipped.
pub fn class_counts<'a>(labels: impl IntoIterator<Item = &'a EmotionLabel>) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for l in labels {
        if let Some(i) = l.index() {
            counts[i] += 1;
        }
    }
    counts
}

/// Header names for the probability columns, in canonical order.
pub fn probability_columns() -> impl Iterator<Item = String> {
    CLASSES.iter().map(|c| format!("p{}", c.code()))
}
