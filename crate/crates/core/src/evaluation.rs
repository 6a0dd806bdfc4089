//! Challenge scoring: per-class F1, Macro-F1, accuracy and the confusion
//! matrix.
//!
//! Every one of the eight classes enters the macro average. A class absent
//! from both references and predictions has F1 = 0.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::{EmotionLabel, CLASSES, NUM_CLASSES};

/// Rows are reference classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self) -> [u64; NUM_CLASSES] {
        let mut s = [0; NUM_CLASSES];
        for (i, row) in self.counts.iter().enumerate() {
            s[i] = row.iter().sum();
        }
        s
    }

    /// Each row divided by its support; empty rows stay zero.
    pub fn row_normalized(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (r, row) in self.counts.iter().enumerate() {
            let n: u64 = row.iter().sum();
            if n > 0 {
                for c in 0..NUM_CLASSES {
                    out[r][c] = row[c] as f64 / n as f64;
                }
            }
        }
        out
    }
}

pub fn confusion_matrix(refs: &[EmotionLabel], preds: &[EmotionLabel]) -> Result<ConfusionMatrix> {
    if refs.len() != preds.len() {
        return Err(Error::LengthMismatch(refs.len(), preds.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (r, p)) in refs.iter().zip(preds).enumerate() {
        let (Some(ri), Some(pi)) = (r.index(), p.index()) else {
            return Err(Error::LabelX(format!("position {i}")));
        };
        cm.counts[ri][pi] += 1;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class_f1(cm: &ConfusionMatrix) -> [f64; NUM_CLASSES] {
    let mut out = [0.0; NUM_CLASSES];
    for (c, f1) in out.iter_mut().enumerate() {
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..NUM_CLASSES).map(|r| cm.counts[r][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        *f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }
    out
}

pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    per_class_f1(cm).iter().sum::<f64>() / NUM_CLASSES as f64
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Micro-averaged F1. With one label per sample every false positive is
/// another class's false negative, so this reduces to accuracy.
pub fn micro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    accuracy(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub per_class_f1: [f64; NUM_CLASSES],
    pub macro_f1: f64,
    pub accuracy: f64,
    pub support: [u64; NUM_CLASSES],
}

impl ScoreReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let per_class_f1 = per_class_f1(cm);
        Ok(ScoreReport {
            macro_f1: per_class_f1.iter().sum::<f64>() / NUM_CLASSES as f64,
            per_class_f1,
            accuracy: accuracy(cm)?,
            support: cm.support(),
        })
    }
}

pub fn evaluate(refs: &[EmotionLabel], preds: &[EmotionLabel]) -> Result<(ScoreReport, ConfusionMatrix)> {
    let cm = confusion_matrix(refs, preds)?;
    Ok((ScoreReport::from_confusion(&cm)?, cm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidConfig(format!("unknown report format {s:?}"))),
        }
    }
}

pub fn render_report(report: &ScoreReport, cm: &ConfusionMatrix, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            writeln!(out, "{:<16} {:>8} {:>8}", "Class", "F1", "Support").unwrap();
            for (i, c) in CLASSES.iter().enumerate() {
                let name = format!("{} ({})", c.name(), c.code());
                writeln!(
                    out,
                    "{:<16} {:>8.4} {:>8}",
                    name, report.per_class_f1[i], report.support[i]
                )
                .unwrap();
            }
            writeln!(out, "{:<16} {:>8.4}", "Accuracy", report.accuracy).unwrap();
            writeln!(out, "{:<16} {:>8.4}", "F1-Macro", report.macro_f1).unwrap();
            out.push('\n');
            out.push_str("Confusion matrix (rows: reference, columns: predicted, row-normalized)\n");
            out.push_str("    ");
            for c in CLASSES {
                write!(out, " {:>6}", c.code()).unwrap();
            }
            out.push('\n');
            for (r, row) in cm.row_normalized().iter().enumerate() {
                write!(out, "{:<4}", CLASSES[r].code()).unwrap();
                for v in row {
                    write!(out, " {v:>6.4}").unwrap();
                }
                out.push('\n');
            }
        }
        ReportFormat::Csv => {
            out.push_str("metric,value\n");
            for (i, c) in CLASSES.iter().enumerate() {
                writeln!(out, "F1-{},{:.6}", c.code(), report.per_class_f1[i]).unwrap();
            }
            writeln!(out, "Accuracy,{:.6}", report.accuracy).unwrap();
            writeln!(out, "F1-Macro,{:.6}", report.macro_f1).unwrap();
        }
    }
    out
}

/// Row-normalized confusion matrix as CSV, 4 decimals.
pub fn render_confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("reference");
    for c in CLASSES {
        write!(out, ",{}", c.code()).unwrap();
    }
    out.push('\n');
    for (r, row) in cm.row_normalized().iter().enumerate() {
        out.push(CLASSES[r].code());
        for v in row {
            write!(out, ",{v:.4}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionLabel::*;

    fn fixture() -> ConfusionMatrix {
        confusion_matrix(&[Anger, Anger, Neutral, Neutral], &[Anger, Neutral, Neutral, Neutral]).unwrap()
    }

    #[test]
    fn counting() {
        let cm = fixture();
        assert_eq!(cm.counts[0][0], 1);
        assert_eq!(cm.counts[0][5], 1);
        assert_eq!(cm.counts[5][5], 2);
        assert_eq!(cm.total(), 4);
        assert_eq!(confusion_matrix(&[], &[]).unwrap(), ConfusionMatrix::default());
        let diag = confusion_matrix(&CLASSES, &CLASSES).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(diag.counts[r][c], u64::from(r == c));
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            confusion_matrix(&[Anger], &[]),
            Err(Error::LengthMismatch(1, 0))
        ));
        assert!(matches!(
            confusion_matrix(&[NoConsensus], &[Anger]),
            Err(Error::LabelX(_))
        ));
        assert!(matches!(accuracy(&ConfusionMatrix::default()), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn fixture_scores() {
        let cm = fixture();
        let f1 = per_class_f1(&cm);
        assert!((f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f1[5] - 0.8).abs() < 1e-15);
        assert_eq!(f1[1], 0.0);
        assert!((macro_f1(&cm) - 0.183_333_333_333_333_3).abs() < 1e-15);
        assert_eq!(accuracy(&cm).unwrap(), 0.75);
        assert_eq!(micro_f1(&cm).unwrap(), 0.75);
    }

    #[test]
    fn perfect_and_wrong() {
        let cm = confusion_matrix(&CLASSES, &CLASSES).unwrap();
        assert_eq!(per_class_f1(&cm), [1.0; 8]);
        assert_eq!(macro_f1(&cm), 1.0);
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        let shifted: Vec<_> = (0..8).map(|i| CLASSES[(i + 1) % 8]).collect();
        let cm = confusion_matrix(&CLASSES, &shifted).unwrap();
        assert_eq!(accuracy(&cm).unwrap(), 0.0);
        assert_eq!(macro_f1(&cm), 0.0);
    }

    #[test]
    fn rendering() {
        let cm = fixture();
        let report = ScoreReport::from_confusion(&cm).unwrap();
        let csv = render_report(&report, &cm, ReportFormat::Csv);
        assert!(csv.contains("F1-Macro,0.183333\n"));
        assert!(csv.contains("Accuracy,0.750000\n"));
        assert!(csv.contains("F1-A,0.666667\n"));
        let text = render_report(&report, &cm, ReportFormat::Text);
        assert!(text.contains("Anger (A)"));
        assert!(text.contains("F1-Macro           0.1833"));
        assert_eq!(text, render_report(&report, &cm, ReportFormat::Text));
        let conf = render_confusion_csv(&cm);
        assert!(conf.starts_with("reference,A,C,D,F,H,N,S,U\n"));
        assert!(conf.contains("A,0.5000,0.0000,0.0000,0.0000,0.0000,0.5000,0.0000,0.0000\n"));
        assert!(conf.contains("N,0.0000,0.0000,0.0000,0.0000,0.0000,1.0000,0.0000,0.0000\n"));
    }
}
