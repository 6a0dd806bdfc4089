//! Score-level fusion: sub-system posteriors are concatenated into one
//! vector per sample and classified by a one-vs-rest linear SVM.
//!
//! Each binary problem minimizes
//!
//! ```text
//! (1/n) sum_i max(0, 1 - y_i (w . x_i + b)) + 1/(2 C n) |w|^2
//! ```
//!
//! by deterministic full-batch sub-gradient descent on standardized inputs,
//! keeping the iterate with the lowest objective.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, PosteriorVector, POSTERIOR_SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::labels::{EmotionLabel, LabelSet, NUM_CLASSES};
use crate::losses::softmax;
use crate::tables::Prediction;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionVector {
    pub sample_id: String,
    pub values: Vec<f64>,
    pub source_order: Vec<String>,
}

/// Posteriors of one sub-system, keyed by its name.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemOutput {
    pub name: String,
    pub posteriors: Vec<(String, PosteriorVector)>,
}

impl SubsystemOutput {
    pub fn from_predictions(name: impl Into<String>, predictions: &[Prediction]) -> Self {
        SubsystemOutput {
            name: name.into(),
            posteriors: predictions.iter().map(|p| (p.sample_id.clone(), p.posterior)).collect(),
        }
    }
}

/// Concatenates sub-system posteriors in the given order. Output is sorted
/// by sample id; every sub-system must cover the same ids.
pub fn build_fusion_vectors(outputs: &[SubsystemOutput]) -> Result<Vec<FusionVector>> {
    if outputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut maps: Vec<BTreeMap<&str, &PosteriorVector>> = Vec::with_capacity(outputs.len());
    for o in outputs {
        let mut m = BTreeMap::new();
        for (id, p) in &o.posteriors {
            let sum: f64 = p.probs().iter().sum();
            if (sum - 1.0).abs() > POSTERIOR_SUM_TOLERANCE || p.probs().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidPosterior(id.clone()));
            }
            if m.insert(id.as_str(), p).is_some() {
                return Err(Error::Duplicate(format!("{id} in {}", o.name)));
            }
        }
        maps.push(m);
    }
    let ids: BTreeSet<&str> = maps.iter().flat_map(|m| m.keys().copied()).collect();
    let source_order: Vec<String> = outputs.iter().map(|o| o.name.clone()).collect();
    ids.into_iter()
        .map(|id| {
            let mut values = Vec::with_capacity(outputs.len() * NUM_CLASSES);
            for m in &maps {
                let p = m.get(id).ok_or_else(|| Error::SampleMismatch(id.to_string()))?;
                values.extend_from_slice(p.probs());
            }
            Ok(FusionVector {
                sample_id: id.to_string(),
                values,
                source_order: source_order.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub iterations: usize,
    /// Recorded in the model; full-batch descent from a zero start does
    /// not consume randomness.
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            iterations: 2000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmFusionModel {
    pub label_set: LabelSet,
    pub source_order: Vec<String>,
    pub config: SvmConfig,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// One weight vector per class, canonical order.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl SvmFusionModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.label_set.validate()?;
        let d = self.dim();
        if self.scale.len() != d || self.weights.len() != NUM_CLASSES || self.bias.len() != NUM_CLASSES {
            return Err(Error::Malformed("svm model shape".into()));
        }
        if self.weights.iter().any(|w| w.len() != d) {
            return Err(Error::Malformed("svm weight length".into()));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Malformed("standardization scale must be positive".into()));
        }
        Ok(())
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Decision value of every class for a raw (unstandardized) vector.
    pub fn decision_scores(&self, x: &[f64]) -> Result<[f64; NUM_CLASSES]> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let z = self.standardize(x);
        let mut scores = [0.0; NUM_CLASSES];
        for (c, s) in scores.iter_mut().enumerate() {
            *s = dot(&self.weights[c], &z) + self.bias[c];
        }
        Ok(scores)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SvmFusionModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hinge objective of one binary problem.
pub fn hinge_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], c: f64) -> f64 {
    let n = xs.len() as f64;
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum();
    hinge / n + dot(w, w) / (2.0 * c * n)
}

fn train_binary(xs: &[Vec<f64>], ys: &[f64], c: f64, iterations: usize) -> (Vec<f64>, f64) {
    let n = xs.len();
    let d = xs[0].len();
    let lambda = 1.0 / (c * n as f64);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = (w.clone(), b, f64::INFINITY);
    let mut gw = vec![0.0; d];
    for t in 1..=iterations + 1 {
        gw.iter_mut().zip(&w).for_each(|(g, wi)| *g = lambda * wi);
        let mut gb = 0.0;
        let mut hinge = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let margin = y * (dot(&w, x) + b);
            if margin < 1.0 {
                hinge += 1.0 - margin;
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g -= y * xi / n as f64;
                }
                gb -= y / n as f64;
            }
        }
        let objective = hinge / n as f64 + 0.5 * lambda * dot(&w, &w);
        if objective < best.2 {
            best = (w.clone(), b, objective);
        }
        if t > iterations {
            break;
        }
        let step = 1.0 / (t as f64).sqrt();
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= step * g);
        b -= step * gb;
    }
    (best.0, best.1)
}

pub fn train_svm(vectors: &[FusionVector], labels: &[EmotionLabel], config: &SvmConfig) -> Result<SvmFusionModel> {
    if !(config.c.is_finite() && config.c > 0.0) {
        return Err(Error::InvalidConfig(format!("C = {} must be positive", config.c)));
    }
    if vectors.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if vectors.len() != labels.len() {
        return Err(Error::LengthMismatch(labels.len(), vectors.len()));
    }
    let targets: Vec<usize> = vectors
        .iter()
        .zip(labels)
        .map(|(v, l)| l.index().ok_or_else(|| Error::LabelX(v.sample_id.clone())))
        .collect::<Result<_>>()?;
    if targets.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::DegenerateLabels);
    }
    let d = vectors[0].values.len();
    let source_order = vectors[0].source_order.clone();
    for v in vectors {
        if v.values.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.values.len(),
            });
        }
        if v.source_order != source_order {
            return Err(Error::Malformed(format!("{}: inconsistent source order", v.sample_id)));
        }
    }

    let n = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        mean.iter_mut().zip(&v.values).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0; d];
    for v in vectors {
        scale
            .iter_mut()
            .zip(&v.values)
            .zip(&mean)
            .for_each(|((s, x), m)| *s += (x - m) * (x - m));
    }
    scale.iter_mut().for_each(|s| {
        let sd = (*s / n).sqrt();
        *s = if sd > 1e-12 { sd } else { 1.0 };
    });
    let xs: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            v.values
                .iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((x, m), s)| (x - m) / s)
                .collect()
        })
        .collect();

    let fitted: Vec<(Vec<f64>, f64)> = (0..NUM_CLASSES)
        .into_par_iter()
        .map(|c| {
            let ys: Vec<f64> = targets.iter().map(|&t| if t == c { 1.0 } else { -1.0 }).collect();
            train_binary(&xs, &ys, config.c, config.iterations)
        })
        .collect();
    let (weights, bias) = fitted.into_iter().unzip();
    Ok(SvmFusionModel {
        label_set: LabelSet::canonical(),
        source_order,
        config: *config,
        mean,
        scale,
        weights,
        bias,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmPrediction {
    pub sample_id: String,
    pub label: EmotionLabel,
    pub scores: [f64; NUM_CLASSES],
}

impl SvmPrediction {
    /// Predictions-file row: softmax of the decision scores in the
    /// probability columns, the SVM decision in `pred`.
    pub fn to_prediction(&self) -> Result<Prediction> {
        let p = softmax(&self.scores)?;
        Ok(Prediction {
            sample_id: self.sample_id.clone(),
            posterior: PosteriorVector::new(p.try_into().unwrap())?,
            label: self.label,
        })
    }
}

/// Argmax of the decision scores; ties go to the lowest canonical index.
pub fn svm_predict(model: &SvmFusionModel, vectors: &[FusionVector]) -> Result<Vec<SvmPrediction>> {
    vectors
        .iter()
        .map(|v| {
            let scores = model.decision_scores(&v.values)?;
            Ok(SvmPrediction {
                sample_id: v.sample_id.clone(),
                label: EmotionLabel::from_index(argmax(&scores)).unwrap(),
                scores,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::CLASSES;
    use EmotionLabel::*;

    fn onehot(i: usize, mass: f64) -> PosteriorVector {
        let mut p = [(1.0 - mass) / 7.0; 8];
        p[i] = mass;
        PosteriorVector::new(p).unwrap()
    }

    fn output(name: &str, rows: &[(&str, PosteriorVector)]) -> SubsystemOutput {
        SubsystemOutput {
            name: name.into(),
            posteriors: rows.iter().map(|(id, p)| (id.to_string(), *p)).collect(),
        }
    }

    fn raw(id: &str, values: Vec<f64>) -> FusionVector {
        FusionVector {
            sample_id: id.into(),
            values,
            source_order: vec!["raw".into()],
        }
    }

    #[test]
    fn concatenation() {
        let a = output("a", &[("s2", onehot(1, 0.9)), ("s1", onehot(0, 0.9))]);
        let b = output("b", &[("s1", onehot(5, 0.6)), ("s2", onehot(2, 0.6))]);
        let v = build_fusion_vectors(&[a.clone(), b]).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].sample_id, "s1");
        assert_eq!(v[0].values.len(), 16);
        assert_eq!(v[0].values[0], 0.9);
        assert_eq!(v[0].values[8 + 5], 0.6);
        assert_eq!(v[0].source_order, vec!["a", "b"]);

        let single = build_fusion_vectors(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single[1].values, onehot(1, 0.9).probs().to_vec());

        let five: Vec<_> = (0..5)
            .map(|i| output(&i.to_string(), &[("s", onehot(i, 0.5))]))
            .collect();
        assert_eq!(build_fusion_vectors(&five).unwrap()[0].values.len(), 40);

        let disjoint = output("c", &[("zz", onehot(0, 1.0)), ("yy", onehot(0, 1.0))]);
        assert!(matches!(
            build_fusion_vectors(&[a, disjoint]),
            Err(Error::SampleMismatch(_))
        ));
    }

    #[test]
    fn separable_two_class() {
        let mut vs = Vec::new();
        let mut ls = Vec::new();
        for i in 0..20 {
            let t = i as f64 / 20.0;
            // x + y > 1 is class H, below is class S
            vs.push(raw(&format!("h{i}"), vec![0.8 + t, 0.6 - 0.3 * t]));
            ls.push(Happiness);
            vs.push(raw(&format!("s{i}"), vec![0.2 * t, 0.5 - 0.4 * t]));
            ls.push(Sadness);
        }
        let model = train_svm(&vs, &ls, &SvmConfig::default()).unwrap();
        let preds = svm_predict(&model, &vs).unwrap();
        for (p, l) in preds.iter().zip(&ls) {
            assert_eq!(p.label, *l);
        }
    }

    #[test]
    fn identical_points_pick_majority() {
        let vs: Vec<_> = (0..10).map(|i| raw(&i.to_string(), vec![0.3, 0.7])).collect();
        let mut ls = vec![Neutral; 6];
        ls.extend([Anger, Anger, Sadness, Fear]);
        let model = train_svm(&vs, &ls, &SvmConfig::default()).unwrap();
        let preds = svm_predict(&model, &vs).unwrap();
        assert!(preds.iter().all(|p| p.label == Neutral));

        // exhaustive grid over the bias: with w fixed at zero the hinge term
        // alone is minimized at b = +1 for the majority class and b = -1
        // for every minority class
        for (c, count) in [(Neutral, 6usize), (Anger, 2), (Sadness, 1), (Fear, 1)] {
            let ys: Vec<f64> = (0..10).map(|i| if i < count { 1.0 } else { -1.0 }).collect();
            let xs = vec![vec![0.0]; 10];
            let (mut best_b, mut best) = (0.0, f64::INFINITY);
            for k in -300..=300 {
                let b = k as f64 / 100.0;
                let obj = hinge_objective(&[0.0], b, &xs, &ys, 1.0);
                if obj < best - 1e-12 {
                    best = obj;
                    best_b = b;
                }
            }
            let ci = c.index().unwrap();
            assert!(
                (model.bias[ci] - best_b).abs() < 0.1,
                "{c}: {} vs grid {best_b}",
                model.bias[ci]
            );
        }
    }

    #[test]
    fn zero_model_predicts_first_class() {
        let model = SvmFusionModel {
            label_set: LabelSet::canonical(),
            source_order: vec!["a".into()],
            config: SvmConfig::default(),
            mean: vec![0.0; 8],
            scale: vec![1.0; 8],
            weights: vec![vec![0.0; 8]; 8],
            bias: vec![0.0; 8],
        };
        let v = raw("s", onehot(6, 0.9).probs().to_vec());
        assert_eq!(svm_predict(&model, std::slice::from_ref(&v)).unwrap()[0].label, Anger);

        let mut wa = model.clone();
        wa.weights[0][0] = 10.0;
        let high_a = raw("a", onehot(0, 0.9).probs().to_vec());
        assert_eq!(svm_predict(&wa, &[high_a]).unwrap()[0].label, Anger);
        assert!(matches!(
            svm_predict(&model, &[raw("bad", vec![0.0; 3])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_degenerate_labels() {
        let vs: Vec<_> = (0..4).map(|i| raw(&i.to_string(), vec![i as f64])).collect();
        assert!(matches!(
            train_svm(&vs, &[Anger; 4], &SvmConfig::default()),
            Err(Error::DegenerateLabels)
        ));
        assert!(matches!(
            train_svm(&vs, &[Anger, Anger, Fear, NoConsensus], &SvmConfig::default()),
            Err(Error::LabelX(_))
        ));
    }

    #[test]
    fn json_round_trip_and_determinism() {
        let vs: Vec<_> = CLASSES
            .iter()
            .enumerate()
            .flat_map(|(i, _)| {
                (0..3).map(move |j| raw(&format!("{i}-{j}"), onehot(i, 0.5 + 0.1 * j as f64).probs().to_vec()))
            })
            .collect();
        let ls: Vec<_> = CLASSES.iter().flat_map(|c| [*c; 3]).collect();
        let cfg = SvmConfig {
            iterations: 200,
            ..SvmConfig::default()
        };
        let a = train_svm(&vs, &ls, &cfg).unwrap();
        let b = train_svm(&vs, &ls, &cfg).unwrap();
        let text = a.to_json().unwrap();
        assert_eq!(text, b.to_json().unwrap());
        let back = SvmFusionModel::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        let acc = svm_predict(&back, &vs)
            .unwrap()
            .iter()
            .zip(&ls)
            .filter(|(p, l)| p.label == **l)
            .count();
        assert_eq!(acc, vs.len());
    }

    #[test]
    fn affine_rescaling_leaves_labels() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut vs = Vec::new();
        let mut ls = Vec::new();
        for i in 0..120 {
            let c = i % 4;
            let mut x: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            x[c] += 1.5;
            vs.push(raw(&i.to_string(), x));
            ls.push(CLASSES[c]);
        }
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(0.2..5.0)).collect();
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let scaled: Vec<_> = vs
            .iter()
            .map(|v| {
                raw(
                    &v.sample_id,
                    v.values.iter().enumerate().map(|(d, x)| a[d] * x + c[d]).collect(),
                )
            })
            .collect();
        let cfg = SvmConfig {
            iterations: 300,
            ..SvmConfig::default()
        };
        let a = svm_predict(&train_svm(&vs, &ls, &cfg).unwrap(), &vs).unwrap();
        let b = svm_predict(&train_svm(&scaled, &ls, &cfg).unwrap(), &scaled).unwrap();
        let la: Vec<_> = a.iter().map(|p| p.label).collect();
        let lb: Vec<_> = b.iter().map(|p| p.label).collect();
        assert_eq!(la, lb);
    }
}
