//! Seeded synthetic data: Gaussian class clusters of feature sequences,
//! simulated annotator votes, and posterior outputs of sub-systems with
//! known confusions.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::consensus::majority_consensus;
use crate::data::{AnnotationRecord, FeatureSequence, PosteriorVector, SampleRecord};
use crate::error::{Error, Result};
use crate::fusion::SubsystemOutput;
use crate::labels::{EmotionLabel, CLASSES, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub per_class_count: usize,
    pub dev_per_class_count: usize,
    pub feature_dim: usize,
    pub streams: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Scale of the class means; frame noise has unit variance.
    pub separation: f64,
    pub annotators: usize,
    pub votes_per_sample: usize,
    /// Probability that a vote is replaced by a uniformly random wrong label.
    pub error_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            per_class_count: 100,
            dev_per_class_count: 25,
            feature_dim: 16,
            streams: 2,
            min_frames: 5,
            max_frames: 20,
            separation: 0.35,
            annotators: 12,
            votes_per_sample: 4,
            error_rate: 0.3,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.per_class_count,
            self.feature_dim,
            self.streams,
            self.min_frames,
            self.annotators,
            self.votes_per_sample,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidConfig("synthetic counts must be positive".into()));
        }
        if self.max_frames < self.min_frames {
            return Err(Error::InvalidConfig("max_frames < min_frames".into()));
        }
        if self.votes_per_sample > self.annotators {
            return Err(Error::InvalidConfig("more votes per sample than annotators".into()));
        }
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(Error::InvalidConfig("error rate outside [0, 1]".into()));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::InvalidConfig(
                "separation must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Labeled with the ground truth.
    pub train: Vec<SampleRecord>,
    pub dev: Vec<SampleRecord>,
    /// Votes on the training samples.
    pub annotations: Vec<AnnotationRecord>,
    /// Majority consensus of the votes with plain ties mapped to `X`.
    pub original_consensus: BTreeMap<String, EmotionLabel>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn make_split(
    prefix: &str,
    per_class: usize,
    means: &[Vec<Vec<f64>>],
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::with_capacity(per_class * NUM_CLASSES);
    for i in 0..per_class * NUM_CLASSES {
        let class = i % NUM_CLASSES;
        let id = format!("{prefix}{i:05}");
        let streams = means[class]
            .iter()
            .map(|mean| {
                let t = rng.gen_range(spec.min_frames..=spec.max_frames);
                let values = (0..t)
                    .flat_map(|_| mean.iter().map(|m| m + gaussian(rng)).collect::<Vec<_>>())
                    .collect();
                FeatureSequence::new(id.clone(), t, spec.feature_dim, values)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(SampleRecord::new(streams, Some(CLASSES[class]))?);
    }
    Ok(out)
}

fn wrong_label(truth: usize, rng: &mut ChaCha8Rng) -> usize {
    let k = rng.gen_range(0..NUM_CLASSES - 1);
    if k >= truth {
        k + 1
    } else {
        k
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // means[class][stream][dim]
    let means: Vec<Vec<Vec<f64>>> = (0..NUM_CLASSES)
        .map(|_| {
            (0..spec.streams)
                .map(|_| {
                    (0..spec.feature_dim)
                        .map(|_| spec.separation * gaussian(&mut rng))
                        .collect()
                })
                .collect()
        })
        .collect();
    let train = make_split("trn", spec.per_class_count, &means, spec, &mut rng)?;
    let dev = make_split("dev", spec.dev_per_class_count, &means, spec, &mut rng)?;

    let mut annotations = Vec::new();
    let mut original_consensus = BTreeMap::new();
    for s in &train {
        let truth = s.label.and_then(EmotionLabel::index).unwrap();
        let mut picked = sample_indices(&mut rng, spec.annotators, spec.votes_per_sample).into_vec();
        picked.sort_unstable();
        let mut votes = Vec::with_capacity(picked.len());
        for a in picked {
            let vote = if rng.gen_bool(spec.error_rate) {
                wrong_label(truth, &mut rng)
            } else {
                truth
            };
            votes.push(CLASSES[vote]);
            annotations.push(AnnotationRecord::new(
                &s.sample_id,
                &format!("ann{a:03}"),
                CLASSES[vote],
            )?);
        }
        original_consensus.insert(s.sample_id.clone(), majority_consensus(&votes, false)?);
    }
    Ok(SyntheticData {
        train,
        dev,
        annotations,
        original_consensus,
    })
}

/// Class pairs confused by the five synthetic sub-systems.
pub const CONFUSED_PAIRS: [(usize, usize); 5] = [(0, 1), (2, 3), (4, 5), (6, 7), (1, 2)];

/// Five sub-systems that are accurate except on one class pair each, where
/// a sample is swapped to its partner with probability `swap_rate`. Outside
/// that pair each system errs with probability `base_error`.
pub fn complementary_subsystems(
    per_class: usize,
    swap_rate: f64,
    base_error: f64,
    seed: u64,
) -> (Vec<(String, EmotionLabel)>, Vec<SubsystemOutput>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<(String, EmotionLabel)> = (0..per_class * NUM_CLASSES)
        .map(|i| (format!("cmp{i:05}"), CLASSES[i % NUM_CLASSES]))
        .collect();
    let outputs = CONFUSED_PAIRS
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let posteriors = truth
                .iter()
                .map(|(id, label)| {
                    let y = label.index().unwrap();
                    let predicted = if (y == a || y == b) && rng.gen_bool(swap_rate) {
                        if y == a {
                            b
                        } else {
                            a
                        }
                    } else if y != a && y != b && rng.gen_bool(base_error) {
                        wrong_label(y, &mut rng)
                    } else {
                        y
                    };
                    let mass = rng.gen_range(0.55..0.9);
                    let mut rest: Vec<f64> = (0..NUM_CLASSES - 1).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let z: f64 = rest.iter().sum();
                    rest.iter_mut().for_each(|r| *r *= (1.0 - mass) / z);
                    let mut probs = [0.0; NUM_CLASSES];
                    let mut it = rest.into_iter();
                    for (i, p) in probs.iter_mut().enumerate() {
                        *p = if i == predicted { mass } else { it.next().unwrap() };
                    }
                    let sum: f64 = probs.iter().sum();
                    probs.iter_mut().for_each(|p| *p /= sum);
                    (id.clone(), PosteriorVector::new(probs).expect("normalized"))
                })
                .collect();
            SubsystemOutput {
                name: format!("sub{}", (b'A' + k as u8) as char),
                posteriors,
            }
        })
        .collect();
    (truth, outputs)
}
