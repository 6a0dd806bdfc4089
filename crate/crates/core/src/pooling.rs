//! Temporal pooling of a `T x D` feature sequence into a single `D`-vector.

use serde::{Deserialize, Serialize};

use crate::data::FeatureSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingKind {
    Mean,
    Attention,
}

impl std::str::FromStr for PoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PoolingKind::Mean),
            "attention" => Ok(PoolingKind::Attention),
            _ => Err(Error::InvalidConfig(format!("unknown pooling {s:?}"))),
        }
    }
}

/// Learned scoring vector for attention pooling: frame `t` scores `u . x_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub u: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(dim: usize) -> Self {
        AttentionParams { u: vec![0.0; dim] }
    }

    fn check(&self, seq: &FeatureSequence) -> Result<()> {
        if self.u.len() != seq.dim() {
            return Err(Error::DimensionMismatch {
                expected: seq.dim(),
                got: self.u.len(),
            });
        }
        if self.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }
}

pub fn mean_pool(seq: &FeatureSequence) -> Vec<f64> {
    let mut out = vec![0.0; seq.dim()];
    for row in seq.rows() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let t = seq.frames() as f64;
    out.iter_mut().for_each(|o| *o /= t);
    out
}

/// Softmax over frame scores, max-subtracted.
fn frame_weights(seq: &FeatureSequence, u: &[f64]) -> (Vec<f64>, bool) {
    let scores: Vec<f64> = seq
        .rows()
        .map(|row| row.iter().zip(u).map(|(x, w)| x * w).sum())
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let uniform = scores.iter().all(|s| *s == max);
    let mut w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    (w, uniform)
}

/// Attention-weighted average of the frames. Returns the pooled vector and
/// the frame weights.
pub fn attention_pool(seq: &FeatureSequence, params: &AttentionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check(seq)?;
    let (weights, uniform) = frame_weights(seq, &params.u);
    if uniform {
        // equal scores give exactly uniform weights
        return Ok((mean_pool(seq), vec![1.0 / seq.frames() as f64; seq.frames()]));
    }
    let mut pooled = vec![0.0; seq.dim()];
    for (row, w) in seq.rows().zip(&weights) {
        for (p, x) in pooled.iter_mut().zip(row) {
            *p += w * x;
        }
    }
    Ok((pooled, weights))
}

/// Gradients of `upstream . pooled` with respect to the frames (row-major
/// `T x D`) and the scoring vector.
pub fn attention_pool_backward(
    seq: &FeatureSequence,
    params: &AttentionParams,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check(seq)?;
    if upstream.len() != seq.dim() {
        return Err(Error::DimensionMismatch {
            expected: seq.dim(),
            got: upstream.len(),
        });
    }
    let (weights, _) = frame_weights(seq, &params.u);
    // a_t = g . x_t ; dL/ds_t = w_t (a_t - sum_j w_j a_j)
    let a: Vec<f64> = seq
        .rows()
        .map(|row| row.iter().zip(upstream).map(|(x, g)| x * g).sum())
        .collect();
    let mean_a: f64 = weights.iter().zip(&a).map(|(w, a)| w * a).sum();
    let delta: Vec<f64> = weights.iter().zip(&a).map(|(w, a)| w * (a - mean_a)).collect();

    let d = seq.dim();
    let mut grad_seq = vec![0.0; seq.frames() * d];
    let mut grad_u = vec![0.0; d];
    for (t, row) in seq.rows().enumerate() {
        let out = &mut grad_seq[t * d..(t + 1) * d];
        for j in 0..d {
            out[j] = weights[t] * upstream[j] + delta[t] * params.u[j];
            grad_u[j] += delta[t] * row[j];
        }
    }
    Ok((grad_seq, grad_u))
}

/// Pools one sample's streams and concatenates the results.
pub fn pool_streams(streams: &[FeatureSequence], kind: PoolingKind, attention: &[AttentionParams]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, s) in streams.iter().enumerate() {
        match kind {
            PoolingKind::Mean => out.extend(mean_pool(s)),
            PoolingKind::Attention => {
                let p = attention.get(i).ok_or(Error::DimensionMismatch {
                    expected: streams.len(),
                    got: attention.len(),
                })?;
                out.extend(attention_pool(s, p)?.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(rows: &[Vec<f64>]) -> FeatureSequence {
        FeatureSequence::from_rows("s", rows).unwrap()
    }

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureSequence {
        let values = (0..t * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        FeatureSequence::new("r", t, d, values).unwrap()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean_pool(&seq(&[vec![1.0, 2.0], vec![3.0, 4.0]])), vec![2.0, 3.0]);
        assert_eq!(mean_pool(&seq(&[vec![0.3, -7.0]])), vec![0.3, -7.0]);
    }

    #[test]
    fn mean_matches_compensated_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_seq(&mut rng, 1000, 4);
        let pooled = mean_pool(&s);
        for d in 0..4 {
            // Neumaier summation
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for row in s.rows() {
                let x = row[d];
                let t = sum + x;
                comp += if sum.abs() >= x.abs() {
                    (sum - t) + x
                } else {
                    (x - t) + sum
                };
                sum = t;
            }
            assert!((pooled[d] - (sum + comp) / 1000.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_worked_example() {
        // softmax([1, 3]) and the weighted sum, evaluated in extended precision
        let (pooled, w) = attention_pool(
            &seq(&[vec![1.0, 0.0], vec![3.0, 2.0]]),
            &AttentionParams { u: vec![1.0, 0.0] },
        )
        .unwrap();
        assert_relative_eq!(w[0], 0.119_202_922_022_117_56, epsilon = 1e-14);
        assert_relative_eq!(w[1], 0.880_797_077_977_882_4, epsilon = 1e-14);
        assert_relative_eq!(pooled[0], 2.761_594_155_955_765, epsilon = 1e-14);
        assert_relative_eq!(pooled[1], 1.761_594_155_955_764_9, epsilon = 1e-14);
    }

    #[test]
    fn zero_u_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_seq(&mut rng, 9, 3);
        let (p, w) = attention_pool(&s, &AttentionParams::zeros(3)).unwrap();
        assert_eq!(p, mean_pool(&s));
        assert!(w.iter().all(|v| *v == 1.0 / 9.0));
    }

    #[test]
    fn single_frame() {
        let s = seq(&[vec![1.5, -2.0, 0.25]]);
        let params = AttentionParams {
            u: vec![3.0, 1.0, -4.0],
        };
        let (p, w) = attention_pool(&s, &params).unwrap();
        assert_eq!(p, vec![1.5, -2.0, 0.25]);
        assert_eq!(w, vec![1.0]);
        let (gs, gu) = attention_pool_backward(&s, &params, &[0.5, 1.0, -1.0]).unwrap();
        assert_eq!(gu, vec![0.0; 3]);
        assert_eq!(gs, vec![0.5, 1.0, -1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let s = seq(&[vec![1.0, 2.0]]);
        assert!(matches!(
            attention_pool(&s, &AttentionParams::zeros(3)),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(attention_pool_backward(&s, &AttentionParams::zeros(2), &[1.0]).is_err());
    }

    fn fd_check(s: &FeatureSequence, u: &[f64], g: &[f64]) {
        let h = 1e-5;
        let f = |s: &FeatureSequence, u: &[f64]| -> f64 {
            let (p, _) = attention_pool(s, &AttentionParams { u: u.to_vec() }).unwrap();
            p.iter().zip(g).map(|(a, b)| a * b).sum()
        };
        let (gs, gu) = attention_pool_backward(s, &AttentionParams { u: u.to_vec() }, g).unwrap();
        let mut num_u = vec![0.0; u.len()];
        for j in 0..u.len() {
            let mut up = u.to_vec();
            let mut dn = u.to_vec();
            up[j] += h;
            dn[j] -= h;
            num_u[j] = (f(s, &up) - f(s, &dn)) / (2.0 * h);
        }
        let mut num_s = vec![0.0; s.values().len()];
        for k in 0..num_s.len() {
            let mut vu = s.values().to_vec();
            let mut vd = s.values().to_vec();
            vu[k] += h;
            vd[k] -= h;
            let su = FeatureSequence::new("s", s.frames(), s.dim(), vu).unwrap();
            let sd = FeatureSequence::new("s", s.frames(), s.dim(), vd).unwrap();
            num_s[k] = (f(&su, u) - f(&sd, u)) / (2.0 * h);
        }
        let rel = |a: &[f64], b: &[f64]| {
            let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let scale = a.iter().chain(b).map(|x| x.abs()).fold(1e-8, f64::max);
            diff / scale
        };
        assert!(rel(&gu, &num_u) < 1e-6, "grad_u {gu:?} vs {num_u:?}");
        assert!(rel(&gs, &num_s) < 1e-6);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_seq(&mut rng, 7, 5);
        let u: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        fd_check(&s, &u, &g);
        // at u = 0 the score path still contributes to grad_u
        let mut e = vec![0.0; 5];
        e[2] = 1.0;
        fd_check(&s, &[0.0; 5], &e);
    }

    #[test]
    fn pooled_output_ignores_frame_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_seq(&mut rng, 6, 3);
        let mut rows: Vec<Vec<f64>> = s.rows().map(<[f64]>::to_vec).collect();
        rows.reverse();
        let r = seq(&rows);
        let params = AttentionParams {
            u: vec![0.4, -0.3, 1.1],
        };
        let (a, wa) = attention_pool(&s, &params).unwrap();
        let (b, wb) = attention_pool(&r, &params).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in wa.iter().zip(wb.iter().rev()) {
            assert!((x - y).abs() < 1e-15);
        }
        let (ma, mb) = (mean_pool(&s), mean_pool(&r));
        for (x, y) in ma.iter().zip(&mb) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
