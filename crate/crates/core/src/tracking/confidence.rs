//! Tracking confidence from cost-volume statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::bce;
use crate::features::layers::leaky;
use crate::features::{adam_step, AdamConfig, AdamState, NamedTensor, ParamSet};

const SLOPE: f64 = 0.125;

/// `L_d` above this marks an estimate unreliable.
pub const LABEL_THRESHOLD: f64 = 5.0;

/// Training label: 1 (reliable) when `l_d <= 5`, else 0.
pub fn reliability_label(l_d: f64) -> f64 {
    if l_d > LABEL_THRESHOLD {
        0.0
    } else {
        1.0
    }
}

/// Standardize, one leaky hidden layer, logistic output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceHead {
    pub inputs: usize,
    pub hidden: usize,
    pub params: ParamSet,
}

impl ConfidenceHead {
    /// Zero weights: every input scores exactly 0.5.
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        let mut params = ParamSet::new();
        params.push("norm.mean", &[inputs], vec![0.0; inputs]);
        params.push("norm.scale", &[inputs], vec![1.0; inputs]);
        params.push("fc1.w", &[hidden, inputs], vec![0.0; hidden * inputs]);
        params.push("fc1.b", &[hidden], vec![0.0; hidden]);
        params.push("fc2.w", &[1, hidden], vec![0.0; hidden]);
        params.push("fc2.b", &[1], vec![0.0]);
        ConfidenceHead {
            inputs,
            hidden,
            params,
        }
    }

    pub fn random(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut h = Self::zeros(inputs, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = (6.0 / inputs as f64).sqrt();
        for v in h.params.get_mut("fc1.w") {
            *v = rng.gen_range(-b1..b1);
        }
        let b2 = (6.0 / hidden as f64).sqrt();
        for v in h.params.get_mut("fc2.w") {
            *v = rng.gen_range(-b2..b2);
        }
        h
    }

    pub fn to_named(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut t = vec![NamedTensor {
            name: format!("{prefix}topology"),
            dims: vec![2],
            data: vec![self.inputs as f32, self.hidden as f32],
        }];
        t.extend(self.params.to_named(prefix));
        t
    }

    pub fn from_named(prefix: &str, tensors: &[NamedTensor]) -> Result<Self> {
        let topo = NamedTensor::find(tensors, &format!("{prefix}topology"))
            .filter(|t| t.dims == [2] && t.data.iter().all(|v| *v >= 1.0 && v.fract() == 0.0))
            .ok_or_else(|| Error::WeightTopologyMismatch(format!("missing {prefix}topology")))?;
        let mut h = Self::zeros(topo.data[0] as usize, topo.data[1] as usize);
        h.params.load_named(prefix, tensors)?;
        Ok(h)
    }

    fn check(&self, stats: &[f64]) -> Result<()> {
        if stats.len() != self.inputs {
            return Err(Error::ShapeMismatch(format!(
                "confidence head expects {} statistics, got {}",
                self.inputs,
                stats.len()
            )));
        }
        Ok(())
    }

    /// Logit with an optional multiplicative mask on the hidden units.
    fn logit(&self, stats: &[f64], drop: Option<&[f64]>, hidden_pre: &mut [f64]) -> f64 {
        let mean = self.params.get("norm.mean");
        let scale = self.params.get("norm.scale");
        let w1 = self.params.get("fc1.w");
        let b1 = self.params.get("fc1.b");
        let w2 = self.params.get("fc2.w");
        let mut z = self.params.get("fc2.b")[0];
        for j in 0..self.hidden {
            let mut a = b1[j];
            for i in 0..self.inputs {
                a += w1[j * self.inputs + i] * (stats[i] - mean[i]) * scale[i];
            }
            hidden_pre[j] = a;
            let keep = drop.map_or(1.0, |d| d[j]);
            z += w2[j] * leaky(a, SLOPE) * keep;
        }
        z
    }

    /// Reliability in `[0, 1]`.
    pub fn score(&self, stats: &[f64]) -> Result<f64> {
        self.check(stats)?;
        let mut pre = vec![0.0; self.hidden];
        let z = self.logit(stats, None, &mut pre);
        Ok(1.0 / (1.0 + (-z).exp()))
    }
}

/// Alias matching the operation name used by the tracker.
pub fn confidence_score(stats: &[f64], head: &ConfidenceHead) -> Result<f64> {
    head.score(stats)
}

/// Confidence training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfidenceTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub dropout: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ConfidenceTrainConfig {
    fn default() -> Self {
        ConfidenceTrainConfig {
            hidden: 16,
            epochs: 300,
            batch: 32,
            dropout: 0.5,
            adam: AdamConfig {
                lr: 1e-2,
                decay_every: 100,
                decay_factor: 0.3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// Trains a fresh head with cross-entropy and inverted dropout on the
/// hidden layer. Input standardization is fitted on the data.
pub fn train_confidence(
    data: &[(Vec<f64>, f64)],
    cfg: &ConfidenceTrainConfig,
) -> Result<ConfidenceHead> {
    let Some(first) = data.first() else {
        return Err(Error::DegenerateDataset("no samples".into()));
    };
    let dim = first.0.len();
    let positives = data.iter().filter(|(_, l)| *l >= 0.5).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::DegenerateDataset(format!(
            "{} samples, all of one class",
            data.len()
        )));
    }
    let mut head = ConfidenceHead::random(dim, cfg.hidden, cfg.seed);
    for (s, _) in data {
        head.check(s)?;
    }
    let n = data.len() as f64;
    for i in 0..dim {
        let m = data.iter().map(|(s, _)| s[i]).sum::<f64>() / n;
        let var = data.iter().map(|(s, _)| (s[i] - m).powi(2)).sum::<f64>() / n;
        head.params.get_mut("norm.mean")[i] = m;
        head.params.get_mut("norm.scale")[i] = 1.0 / (var.sqrt() + 1e-6);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0f1);
    let mut state = AdamState::new(head.params.len(), &cfg.adam);
    let r_w1 = head.params.range("fc1.w");
    let r_b1 = head.params.range("fc1.b");
    let r_w2 = head.params.range("fc2.w");
    let r_b2 = head.params.range("fc2.b");
    let keep_p = 1.0 - cfg.dropout;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut pre = vec![0.0; cfg.hidden];
    let mut drop = vec![1.0; cfg.hidden];
    let mut xs = vec![0.0; dim];
    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let lr = cfg.adam.lr_at(epoch);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let mut grad = vec![0.0; head.params.len()];
            for &si in chunk {
                let (stats, label) = &data[si];
                for d in drop.iter_mut() {
                    *d = if rng.gen::<f64>() < keep_p { 1.0 / keep_p } else { 0.0 };
                }
                let z = head.logit(stats, Some(&drop), &mut pre);
                let p = 1.0 / (1.0 + (-z).exp());
                let dz = (p - label) / chunk.len() as f64;
                let mean = head.params.get("norm.mean");
                let scale = head.params.get("norm.scale");
                for i in 0..dim {
                    xs[i] = (stats[i] - mean[i]) * scale[i];
                }
                let w2 = head.params.get("fc2.w");
                grad[r_b2.start] += dz;
                for j in 0..cfg.hidden {
                    if drop[j] == 0.0 {
                        continue;
                    }
                    grad[r_w2.start + j] += dz * leaky(pre[j], SLOPE) * drop[j];
                    let dh = dz * w2[j] * drop[j] * if pre[j] > 0.0 { 1.0 } else { SLOPE };
                    grad[r_b1.start + j] += dh;
                    for i in 0..dim {
                        grad[r_w1.start + j * dim + i] += dh * xs[i];
                    }
                }
            }
            // normalization statistics are fixed
            let fixed = head.params.range("norm.mean").start..head.params.range("norm.scale").end;
            grad[fixed].fill(0.0);
            adam_step(head.params.data_mut(), &grad, &mut state, lr)?;
        }
    }
    Ok(head)
}

/// Mean cross-entropy of a head on a labelled set.
pub fn confidence_loss(head: &ConfidenceHead, data: &[(Vec<f64>, f64)]) -> Result<f64> {
    let mut s = 0.0;
    for (x, l) in data {
        s += bce(head.score(x)?, *l);
    }
    Ok(s / data.len().max(1) as f64)
}

/// Area under the ROC curve of `scores` for binary `labels` (ties count
/// one half).
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l >= 0.5).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l < 0.5).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return f64::NAN;
    }
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_is_half() {
        let h = ConfidenceHead::zeros(15, 8);
        assert_eq!(h.score(&[3.0; 15]).unwrap(), 0.5);
        assert!(matches!(h.score(&[0.0; 14]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn labels_follow_threshold() {
        assert_eq!(reliability_label(6.0), 0.0);
        assert_eq!(reliability_label(4.0), 1.0);
        assert_eq!(reliability_label(5.0), 1.0);
        assert!(bce(1.0, 1.0) < 1e-6);
    }

    #[test]
    fn separable_toy_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<(Vec<f64>, f64)> = (0..400)
            .map(|_| {
                let x: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let margin = x[2] - 0.5 * x[7] + 0.3;
                let x = if margin.abs() < 0.1 {
                    let mut x = x;
                    x[2] += 0.2 * margin.signum();
                    x
                } else {
                    x
                };
                let l = if x[2] - 0.5 * x[7] + 0.3 > 0.0 { 1.0 } else { 0.0 };
                (x, l)
            })
            .collect();
        let head = train_confidence(&data, &ConfidenceTrainConfig::default()).unwrap();
        let correct = data
            .iter()
            .filter(|(x, l)| (head.score(x).unwrap() >= 0.5) == (*l >= 0.5))
            .count();
        assert!(correct as f64 / data.len() as f64 > 0.99, "{correct}");
        let scores: Vec<f64> = data.iter().map(|(x, _)| head.score(x).unwrap()).collect();
        let labels: Vec<f64> = data.iter().map(|(_, l)| *l).collect();
        assert!(roc_auc(&scores, &labels) > 0.99);
    }

    #[test]
    fn single_class_rejected() {
        let data = vec![(vec![0.0; 3], 1.0); 5];
        assert!(matches!(
            train_confidence(&data, &ConfidenceTrainConfig::default()),
            Err(Error::DegenerateDataset(_))
        ));
    }

    #[test]
    fn named_roundtrip_and_auc() {
        let h = ConfidenceHead::random(15, 8, 1);
        let back = ConfidenceHead::from_named("confidence.", &h.to_named("confidence.")).unwrap();
        let x = [0.3; 15];
        assert!((back.score(&x).unwrap() - h.score(&x).unwrap()).abs() < 1e-5);
        assert_eq!(roc_auc(&[0.1, 0.9, 0.5], &[0.0, 1.0, 1.0]), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[0.0, 1.0]), 0.5);
    }
}
