//! Two-score rejection model deciding whether a feature vector resembles
//! the labeled training data.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::neural::{train, Dataset, Mlp, ModelRole, OutputActivation, TrainConfig, WeightedBce};

/// True iff `s1 > c` and `s2 > 1 - c`.
pub fn passes_thresholds(scores: [f64; 2], c: f64) -> bool {
    scores[0] > c && scores[1] > 1.0 - c
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectionModel {
    /// Two independent sigmoid scores, both high on familiar inputs.
    pub net: Mlp,
    pub c: f64,
}

impl RejectionModel {
    pub fn new(net: Mlp, c: f64) -> Result<Self> {
        if net.output_dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, actual: net.output_dim() });
        }
        if !(c > 0.0 && c < 0.5) {
            return Err(Error::invalid(format!("rejection threshold must lie in (0, 0.5), got {c}")));
        }
        Ok(Self { net, c })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn scores(&self, x: &[f64]) -> Result<[f64; 2]> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), actual: x.len() });
        }
        let s = self.net.forward(x)?;
        Ok([s[0], s[1]])
    }

    pub fn is_in_distribution(&self, x: &[f64]) -> Result<bool> {
        Ok(passes_thresholds(self.scores(x)?, self.c))
    }

    /// Gate decision for every row of `x`.
    pub fn in_distribution_batch(&self, x: ArrayView2<f64>) -> Result<Vec<bool>> {
        let s = self.net.forward_batch(x)?;
        Ok(s.rows().into_iter().map(|r| passes_thresholds([r[0], r[1]], self.c)).collect())
    }

    pub fn to_text(&self) -> String {
        format!("safenav-rejection 1\nc {}\n{}", self.c, self.net.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line, m: &str| Error::Parse { what: "rejection model", line, message: m.to_string() };
        let mut lines = text.splitn(3, '\n');
        if lines.next() != Some("safenav-rejection 1") {
            return Err(bad(1, "missing `safenav-rejection 1` header"));
        }
        let c = lines
            .next()
            .and_then(|l| l.strip_prefix("c "))
            .ok_or_else(|| bad(2, "expected `c <threshold>`"))?
            .trim()
            .parse::<f64>()
            .map_err(|e| bad(2, &e.to_string()))?;
        let net = Mlp::from_text(lines.next().ok_or_else(|| bad(3, "missing network"))?)?;
        Self::new(net, c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Per-dimension `(min, max)` of a feature set.
pub fn data_bounds(features: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let first = features.first().ok_or_else(|| Error::invalid("no features"))?;
    let mut b: Vec<(f64, f64)> = first.iter().map(|&v| (v, v)).collect();
    for f in features {
        if f.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: b.len(), actual: f.len() });
        }
        for (bi, &v) in b.iter_mut().zip(f) {
            bi.0 = bi.0.min(v);
            bi.1 = bi.1.max(v);
        }
    }
    Ok(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OodConfig {
    pub hidden: Vec<usize>,
    pub c: f64,
    /// Negative-sampling box width relative to the data bounds.
    pub inflation: f64,
    pub negatives_per_positive: f64,
    /// Cross-entropy weight on in-distribution examples.
    pub positive_weight: f64,
    pub train: TrainConfig,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            c: 0.25,
            inflation: 1.5,
            negatives_per_positive: 2.0,
            positive_weight: 4.0,
            train: TrainConfig { epochs: 30, ..TrainConfig::default() },
        }
    }
}

impl OodConfig {
    /// Rejection sizes and threshold per task; the multi-robot task shares
    /// the dynamic row.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Static => Self::default(),
            Task::Dynamic | Task::MultiRobot => Self { hidden: vec![128, 128], c: 0.1, ..Self::default() },
        }
    }
}

/// Trains the rejection scorer to tell data points from uniform samples of
/// the inflated bounding box.
pub fn train_ood(features: &[Vec<f64>], bounds: &[(f64, f64)], cfg: &OodConfig) -> Result<RejectionModel> {
    if features.len() < 500 {
        return Err(Error::invalid(format!("need at least 500 in-distribution samples, got {}", features.len())));
    }
    let dim = bounds.len();
    if let Some(i) = bounds.iter().position(|(lo, hi)| !(hi - lo > 1e-9)) {
        return Err(Error::invalid(format!("bounds have zero width in dimension {i}")));
    }
    if !(cfg.inflation >= 1.0 && cfg.negatives_per_positive > 0.0 && cfg.positive_weight > 0.0) {
        return Err(Error::invalid(format!("bad rejection config {cfg:?}")));
    }
    let n_pos = features.len();
    let n_neg = ((n_pos as f64) * cfg.negatives_per_positive).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x00d);
    let mut inputs = Array2::zeros((n_pos + n_neg, dim));
    let mut targets = Array2::zeros((n_pos + n_neg, 2));
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: f.len() });
        }
        for (j, &v) in f.iter().enumerate() {
            inputs[[i, j]] = v;
        }
        targets[[i, 0]] = 1.0;
        targets[[i, 1]] = 1.0;
    }
    for i in n_pos..n_pos + n_neg {
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo) * cfg.inflation);
            inputs[[i, j]] = rng.random_range(mid - half..mid + half);
        }
    }
    let mut sizes = vec![dim];
    sizes.extend(&cfg.hidden);
    sizes.push(2);
    let mut net = Mlp::new(ModelRole::Rejection, &sizes, OutputActivation::Sigmoid, cfg.train.seed)?;
    net.fit_input_normalization(inputs.slice(ndarray::s![..n_pos, ..]))?;
    let loss = WeightedBce { positive_weight: cfg.positive_weight };
    let (net, _) = train(net, &Dataset::new(inputs, targets)?, &loss, &cfg.train)?;
    RejectionModel::new(net, cfg.c)
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn fixed_scores(s1: f64, s2: f64, c: f64) -> RejectionModel {
        // Zero weights, biases set to the logits of the wanted scores.
        let mut net = Mlp::zeros(ModelRole::Rejection, &[3, 2], OutputActivation::Sigmoid).unwrap();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        net.layers_mut()[0].bias[0] = logit(s1);
        net.layers_mut()[0].bias[1] = logit(s2);
        RejectionModel::new(net, c).unwrap()
    }

    #[test]
    fn literal_predicate() {
        assert!(passes_thresholds([0.3, 0.9], 0.25));
        assert!(!passes_thresholds([0.2, 0.9], 0.25));
        assert!(!passes_thresholds([0.05, 0.96], 0.1));
        assert!(fixed_scores(0.3, 0.9, 0.25).is_in_distribution(&[1.0, 2.0, 3.0]).unwrap());
        assert!(!fixed_scores(0.2, 0.9, 0.25).is_in_distribution(&[0.0; 3]).unwrap());
        assert!(fixed_scores(0.3, 0.9, 0.25).is_in_distribution(&[0.0; 2]).is_err());
    }

    #[test]
    fn decision_flips_exactly_at_each_threshold() {
        let c = 0.25;
        let eps = 1e-9;
        assert!(!passes_thresholds([c, 0.9], c));
        assert!(passes_thresholds([c + eps, 0.9], c));
        assert!(!passes_thresholds([0.5, 1.0 - c], c));
        assert!(passes_thresholds([0.5, 1.0 - c + eps], c));
    }

    #[test]
    fn raising_c_tightens_the_first_score_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let s = [rng.random::<f64>(), rng.random::<f64>()];
            let c1 = rng.random_range(0.01..0.49);
            let c2 = rng.random_range(c1..0.49);
            // With the second score pinned at 1 the rule is monotone in c.
            if passes_thresholds([s[0], 1.0], c2) {
                assert!(passes_thresholds([s[0], 1.0], c1));
            }
        }
        // The second inequality loosens as c grows, so with free scores a
        // larger c can admit a point a smaller one rejected.
        assert!(!passes_thresholds([0.5, 0.85], 0.1));
        assert!(passes_thresholds([0.5, 0.85], 0.25));
    }

    #[test]
    fn normalized_scores_never_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let s1 = rng.random::<f64>();
            let c = rng.random_range(0.01..0.49);
            assert!(!passes_thresholds([s1, 1.0 - s1], c));
        }
    }

    #[test]
    fn threshold_range_enforced() {
        let net = Mlp::zeros(ModelRole::Rejection, &[3, 2], OutputActivation::Sigmoid).unwrap();
        assert!(RejectionModel::new(net.clone(), 0.0).is_err());
        assert!(RejectionModel::new(net.clone(), 0.5).is_err());
        assert!(RejectionModel::new(net, 0.1).is_ok());
    }

    fn blob(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                let a = normal.sample(&mut rng);
                // Correlated 4-d cloud: the box corners are empty.
                vec![a, a + 0.3 * normal.sample(&mut rng), 2.0 + 0.5 * normal.sample(&mut rng), -a]
            })
            .collect()
    }

    #[test]
    fn accepts_held_out_data_and_rejects_far_points() {
        let train_set = blob(3000, 1);
        let held_out = blob(1000, 2);
        let bounds = data_bounds(&train_set).unwrap();
        let cfg = OodConfig { c: 0.1, ..OodConfig::default() };
        let model = train_ood(&train_set, &bounds, &cfg).unwrap();
        let accepted = held_out.iter().filter(|x| model.is_in_distribution(x).unwrap()).count();
        assert!(accepted as f64 >= 0.95 * held_out.len() as f64, "accepted {accepted}");
        for scale in [10.0, -10.0] {
            let far: Vec<f64> = bounds.iter().map(|(lo, hi)| scale * lo.abs().max(hi.abs())).collect();
            assert!(!model.is_in_distribution(&far).unwrap());
        }
        // Decorrelated point inside the box but away from the data.
        assert!(!model.is_in_distribution(&[2.5, 2.5, 2.0, 2.5]).unwrap());

        let batch = crate::neural::stack_rows(&held_out[..50]).unwrap();
        let gate = model.in_distribution_batch(batch.view()).unwrap();
        for (g, x) in gate.iter().zip(&held_out) {
            assert_eq!(*g, model.is_in_distribution(x).unwrap());
        }
        let text = model.to_text();
        assert_eq!(RejectionModel::from_text(&text).unwrap(), model);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let data = blob(600, 3);
        let mut bounds = data_bounds(&data).unwrap();
        bounds[2] = (1.0, 1.0);
        assert!(train_ood(&data, &bounds, &OodConfig::default()).is_err());
        assert!(train_ood(&data[..100], &data_bounds(&data).unwrap(), &OodConfig::default()).is_err());
    }
}
