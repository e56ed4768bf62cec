use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::Loss;
use super::mlp::Mlp;
use super::optim::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Supervised pairs, one example per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::invalid(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
        }
    }
}

/// Packs equal-length rows into a `(rows, width)` array.
pub fn stack_rows(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((rows.len(), width));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::DimensionMismatch { expected: width, actual: r.len() });
        }
        for (j, &v) in r.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

/// Seeded mini-batch training. Returns the trained model and the mean batch
/// loss of every epoch.
pub fn train(
    mut model: Mlp,
    data: &Dataset,
    loss: &dyn Loss,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let trace = model.forward_trace(batch.inputs.view())?;
            let eval = loss.evaluate(trace.output.view(), batch.targets.view());
            if !eval.value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: eval.value,
                });
            }
            let grads = model.backward(&trace, eval.grad.view());
            opt.step(&mut model, &grads);
            total += eval.value;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok((model, curve))
}

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientCheck {
    Checked { max_relative_error: f64 },
    /// The loss is not differentiable at the evaluated point.
    Skipped,
}

const FD_STEP: f64 = 1e-5;
const ABS_FALLBACK: f64 = 1e-7;
/// Hidden pre-activations this close to the ReLU kink make the finite
/// difference straddle a non-differentiable point.
const KINK_MARGIN: f64 = 1e-4;

/// Max relative error between backprop and central finite differences over
/// every parameter. Points at a kink of the loss or of a hidden ReLU are
/// reported as skipped. Pairs where both gradients are below `1e-7` in
/// magnitude are compared by absolute difference.
pub fn gradient_check(
    model: &Mlp,
    input: ArrayView2<f64>,
    target: ArrayView2<f64>,
    loss: &dyn Loss,
) -> Result<GradientCheck> {
    let trace = model.forward_trace(input)?;
    let eval = loss.evaluate(trace.output.view(), target);
    if !eval.smooth || trace.min_hidden_magnitude() < KINK_MARGIN {
        return Ok(GradientCheck::Skipped);
    }
    let analytic = model.backward(&trace, eval.grad.view()).flatten();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.param(i);
        probe.set_param(i, orig + FD_STEP);
        let up = loss.evaluate(probe.forward_batch(input)?.view(), target).value;
        probe.set_param(i, orig - FD_STEP);
        let down = loss.evaluate(probe.forward_batch(input)?.view(), target).value;
        probe.set_param(i, orig);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let scale = a.abs().max(numeric.abs());
        let err = if scale < ABS_FALLBACK {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    Ok(GradientCheck::Checked {
        max_relative_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};
    use rand::Rng;

    use super::*;
    use crate::neural::{MeanSquaredError, ModelRole, OutputActivation, SignHinge, WeightedBce};

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn gradient_check_mse_random_nets() {
        let mut checked = 0;
        for seed in 0..10 {
            let m = Mlp::new(ModelRole::Generic, &[3, 5, 4, 2], OutputActivation::Tanh, seed).unwrap();
            let x = random_batch(4, 3, seed + 100);
            let t = random_batch(4, 2, seed + 200);
            if let GradientCheck::Checked { max_relative_error } =
                gradient_check(&m, x.view(), t.view(), &MeanSquaredError).unwrap()
            {
                assert!(max_relative_error < 1e-4, "{max_relative_error}");
                checked += 1;
            }
        }
        assert!(checked >= 5);
    }

    #[test]
    fn gradient_check_softmax_and_sigmoid_bce() {
        for (i, act) in [OutputActivation::Softmax, OutputActivation::Sigmoid].into_iter().enumerate() {
            let m = Mlp::new(ModelRole::Rejection, &[4, 6, 2], act, 7 + i as u64).unwrap();
            let x = random_batch(5, 4, 1);
            let t = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 0.0]];
            let loss = WeightedBce { positive_weight: 3.0 };
            let GradientCheck::Checked { max_relative_error } =
                gradient_check(&m, x.view(), t.view(), &loss).unwrap()
            else {
                panic!("skipped")
            };
            assert!(max_relative_error < 1e-4, "{act:?}: {max_relative_error}");
        }
    }

    #[test]
    fn gradient_check_zero_gradient_uses_absolute_fallback() {
        // Last layer zeroed: every hidden-layer gradient vanishes exactly.
        let mut m = Mlp::new(ModelRole::Generic, &[2, 3, 1], OutputActivation::Identity, 4).unwrap();
        m.layers_mut()[1].weights.fill(0.0);
        let x = array![[0.5, -0.2]];
        let t = array![[0.0]];
        let GradientCheck::Checked { max_relative_error } =
            gradient_check(&m, x.view(), t.view(), &MeanSquaredError).unwrap()
        else {
            panic!("skipped")
        };
        assert!(max_relative_error < 1e-6);
    }

    #[test]
    fn gradient_check_skips_relu_kink() {
        // Zero input and zero biases put every hidden unit exactly at 0.
        let m = Mlp::new(ModelRole::Generic, &[2, 3, 1], OutputActivation::Identity, 4).unwrap();
        let r = gradient_check(&m, array![[0.0, 0.0]].view(), array![[1.0]].view(), &MeanSquaredError).unwrap();
        assert_eq!(r, GradientCheck::Skipped);
    }

    #[test]
    fn gradient_check_skips_hinge_kink() {
        let mut m = Mlp::new(ModelRole::Barrier, &[2, 3, 1], OutputActivation::Identity, 1).unwrap();
        m.layers_mut()[0].bias.fill(1.0);
        m.layers_mut()[1].weights.fill(0.0);
        let r = gradient_check(&m, array![[0.1, 0.1]].view(), array![[1.0]].view(), &SignHinge).unwrap();
        assert_eq!(r, GradientCheck::Skipped);
    }

    fn line_data() -> Dataset {
        let x = Array2::from_shape_fn((100, 1), |(i, _)| -1.0 + 2.0 * i as f64 / 99.0);
        let y = x.mapv(|v| 2.0 * v);
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn learns_linear_slope() {
        let data = line_data();
        // Closed-form least squares on the same points.
        let sxy: f64 = data.inputs.iter().zip(data.targets.iter()).map(|(x, y)| x * y).sum();
        let sxx: f64 = data.inputs.iter().map(|x| x * x).sum();
        let oracle_slope = sxy / sxx;
        assert!((oracle_slope - 2.0).abs() < 1e-12);

        let m = Mlp::new(ModelRole::Generic, &[1, 1], OutputActivation::Identity, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 10,
            epochs: 500,
            seed: 3,
            optimizer: OptimizerKind::Adam,
        };
        let (m, curve) = train(m, &data, &MeanSquaredError, &cfg).unwrap();
        let slope = m.layers()[0].weights[(0, 0)];
        assert!((slope - oracle_slope).abs() < 0.05, "{slope}");
        assert!(curve.last().unwrap() < &curve[0]);
    }

    #[test]
    fn sgd_also_descends() {
        let m = Mlp::new(ModelRole::Generic, &[1, 1], OutputActivation::Identity, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 20,
            epochs: 50,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
        };
        let (_, curve) = train(m, &line_data(), &MeanSquaredError, &cfg).unwrap();
        assert!(curve.last().unwrap() < &(curve[0] * 0.5));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let m = Mlp::new(ModelRole::Generic, &[1, 4, 1], OutputActivation::Identity, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (trained, curve) = train(m.clone(), &line_data(), &MeanSquaredError, &cfg).unwrap();
        assert_eq!(trained, m);
        assert!(curve.is_empty());
    }

    #[test]
    fn same_seed_same_weights() {
        let m = Mlp::new(ModelRole::Generic, &[1, 8, 1], OutputActivation::Identity, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(m.clone(), &line_data(), &MeanSquaredError, &cfg).unwrap();
        let b = train(m, &line_data(), &MeanSquaredError, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn nan_aborts() {
        let m = Mlp::new(ModelRole::Generic, &[1, 1], OutputActivation::Identity, 5).unwrap();
        let mut data = line_data();
        data.targets[(3, 0)] = f64::NAN;
        let cfg = TrainConfig {
            batch_size: 100,
            epochs: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(m, &data, &MeanSquaredError, &cfg),
            Err(Error::Diverged { epoch: 0, .. })
        ));
    }

    #[test]
    fn empty_dataset_rejected() {
        let m = Mlp::new(ModelRole::Generic, &[1, 1], OutputActivation::Identity, 5).unwrap();
        let data = Dataset::new(Array2::zeros((0, 1)), Array2::zeros((0, 1))).unwrap();
        assert!(train(m, &data, &MeanSquaredError, &TrainConfig::default()).is_err());
    }
}
