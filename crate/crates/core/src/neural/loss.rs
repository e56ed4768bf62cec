use ndarray::{Array2, ArrayView2, Zip};

/// Loss value with its gradient wrt the network output.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub value: f64,
    pub grad: Array2<f64>,
    /// False when the loss is evaluated exactly at a non-differentiable point.
    pub smooth: bool,
}

pub trait Loss {
    fn evaluate(&self, output: ArrayView2<f64>, target: ArrayView2<f64>) -> LossEval;
}

/// Mean over all elements of the squared error.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanSquaredError;

impl Loss for MeanSquaredError {
    fn evaluate(&self, output: ArrayView2<f64>, target: ArrayView2<f64>) -> LossEval {
        let n = output.len().max(1) as f64;
        let diff = &output - &target;
        let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
        LossEval {
            value,
            grad: diff * (2.0 / n),
            smooth: true,
        }
    }
}

/// Binary cross-entropy on probability outputs with targets in {0, 1}.
/// Positive targets are weighted by `positive_weight`.
#[derive(Clone, Copy, Debug)]
pub struct WeightedBce {
    pub positive_weight: f64,
}

impl Default for WeightedBce {
    fn default() -> Self {
        Self {
            positive_weight: 1.0,
        }
    }
}

impl Loss for WeightedBce {
    fn evaluate(&self, output: ArrayView2<f64>, target: ArrayView2<f64>) -> LossEval {
        const EPS: f64 = 1e-12;
        let n = output.len().max(1) as f64;
        let mut value = 0.0;
        let mut grad = Array2::zeros(output.raw_dim());
        Zip::from(&mut grad)
            .and(output)
            .and(target)
            .for_each(|g, &y, &t| {
                let y = y.clamp(EPS, 1.0 - EPS);
                let w = self.positive_weight;
                value -= w * t * y.ln() + (1.0 - t) * (1.0 - y).ln();
                *g = (-w * t / y + (1.0 - t) / (1.0 - y)) / n;
            });
        LossEval {
            value: value / n,
            grad,
            smooth: true,
        }
    }
}

/// `mean([-t * y]_+)` with sign targets `t` in {-1, +1}.
#[derive(Clone, Copy, Debug, Default)]
pub struct SignHinge;

impl Loss for SignHinge {
    fn evaluate(&self, output: ArrayView2<f64>, target: ArrayView2<f64>) -> LossEval {
        let n = output.len().max(1) as f64;
        let mut value = 0.0;
        let mut smooth = true;
        let mut grad = Array2::zeros(output.raw_dim());
        Zip::from(&mut grad)
            .and(output)
            .and(target)
            .for_each(|g, &y, &t| {
                let m = -t * y;
                if m == 0.0 {
                    smooth = false;
                }
                if m > 0.0 {
                    value += m;
                    *g = -t / n;
                }
            });
        LossEval {
            value: value / n,
            grad,
            smooth,
        }
    }
}
