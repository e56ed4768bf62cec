//! Neural control barrier functions: training against labeled samples with
//! a discrete-time invariance condition over the candidate control set.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledSample, RawContext, Task, TaskDataset};
use crate::dynamics::{dynamics_for, DynamicsModel, DynamicsSet};
use crate::error::{Error, Result};
use crate::neural::{stack_rows, Mlp, ModelRole, Optimizer, OptimizerKind, OutputActivation};
use crate::ood::RejectionModel;
use crate::world::{candidate_set, Control};

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierModel {
    pub net: Mlp,
    pub task: Task,
}

impl BarrierModel {
    pub fn new(net: Mlp, task: Task) -> Result<Self> {
        if net.output_dim() != 1 || net.input_dim() != task.feature_dim() {
            return Err(Error::invalid(format!(
                "{task} barrier must map {} inputs to 1 output, got {:?}",
                task.feature_dim(),
                net.sizes()
            )));
        }
        Ok(Self { net, task })
    }

    pub fn value(&self, features: &[f64]) -> Result<f64> {
        Ok(self.net.forward(features)?[0])
    }

    pub fn values(&self, batch: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    /// Same barrier with its output multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.net.scale_output_layer(factor);
        out
    }

    pub fn to_text(&self) -> String {
        self.net.to_text()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let net = Mlp::from_text(text)?;
        if net.role != ModelRole::Barrier {
            return Err(Error::invalid(format!("expected a barrier model, found role {}", net.role)));
        }
        let task: Task = net.tag.parse()?;
        Self::new(net, task)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.net.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbfTrainConfig {
    pub hidden: Vec<usize>,
    /// Slope of the linear class-K function, 1/s.
    pub gamma: f64,
    pub dt: f64,
    /// Speed setting whose candidate set drives the argmax.
    pub max_speed: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Hinge offsets: safe samples are pushed to `B >= safe_margin`,
    /// unsafe ones to `B <= -unsafe_margin`.
    pub safe_margin: f64,
    pub unsafe_margin: f64,
    /// Offset on the invariance hinge, in units of B per second.
    pub lie_margin: f64,
    pub lie_weight: f64,
    /// Share of labeled samples held out for the sign-accuracy report.
    pub holdout: f64,
}

impl Default for CbfTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            gamma: 1.0,
            dt: crate::world::DT,
            max_speed: 1.5,
            epochs: 150,
            learning_rate: 1e-3,
            batch_size: 128,
            seed: 0,
            safe_margin: 0.1,
            unsafe_margin: 0.1,
            lie_margin: 0.05,
            lie_weight: 0.1,
            holdout: 0.2,
        }
    }
}

impl CbfTrainConfig {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Static => Self::default(),
            // A stronger, tighter decrease term keeps the barrier forward invariant
            // across the pedestrian band without loosening the unsafe set.
            Task::Dynamic => Self {
                hidden: vec![128, 128],
                unsafe_margin: 0.3,
                lie_weight: 0.2,
                lie_margin: 0.02,
                ..Self::default()
            },
            Task::MultiRobot => Self { hidden: vec![128, 128], ..Self::default() },
        }
    }

    /// Margin-free objective exactly as the three hinge terms are written.
    pub fn literal() -> Self {
        Self { safe_margin: 0.0, unsafe_margin: 0.0, lie_margin: 0.0, lie_weight: 1.0, ..Self::default() }
    }

    pub fn candidates(&self) -> Result<Vec<Control>> {
        candidate_set(self.max_speed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.dt > 0.0 && self.gamma * self.dt < 1.0) {
            return Err(Error::invalid(format!(
                "need gamma > 0 and gamma * dt < 1, got gamma = {}, dt = {}",
                self.gamma, self.dt
            )));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::invalid(format!("bad barrier training config {self:?}")));
        }
        Ok(())
    }
}

/// Successor feature rows of `ctx` under every candidate, in candidate order.
pub fn successor_features(ctx: &RawContext, f: &DynamicsModel, candidates: &[Control]) -> Result<Array2<f64>> {
    let states = vec![*ctx.robot(); candidates.len()];
    let next = f.predict_batch(&states, candidates)?;
    let rows: Vec<Vec<f64>> = next.into_iter().map(|n| ctx.with_robot_advanced(n, f.dt).features()).collect();
    stack_rows(&rows)
}

/// `(B(next) - B(x)) / dt` with `next` the one-step successor under `u`.
pub fn discrete_lie_derivative(b: &BarrierModel, f: &DynamicsModel, x: &RawContext, u: &Control) -> Result<f64> {
    let now = b.value(&x.features())?;
    let next = b.value(&x.successor(u, f).features())?;
    Ok((next - now) / f.dt)
}

/// Index of the largest value among gated entries, or among all entries
/// when none is gated in. Ties go to the lowest index.
pub fn argmax_gated(values: &[f64], gate: &[bool]) -> usize {
    let best = |allowed: &dyn Fn(usize) -> bool| {
        let mut pick: Option<usize> = None;
        for (i, &v) in values.iter().enumerate() {
            if allowed(i) && pick.is_none_or(|p| v > values[p]) {
                pick = Some(i);
            }
        }
        pick
    };
    best(&|i| gate[i]).or_else(|| best(&|_| true)).unwrap_or(0)
}

/// The candidate whose successor has the largest barrier value among
/// in-distribution successors.
pub fn best_safe_control(
    b: &BarrierModel,
    f: &DynamicsModel,
    r: &RejectionModel,
    x: &RawContext,
    candidates: &[Control],
) -> Result<Control> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    let succ = successor_features(x, f, candidates)?;
    let values = b.values(succ.view())?;
    let gate = r.in_distribution_batch(succ.view())?;
    Ok(candidates[argmax_gated(&values, &gate)])
}

/// Splits unlabeled samples into those with some in-distribution successor
/// of nonnegative barrier value (now safe) and the rest (now unsafe).
pub fn annotate_unlabeled(
    samples: &[LabeledSample],
    b: &BarrierModel,
    dynamics: &DynamicsSet,
    r: &RejectionModel,
    candidates: &[Control],
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let mut promoted = Vec::new();
    let mut demoted = Vec::new();
    for s in samples {
        let f = dynamics_for(dynamics, s.context.platform())?;
        let succ = successor_features(&s.context, f, candidates)?;
        let values = b.values(succ.view())?;
        let gate = r.in_distribution_batch(succ.view())?;
        let ok = values.iter().zip(&gate).any(|(&v, &g)| g && v >= 0.0);
        let mut s = s.clone();
        s.label = if ok { Label::Safe } else { Label::Unsafe };
        if ok {
            promoted.push(s);
        } else {
            demoted.push(s);
        }
    }
    Ok((promoted, demoted))
}

fn hinge(z: f64) -> f64 {
    z.max(0.0)
}

/// Safe, unsafe and invariance hinge means.
pub fn cbf_loss(
    b: &BarrierModel,
    safe: &[LabeledSample],
    unsafe_: &[LabeledSample],
    dynamics: &DynamicsSet,
    r: &RejectionModel,
    cfg: &CbfTrainConfig,
) -> Result<f64> {
    if safe.is_empty() || unsafe_.is_empty() {
        return Err(Error::invalid("barrier loss needs nonempty safe and unsafe sets"));
    }
    let candidates = cfg.candidates()?;
    let xs = stack_rows(&safe.iter().map(|s| s.features.clone()).collect::<Vec<_>>())?;
    let xu = stack_rows(&unsafe_.iter().map(|s| s.features.clone()).collect::<Vec<_>>())?;
    let bs = b.values(xs.view())?;
    let bu = b.values(xu.view())?;
    let mut lie = 0.0;
    for (s, &bx) in safe.iter().zip(&bs) {
        let f = dynamics_for(dynamics, s.context.platform())?;
        let succ = successor_features(&s.context, f, &candidates)?;
        let values = b.values(succ.view())?;
        let gate = r.in_distribution_batch(succ.view())?;
        let bn = values[argmax_gated(&values, &gate)];
        lie += hinge(cfg.lie_margin - (bn - bx) / cfg.dt - cfg.gamma * bx);
    }
    let n_s = safe.len() as f64;
    let term_s = bs.iter().map(|&v| hinge(cfg.safe_margin - v)).sum::<f64>() / n_s;
    let term_u = bu.iter().map(|&v| hinge(cfg.unsafe_margin + v)).sum::<f64>() / unsafe_.len() as f64;
    Ok(term_s + term_u + cfg.lie_weight * lie / n_s)
}

/// Fraction of safe samples with `B >= 0` and of unsafe samples with `B < 0`.
pub fn sign_accuracy<'a>(b: &BarrierModel, samples: impl IntoIterator<Item = &'a LabeledSample>) -> Result<(f64, f64)> {
    let (mut s_ok, mut s_n, mut u_ok, mut u_n) = (0usize, 0usize, 0usize, 0usize);
    let samples: Vec<&LabeledSample> = samples.into_iter().collect();
    let x = stack_rows(&samples.iter().map(|s| s.features.clone()).collect::<Vec<_>>())?;
    let values = if samples.is_empty() { Vec::new() } else { b.values(x.view())? };
    for (s, v) in samples.iter().zip(values) {
        match s.label {
            Label::Safe => {
                s_n += 1;
                s_ok += usize::from(v >= 0.0);
            }
            Label::Unsafe => {
                u_n += 1;
                u_ok += usize::from(v < 0.0);
            }
            Label::Unlabeled => {}
        }
    }
    let frac = |ok: usize, n: usize| if n == 0 { f64::NAN } else { ok as f64 / n as f64 };
    Ok((frac(s_ok, s_n), frac(u_ok, u_n)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbfReport {
    pub epoch_losses: Vec<f64>,
    pub heldout_safe_accuracy: f64,
    pub heldout_unsafe_accuracy: f64,
    /// Unlabeled samples promoted to safe at the last annotation pass.
    pub promoted: usize,
    pub demoted: usize,
    pub train_samples: usize,
    pub heldout_samples: usize,
}

/// Successor rows and gates of one training sample, fixed for the whole
/// run since the dynamics and rejection models do not change.
struct Precomputed {
    features: Array2<f64>,
    labels: Vec<Label>,
    /// Row offset into `succ` per sample; `None` for unsafe samples.
    block: Vec<Option<usize>>,
    succ: Array2<f64>,
    gate: Vec<bool>,
}

fn precompute(
    samples: &[&LabeledSample],
    dynamics: &DynamicsSet,
    r: &RejectionModel,
    candidates: &[Control],
) -> Result<Precomputed> {
    let k = candidates.len();
    let mut block = Vec::with_capacity(samples.len());
    let mut succ_rows = Vec::new();
    for s in samples {
        if s.label == Label::Unsafe {
            block.push(None);
            continue;
        }
        block.push(Some(succ_rows.len()));
        let f = dynamics_for(dynamics, s.context.platform())?;
        let states = vec![*s.context.robot(); k];
        for n in f.predict_batch(&states, candidates)? {
            succ_rows.push(s.context.with_robot_advanced(n, f.dt).features());
        }
    }
    let succ = stack_rows(&succ_rows)?;
    let gate = if succ_rows.is_empty() { Vec::new() } else { r.in_distribution_batch(succ.view())? };
    Ok(Precomputed {
        features: stack_rows(&samples.iter().map(|s| s.features.clone()).collect::<Vec<_>>())?,
        labels: samples.iter().map(|s| s.label).collect(),
        block,
        succ,
        gate,
    })
}

/// Trains a barrier for `data.task`. Unlabeled samples are re-annotated
/// against the current barrier at the start of every epoch.
pub fn train_cbf(
    data: &TaskDataset,
    dynamics: &DynamicsSet,
    r: &RejectionModel,
    cfg: &CbfTrainConfig,
) -> Result<(BarrierModel, CbfReport)> {
    cfg.validate()?;
    let task = data.task;
    if r.input_dim() != task.feature_dim() {
        return Err(Error::DimensionMismatch { expected: task.feature_dim(), actual: r.input_dim() });
    }
    let candidates = cfg.candidates()?;
    let k = candidates.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<&LabeledSample> = data.samples.iter().collect();
    order.shuffle(&mut rng);
    let (mut train_set, mut heldout) = (Vec::new(), Vec::new());
    let mut seen = [0usize; 3];
    for s in order {
        // Hold out a share of each label so both sign accuracies are defined.
        let i = &mut seen[s.label as usize];
        *i += 1;
        let hold_every = if cfg.holdout > 0.0 { (1.0 / cfg.holdout).round() as usize } else { usize::MAX };
        if s.label != Label::Unlabeled && *i % hold_every == 0 {
            heldout.push(s);
        } else {
            train_set.push(s);
        }
    }
    let pre = precompute(&train_set, dynamics, r, &candidates)?;
    let n_safe = pre.labels.iter().filter(|&&l| l == Label::Safe).count();
    let n_unsafe = pre.labels.iter().filter(|&&l| l == Label::Unsafe).count();
    if n_safe == 0 || n_unsafe == 0 {
        return Err(Error::invalid(format!("{task} set needs safe and unsafe samples")));
    }

    let mut sizes = vec![task.feature_dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::new(ModelRole::Barrier, &sizes, OutputActivation::Identity, cfg.seed)?.with_tag(task.as_str());
    net.fit_input_normalization(pre.features.view())?;
    let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.learning_rate, &net);

    let dim = task.feature_dim();
    let bs = cfg.batch_size;
    let mut losses = Vec::with_capacity(cfg.epochs);
    let (mut promoted, mut demoted) = (0, 0);
    for epoch in 0..cfg.epochs {
        let succ_values = if pre.succ.nrows() > 0 {
            net.forward_batch(pre.succ.view())?.into_raw_vec_and_offset().0
        } else {
            Vec::new()
        };
        // (sample, successor row) for the safe side, sample for the unsafe side.
        let mut safe: Vec<(usize, usize)> = Vec::new();
        let mut unsafe_: Vec<usize> = Vec::new();
        promoted = 0;
        demoted = 0;
        for (i, label) in pre.labels.iter().enumerate() {
            let Some(off) = pre.block[i] else {
                unsafe_.push(i);
                continue;
            };
            let vals = &succ_values[off..off + k];
            let gate = &pre.gate[off..off + k];
            let is_safe = match label {
                Label::Unlabeled => {
                    let ok = vals.iter().zip(gate).any(|(&v, &g)| g && v >= 0.0);
                    if ok { promoted += 1 } else { demoted += 1 }
                    ok
                }
                _ => true,
            };
            if is_safe {
                safe.push((i, off + argmax_gated(vals, gate)));
            } else {
                unsafe_.push(i);
            }
        }
        safe.shuffle(&mut rng);
        unsafe_.shuffle(&mut rng);
        let steps = safe.len().div_ceil(bs).max(unsafe_.len().div_ceil(bs));
        let mut total = 0.0;
        for step in 0..steps {
            let sb: Vec<(usize, usize)> = (0..bs.min(safe.len())).map(|j| safe[(step * bs + j) % safe.len()]).collect();
            let ub: Vec<usize> = (0..bs.min(unsafe_.len())).map(|j| unsafe_[(step * bs + j) % unsafe_.len()]).collect();
            let (ns, nu) = (sb.len(), ub.len());
            let mut input = Array2::zeros((2 * ns + nu, dim));
            for (j, &(i, row)) in sb.iter().enumerate() {
                input.row_mut(j).assign(&pre.features.row(i));
                input.row_mut(ns + j).assign(&pre.succ.row(row));
            }
            for (j, &i) in ub.iter().enumerate() {
                input.row_mut(2 * ns + j).assign(&pre.features.row(i));
            }
            let trace = net.forward_trace(input.view())?;
            let out = &trace.output;
            let mut grad = Array2::zeros((2 * ns + nu, 1));
            let mut value = 0.0;
            for j in 0..ns {
                let (bx, bn) = (out[[j, 0]], out[[ns + j, 0]]);
                let z = cfg.safe_margin - bx;
                if z > 0.0 {
                    value += z / ns as f64;
                    grad[[j, 0]] -= 1.0 / ns as f64;
                }
                let z = cfg.lie_margin - (bn - bx) / cfg.dt - cfg.gamma * bx;
                if z > 0.0 {
                    let w = cfg.lie_weight / ns as f64;
                    value += w * z;
                    grad[[ns + j, 0]] -= w / cfg.dt;
                    grad[[j, 0]] += w * (1.0 / cfg.dt - cfg.gamma);
                }
            }
            for j in 0..nu {
                let z = cfg.unsafe_margin + out[[2 * ns + j, 0]];
                if z > 0.0 {
                    value += z / nu as f64;
                    grad[[2 * ns + j, 0]] += 1.0 / nu as f64;
                }
            }
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            let grads = net.backward(&trace, grad.view());
            opt.step(&mut net, &grads);
            total += value;
        }
        losses.push(total / steps.max(1) as f64);
    }
    let barrier = BarrierModel::new(net, task)?;
    let (sa, ua) = sign_accuracy(&barrier, heldout.iter().copied())?;
    Ok((
        barrier,
        CbfReport {
            epoch_losses: losses,
            heldout_safe_accuracy: sa,
            heldout_unsafe_accuracy: ua,
            promoted,
            demoted,
            train_samples: train_set.len(),
            heldout_samples: heldout.len(),
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// In-distribution probe states with `B >= 0.05`.
    pub checked: usize,
    pub satisfied: usize,
}

impl ProbeResult {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            f64::NAN
        } else {
            self.satisfied as f64 / self.checked as f64
        }
    }
}

/// Checks `B(next) >= (1 - gamma dt) B(x) - 1e-3` under `a(x)` on every
/// probe context that is in distribution and has `B(x) >= 0.05`.
pub fn invariance_probe(
    b: &BarrierModel,
    dynamics: &DynamicsSet,
    r: &RejectionModel,
    probes: &[RawContext],
    cfg: &CbfTrainConfig,
) -> Result<ProbeResult> {
    let candidates = cfg.candidates()?;
    let mut out = ProbeResult { checked: 0, satisfied: 0 };
    if probes.is_empty() {
        return Ok(out);
    }
    let x = stack_rows(&probes.iter().map(|p| p.features()).collect::<Vec<_>>())?;
    let bx = b.values(x.view())?;
    let inside = r.in_distribution_batch(x.view())?;
    for ((p, &v), &ok) in probes.iter().zip(&bx).zip(&inside) {
        if !ok || v < 0.05 {
            continue;
        }
        let f = dynamics_for(dynamics, p.platform())?;
        let succ = successor_features(p, f, &candidates)?;
        let values = b.values(succ.view())?;
        let gate = r.in_distribution_batch(succ.view())?;
        let bn = values[argmax_gated(&values, &gate)];
        out.checked += 1;
        if bn >= (1.0 - cfg.gamma * cfg.dt) * v - 1e-3 {
            out.satisfied += 1;
        }
    }
    Ok(out)
}
