//! Learned per-platform motion models: differential-drive kinematics plus
//! a tanh-bounded neural correction on each state rate.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::neural::{train, Dataset, MeanSquaredError, Mlp, ModelRole, OutputActivation, TrainConfig};
use crate::world::{Control, PlatformParams, RobotState, DT};

pub const INPUT_DIM: usize = 7;

/// One model per platform, keyed by platform name.
pub type DynamicsSet = std::collections::BTreeMap<String, DynamicsModel>;

pub fn dynamics_for<'a>(set: &'a DynamicsSet, platform: &str) -> Result<&'a DynamicsModel> {
    set.get(platform).ok_or_else(|| Error::MissingDynamics(platform.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    pub net: Mlp,
    pub beta: f64,
    pub params: PlatformParams,
    pub dt: f64,
}

fn input_row(s: &RobotState, u: &Control) -> [f64; INPUT_DIM] {
    [s.x, s.y, s.theta, s.v, s.omega, u.u_v, u.u_omega]
}

impl DynamicsModel {
    /// Plain kinematics: a zero network, so every correction vanishes.
    pub fn kinematic(params: PlatformParams, dt: f64) -> Result<Self> {
        let net = Mlp::zeros(ModelRole::Dynamics, &[INPUT_DIM, 4], OutputActivation::Tanh)?
            .with_tag(params.name.clone());
        Ok(Self { net, beta: 1.0, params, dt })
    }

    fn compose(&self, s: &RobotState, u: &Control, f: &[f64]) -> RobotState {
        let (p, dt, b) = (&self.params, self.dt, self.beta);
        let dv = (u.u_v - s.v).clamp(-p.m_v * dt, p.m_v * dt);
        let dw = (u.u_omega - s.omega).clamp(-p.m_omega * dt, p.m_omega * dt);
        let v_eff = s.v + b * f[0];
        RobotState {
            x: s.x + s.theta.cos() * v_eff * dt,
            y: s.y + s.theta.sin() * v_eff * dt,
            theta: wrap_angle(s.theta + (s.omega + b * f[1]) * dt),
            v: (s.v + dv + b * f[2]).clamp(-p.max_speed, p.max_speed),
            omega: (s.omega + dw + b * f[3]).clamp(-p.max_omega, p.max_omega),
        }
    }

    /// Raw network corrections `f1..f4` (each in (-1, 1)).
    pub fn refinement(&self, s: &RobotState, u: &Control) -> [f64; 4] {
        let out = self
            .net
            .forward(&input_row(s, u))
            .expect("dynamics net has a fixed 7-dim input");
        [out[0], out[1], out[2], out[3]]
    }

    pub fn predict_next(&self, s: &RobotState, u: &Control) -> RobotState {
        self.compose(s, u, &self.refinement(s, u))
    }

    /// Batched [`predict_next`](Self::predict_next) over matching slices.
    pub fn predict_batch(&self, states: &[RobotState], controls: &[Control]) -> Result<Vec<RobotState>> {
        if states.len() != controls.len() {
            return Err(Error::DimensionMismatch { expected: states.len(), actual: controls.len() });
        }
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let mut input = Array2::zeros((states.len(), INPUT_DIM));
        for (i, (s, u)) in states.iter().zip(controls).enumerate() {
            for (j, v) in input_row(s, u).into_iter().enumerate() {
                input[[i, j]] = v;
            }
        }
        let f = self.net.forward_batch(input.view())?;
        Ok(states
            .iter()
            .zip(controls)
            .zip(f.rows())
            .map(|((s, u), row)| self.compose(s, u, &[row[0], row[1], row[2], row[3]]))
            .collect())
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        format!(
            "safenav-dynamics 1\nbeta {}\ndt {}\nplatform {} {} {} {} {} {}\n{}",
            self.beta, self.dt, p.name, p.m_v, p.m_omega, p.delay_h, p.max_speed, p.max_omega,
            self.net.to_text()
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::Parse { what: "dynamics model", line, message: m.to_string() };
        let mut lines = text.splitn(5, '\n');
        if lines.next() != Some("safenav-dynamics 1") {
            return Err(bad(1, "missing `safenav-dynamics 1` header"));
        }
        let field = |line: Option<&str>, key: &str, n: usize| -> Result<Vec<String>> {
            let line = line.ok_or_else(|| bad(n, "truncated"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(n, &format!("expected `{key}`")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let num = |s: &str, n: usize| s.parse::<f64>().map_err(|e| bad(n, &e.to_string()));
        let beta = num(field(lines.next(), "beta", 2)?.first().ok_or_else(|| bad(2, "no value"))?, 2)?;
        let dt = num(field(lines.next(), "dt", 3)?.first().ok_or_else(|| bad(3, "no value"))?, 3)?;
        let p = field(lines.next(), "platform", 4)?;
        if p.len() != 6 {
            return Err(bad(4, "platform needs 6 values"));
        }
        let params = PlatformParams {
            name: p[0].clone(),
            m_v: num(&p[1], 4)?,
            m_omega: num(&p[2], 4)?,
            delay_h: num(&p[3], 4)?,
            max_speed: num(&p[4], 4)?,
            max_omega: num(&p[5], 4)?,
        };
        let net = Mlp::from_text(lines.next().ok_or_else(|| bad(5, "missing network"))?)?;
        if net.input_dim() != INPUT_DIM || net.output_dim() != 4 {
            return Err(bad(5, "network must map 7 inputs to 4 outputs"));
        }
        Ok(Self { net, beta, params, dt })
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

/// Maximum per-tick linear and angular accelerations seen in the data.
pub fn measure_limits(trajs: &[Trajectory]) -> Result<(f64, f64)> {
    let mut pairs = 0usize;
    let (mut m_v, mut m_w) = (0.0f64, 0.0f64);
    for t in trajs {
        for w in t.entries.windows(2) {
            let dt = w[1].t - w[0].t;
            if !(dt > 0.0) {
                return Err(Error::invalid(format!("non-increasing timestamps at t = {}", w[0].t)));
            }
            m_v = m_v.max((w[1].v - w[0].v).abs() / dt);
            m_w = m_w.max((w[1].omega - w[0].omega).abs() / dt);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::invalid("need at least one trajectory with two entries"));
    }
    Ok((m_v, m_w))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsConfig {
    pub hidden: Vec<usize>,
    pub beta: f64,
    /// Share of transitions held out for evaluation.
    pub holdout: f64,
    /// Replace the platform's acceleration limits by those measured in data.
    pub measure_limits: bool,
    pub train: TrainConfig,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            beta: 1.0,
            holdout: 0.2,
            measure_limits: true,
            train: TrainConfig { epochs: 40, ..TrainConfig::default() },
        }
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsFit {
    pub model: DynamicsModel,
    /// Held-out mean squared next-state error of the learned model.
    pub heldout_mse: f64,
    /// Same error for the plain kinematic model.
    pub baseline_mse: f64,
    pub losses: Vec<f64>,
    /// The trained correction lost to a zero correction on validation data
    /// and was switched off.
    pub zero_correction: bool,
}

struct Transition {
    state: RobotState,
    control: Control,
    next: RobotState,
}

fn transitions(trajs: &[Trajectory]) -> Vec<Transition> {
    trajs
        .iter()
        .flat_map(|t| {
            t.entries.windows(2).filter(|w| (w[1].t - w[0].t - DT).abs() < 1e-6).map(|w| Transition {
                state: w[0].state(),
                control: w[0].control(),
                next: w[1].state(),
            })
        })
        .collect()
}

/// Mean over transitions and the five coordinates of the squared
/// prediction error, heading differences wrapped.
pub fn next_state_mse(model: &DynamicsModel, data: &[(RobotState, Control, RobotState)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("no transitions to evaluate"));
    }
    let states: Vec<_> = data.iter().map(|d| d.0).collect();
    let controls: Vec<_> = data.iter().map(|d| d.1).collect();
    let pred = model.predict_batch(&states, &controls)?;
    let total: f64 = pred
        .iter()
        .zip(data)
        .map(|(p, (_, _, n))| {
            let e = [p.x - n.x, p.y - n.y, wrap_angle(p.theta - n.theta), p.v - n.v, p.omega - n.omega];
            e.iter().map(|x| x * x).sum::<f64>()
        })
        .sum();
    Ok(total / (5.0 * data.len() as f64))
}

/// Fits the correction network to the residual between recorded next
/// states and the kinematic prediction.
pub fn train_dynamics(trajs: &[Trajectory], params: &PlatformParams, cfg: &DynamicsConfig) -> Result<DynamicsFit> {
    let data = transitions(trajs);
    if data.len() < 1000 {
        return Err(Error::invalid(format!("need at least 1000 transitions, got {}", data.len())));
    }
    if !(cfg.beta > 0.0) || !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::invalid(format!("bad dynamics config {cfg:?}")));
    }
    let mut params = params.clone();
    if cfg.measure_limits {
        let (m_v, m_w) = measure_limits(trajs)?;
        params.m_v = m_v;
        params.m_omega = m_w;
    }
    let baseline = DynamicsModel { beta: cfg.beta, ..DynamicsModel::kinematic(params.clone(), DT)? };

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0xd1a));
    let n_test = ((data.len() as f64) * cfg.holdout).round() as usize;
    let (test_idx, rest) = order.split_at(n_test);
    // A tenth of the training portion decides whether the net beats a zero
    // correction at all.
    let (val_idx, train_idx) = rest.split_at(rest.len() / 10);

    let mut inputs = Array2::zeros((train_idx.len(), INPUT_DIM));
    let mut targets = Array2::zeros((train_idx.len(), 4));
    for (row, &i) in train_idx.iter().enumerate() {
        let t = &data[i];
        for (j, v) in input_row(&t.state, &t.control).into_iter().enumerate() {
            inputs[[row, j]] = v;
        }
        let k = baseline.compose(&t.state, &t.control, &[0.0; 4]);
        let (c, s) = (t.state.theta.cos(), t.state.theta.sin());
        let r = [
            ((t.next.x - k.x) * c + (t.next.y - k.y) * s) / DT,
            wrap_angle(t.next.theta - k.theta) / DT,
            t.next.v - k.v,
            t.next.omega - k.omega,
        ];
        for (j, v) in r.into_iter().enumerate() {
            targets[[row, j]] = (v / cfg.beta).clamp(-0.99, 0.99);
        }
    }

    let mut sizes = vec![INPUT_DIM];
    sizes.extend(&cfg.hidden);
    sizes.push(4);
    let mut net = Mlp::new(ModelRole::Dynamics, &sizes, OutputActivation::Tanh, cfg.train.seed)?
        .with_tag(params.name.clone());
    net.fit_input_normalization(inputs.view())?;
    // Start near the baseline so early predictions are no worse than it.
    net.scale_output_layer(0.01);
    let (net, losses) = train(net, &Dataset::new(inputs, targets)?, &MeanSquaredError, &cfg.train)?;

    let pick = |idx: &[usize]| -> Vec<_> { idx.iter().map(|&i| (data[i].state, data[i].control, data[i].next)).collect() };
    let mut model = DynamicsModel { net, beta: cfg.beta, params, dt: DT };
    let val = pick(val_idx);
    let zero_correction = !val.is_empty() && next_state_mse(&model, &val)? > next_state_mse(&baseline, &val)?;
    if zero_correction {
        let last = model.net.layers_mut().last_mut().expect("at least one layer");
        last.weights.fill(0.0);
        last.bias.fill(0.0);
    }
    let test = pick(test_idx);
    Ok(DynamicsFit {
        zero_correction,
        heldout_mse: next_state_mse(&model, &test)?,
        baseline_mse: next_state_mse(&baseline, &test)?,
        model,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dataset::{generate_robot_trajectories, TeleopConfig, TrajectoryEntry};
    use crate::world::apply_ground_truth_dynamics;

    fn with_last_layer_bias(mut model: DynamicsModel, bias: [f64; 4]) -> DynamicsModel {
        let last = model.net.layers_mut().last_mut().unwrap();
        last.weights.fill(0.0);
        for (b, v) in last.bias.iter_mut().zip(bias) {
            *b = v;
        }
        model
    }

    #[test]
    fn zero_net_is_the_simulator() {
        let m = DynamicsModel::kinematic(PlatformParams::megarover(), DT).unwrap();
        let s = RobotState::new(1.0, -2.0, 3.0, 0.4, -0.3);
        for u in [Control::new(1.5, 1.2), Control::STOP, Control::new(0.3, -0.8)] {
            assert_eq!(m.predict_next(&s, &u), apply_ground_truth_dynamics(&s, &u, &m.params, DT));
        }
    }

    #[test]
    fn zero_beta_ignores_the_net() {
        let mut m = with_last_layer_bias(DynamicsModel::kinematic(PlatformParams::freight(), DT).unwrap(), [5.0, -5.0, 5.0, 5.0]);
        m.beta = 0.0;
        let s = RobotState::new(0.0, 0.0, 0.3, 1.0, 0.2);
        let u = Control::new(0.5, 0.0);
        assert_eq!(m.predict_next(&s, &u), apply_ground_truth_dynamics(&s, &u, &m.params, DT));
    }

    #[test]
    fn saturated_velocity_correction_doubles_advance() {
        // tanh(20) is 1 to double precision minus a hair.
        let m = with_last_layer_bias(DynamicsModel::kinematic(PlatformParams::freight(), DT).unwrap(), [20.0, 0.0, 0.0, 0.0]);
        let s = RobotState::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let next = m.predict_next(&s, &Control::new(1.0, 0.0));
        assert!((next.x - 0.2).abs() < 1e-12);
        assert_eq!(next.y, 0.0);
    }

    #[test]
    fn batch_matches_single() {
        let m = DynamicsModel {
            net: Mlp::new(ModelRole::Dynamics, &[7, 16, 4], OutputActivation::Tanh, 3).unwrap(),
            ..DynamicsModel::kinematic(PlatformParams::jackal(), DT).unwrap()
        };
        let states: Vec<_> = (0..20).map(|i| RobotState::new(i as f64 * 0.1, 0.5, 0.1 * i as f64, 0.05 * i as f64, 0.0)).collect();
        let controls: Vec<_> = (0..20).map(|i| Control::new(0.5, if i % 2 == 0 { 0.4 } else { -0.4 })).collect();
        let batch = m.predict_batch(&states, &controls).unwrap();
        for ((s, u), b) in states.iter().zip(&controls).zip(&batch) {
            let single = m.predict_next(s, u);
            assert!((single.x - b.x).abs() < 1e-12 && (single.omega - b.omega).abs() < 1e-12);
        }
        assert!(m.predict_batch(&states, &controls[..3]).is_err());
    }

    fn traj_from_v(vs: &[f64]) -> Trajectory {
        Trajectory {
            platform: "freight".into(),
            entries: vs
                .iter()
                .enumerate()
                .map(|(i, &v)| TrajectoryEntry::new(i as f64 * DT, RobotState::new(0.0, 0.0, 0.0, v, 0.0), Control::STOP))
                .collect(),
        }
    }

    #[test]
    fn limits_from_data() {
        assert_eq!(measure_limits(&[traj_from_v(&[0.7; 10])]).unwrap(), (0.0, 0.0));
        let (m_v, _) = measure_limits(&[traj_from_v(&[0.0, 0.215])]).unwrap();
        assert!((m_v - 2.15).abs() < 1e-12);
        let ramp: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let (m_v, _) = measure_limits(&[traj_from_v(&ramp)]).unwrap();
        assert!((m_v - 0.5).abs() < 1e-9);
        assert!(measure_limits(&[]).is_err());
        assert!(measure_limits(&[traj_from_v(&[1.0])]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = DynamicsModel {
            net: Mlp::new(ModelRole::Dynamics, &[7, 8, 4], OutputActivation::Tanh, 1).unwrap(),
            ..DynamicsModel::kinematic(PlatformParams::megarover(), DT).unwrap()
        };
        assert_eq!(DynamicsModel::from_text(&m.to_text()).unwrap(), m);
        assert!(DynamicsModel::from_text("nope").is_err());
    }

    fn quick_cfg() -> DynamicsConfig {
        DynamicsConfig { train: TrainConfig { epochs: 15, ..TrainConfig::default() }, ..DynamicsConfig::default() }
    }

    #[test]
    fn learns_at_least_the_baseline_with_noise() {
        let platform = PlatformParams::freight();
        let traj = generate_robot_trajectories(&platform, 600.0, 21, &TeleopConfig::default()).unwrap();
        let fit = train_dynamics(&[traj], &platform, &quick_cfg()).unwrap();
        assert!(fit.heldout_mse <= fit.baseline_mse, "{} > {}", fit.heldout_mse, fit.baseline_mse);
        assert!(!fit.zero_correction);
        eprintln!("noisy: learned {} baseline {}", fit.heldout_mse, fit.baseline_mse);
        assert_eq!(fit.model.net.sizes(), vec![7, 64, 64, 4]);
        // Noise inflates the measured limit above the true one.
        assert!(fit.model.params.m_v >= platform.m_v);
    }

    #[test]
    fn learns_at_least_the_baseline_without_noise() {
        let platform = PlatformParams::megarover();
        let cfg = TeleopConfig { velocity_noise: 0.0, ..TeleopConfig::default() };
        let traj = generate_robot_trajectories(&platform, 200.0, 22, &cfg).unwrap();
        let fit = train_dynamics(&[traj], &platform, &quick_cfg()).unwrap();
        assert!(fit.heldout_mse <= fit.baseline_mse + 1e-12, "{} > {}", fit.heldout_mse, fit.baseline_mse);
    }

    #[test]
    fn too_little_data_is_rejected() {
        let platform = PlatformParams::freight();
        let traj = generate_robot_trajectories(&platform, 60.0, 1, &TeleopConfig::default()).unwrap();
        assert!(train_dynamics(&[traj], &platform, &quick_cfg()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn corrections_are_bounded_by_beta(
            seed in 0u64..1000,
            beta in 0.0f64..2.0,
            x in -5.0f64..5.0, th in -3.1f64..3.1, v in -1.5f64..1.5, w in -1.2f64..1.2,
            uv in 0.0f64..1.5, uw in -1.2f64..1.2,
        ) {
            let mut m = DynamicsModel {
                net: Mlp::new(ModelRole::Dynamics, &[7, 16, 4], OutputActivation::Tanh, seed).unwrap(),
                ..DynamicsModel::kinematic(PlatformParams::freight(), DT).unwrap()
            };
            m.net.scale_output_layer(50.0);
            m.beta = beta;
            let base = DynamicsModel { beta: 0.0, ..m.clone() };
            let s = RobotState::new(x, -x, th, v, w);
            let u = Control::new(uv, uw);
            for f in m.refinement(&s, &u) {
                prop_assert!(f.abs() <= 1.0);
            }
            let a = m.predict_next(&s, &u);
            let b = base.predict_next(&s, &u);
            let tol = 1e-12;
            prop_assert!(((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() <= beta * DT + tol);
            prop_assert!(wrap_angle(a.theta - b.theta).abs() <= beta * DT + tol);
            prop_assert!((a.v - b.v).abs() <= beta + tol);
            prop_assert!((a.omega - b.omega).abs() <= beta + tol);
        }
    }
}
