//! Closed-loop motion generation against the synthetic plant.
//!
//! Every step the model sees the current joints, tactile readings and the
//! configured labels; its prediction becomes the joint command. The loop
//! always runs for exactly `max_steps` steps.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{record_fields, trajectory_header, validate_labels, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::model::{Network, JOINTS, LABELS, TACTILE_AXES};
use crate::plant::{DisturbanceKind, Plant, PlantState, SyntheticObject};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    /// Applied before the command of this step.
    pub step: usize,
    pub kind: DisturbanceKind,
    pub magnitude: f64,
}

impl std::str::FromStr for Disturbance {
    type Err = Error;

    /// Parses `step:kind:magnitude`, e.g. `150:pull_down:2`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidArgument(format!("disturbance {s:?} is not step:kind:magnitude"));
        let [step, kind, magnitude] = parts[..] else {
            return Err(bad());
        };
        let magnitude: f64 = magnitude.parse().map_err(|_| bad())?;
        if !(magnitude > 0.0 && magnitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "disturbance magnitude must be positive, got {magnitude}"
            )));
        }
        Ok(Self {
            step: step.parse().map_err(|_| bad())?,
            kind: kind.parse()?,
            magnitude,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub max_steps: usize,
    pub labels: [f64; LABELS],
    pub disturbance: Option<Disturbance>,
    pub success_distance: f64,
    /// Degrees.
    pub success_angle: f64,
    /// Query the model every this many steps and hold the command between.
    pub command_stride: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_steps: 300,
            labels: [1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            disturbance: None,
            success_distance: 2.0,
            success_angle: 15.0,
            command_stride: 1,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || self.command_stride == 0 {
            return Err(Error::InvalidArgument("max_steps and command_stride must be at least 1".into()));
        }
        validate_labels(&self.labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub t: usize,
    pub command: [f64; JOINTS],
    /// Plant state after the command was applied.
    pub state: PlantState,
    /// `nodes×3` readings of `state`, node-major.
    pub tactile: Vec<f64>,
    pub grip_force: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub success: bool,
    pub final_distance: f64,
    pub final_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub labels: [f64; LABELS],
    pub steps: Vec<RolloutStep>,
    pub verdict: Verdict,
}

impl RolloutTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn grip_forces(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.grip_force).collect()
    }

    /// Mean grip force over the last quarter of the trace (at least one step).
    pub fn final_quarter_force(&self) -> f64 {
        let f = self.grip_forces();
        let tail = &f[f.len() - (f.len() / 4).max(1)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Sum over nodes of the Euclidean norm of each 3-axis reading.
pub fn total_grip_force(tactile: &Tensor) -> f64 {
    tactile
        .data()
        .chunks(TACTILE_AXES)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum()
}

/// Success iff both thresholds are strictly undercut.
pub fn judge(distance: f64, angle: f64, cfg: &RolloutConfig) -> Verdict {
    Verdict {
        success: distance < cfg.success_distance && angle < cfg.success_angle,
        final_distance: distance,
        final_angle: angle,
    }
}

pub fn judge_success(plant: &Plant, state: &PlantState, cfg: &RolloutConfig) -> Verdict {
    judge(plant.palm_distance(state), state.object_tilt, cfg)
}

/// A randomized start: open pose plus small joint offsets, and the object
/// radius scaled by up to `±radius_jitter`.
pub fn seeded_start(
    plant: &Plant,
    obj: &SyntheticObject,
    seed: u64,
    joint_jitter: f64,
    radius_jitter: f64,
) -> (SyntheticObject, PlantState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |s: f64| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
    let obj = obj.clone().with_radius(obj.radius * (1.0 + jitter(radius_jitter)));
    let mut joints = plant.config.open_pose;
    for q in &mut joints {
        *q += jitter(joint_jitter);
    }
    let state = plant.initial_state(joints, &obj);
    (obj, state)
}

pub fn rollout(
    network: &Network,
    plant: &Plant,
    initial: PlantState,
    obj: &SyntheticObject,
    cfg: &RolloutConfig,
) -> Result<RolloutTrace> {
    cfg.validate()?;
    if network.spec().node_count != plant.node_count() {
        return Err(Error::ShapeMismatch {
            op: "rollout",
            left: vec![network.spec().node_count],
            right: vec![plant.node_count()],
        });
    }
    let mut state = initial;
    let mut command = state.joints;
    let mut steps = Vec::with_capacity(cfg.max_steps);
    for t in 0..cfg.max_steps {
        if let Some(d) = cfg.disturbance.filter(|d| d.step == t) {
            state = plant.apply_disturbance(&state, d.kind, d.magnitude, obj)?;
        }
        if t % cfg.command_stride == 0 {
            let observed = plant.tactile(&state, obj);
            let out = network.forward(&observed, &state.joints, &cfg.labels)?;
            command.copy_from_slice(&out);
        }
        let (next, tactile) = plant.step(&state, &command, obj)?;
        state = next;
        steps.push(RolloutStep {
            t,
            command,
            grip_force: total_grip_force(&tactile),
            tactile: tactile.into_data(),
            state: state.clone(),
        });
    }
    Ok(RolloutTrace {
        labels: cfg.labels,
        verdict: judge_success(plant, &state, cfg),
        steps,
    })
}

/// Writes the trace as CSV (trajectory columns, then height, tilt,
/// grip force and the command) plus `<stem>.verdict.json`.
pub fn write_trace(path: impl AsRef<Path>, trace: &RolloutTrace) -> Result<()> {
    let path = path.as_ref();
    let nodes = trace.steps.first().map_or(0, |s| s.tactile.len() / TACTILE_AXES);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = trajectory_header(nodes);
    header.extend(["height", "tilt", "grip_force"].map(String::from));
    header.extend((0..JOINTS).map(|j| format!("c{j:02}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for s in &trace.steps {
        let rec = TrajectoryRecord {
            t: s.t,
            joints: s.state.joints,
            tactile: s.tactile.clone(),
            labels: trace.labels,
        };
        let mut row = record_fields(&rec);
        row.extend([s.state.object_height, s.state.object_tilt, s.grip_force].map(|v| v.to_string()));
        row.extend(s.command.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let sidecar = path.with_extension("verdict.json");
    let text = serde_json::to_string_pretty(&trace.verdict).map_err(|e| Error::json(&sidecar, e))?;
    std::fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, Network};
    use crate::plant::{ObjectConstants, PlantConfig};
    use crate::topology::build_toy_hand;

    #[test]
    fn grip_force_examples() {
        assert_eq!(total_grip_force(&Tensor::zeros(&[4, 3])), 0.0);
        let mut t = Tensor::zeros(&[4, 3]);
        t.data_mut()[3] = 3.0;
        t.data_mut()[4] = 4.0;
        assert_eq!(total_grip_force(&t), 5.0);
        let r = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.0, 7.0]]).unwrap();
        assert!((total_grip_force(&r.scale(2.0)) - 2.0 * total_grip_force(&r)).abs() < 1e-12);
    }

    #[test]
    fn success_is_strict() {
        let cfg = RolloutConfig::default();
        assert!(judge(1.5, 10.0, &cfg).success);
        assert!(!judge(2.5, 10.0, &cfg).success);
        assert!(!judge(2.0, 10.0, &cfg).success);
        assert!(!judge(1.0, 15.0, &cfg).success);
    }

    #[test]
    fn disturbance_parsing() {
        let d: Disturbance = "150:pull_down:2".parse().unwrap();
        assert_eq!(d.step, 150);
        assert_eq!(d.kind, DisturbanceKind::PullDown);
        assert_eq!(d.magnitude, 2.0);
        assert!("1:pull_up:2".parse::<Disturbance>().is_err());
        assert!("1:pull_side:0".parse::<Disturbance>().is_err());
        assert!("pull_side:1".parse::<Disturbance>().is_err());
    }

    fn setup() -> (Network, Plant, SyntheticObject) {
        let topo = build_toy_hand();
        let net = Network::new(ModelSpec::gcn(vec![4], vec![8], 24), &topo, 1).unwrap();
        let plant = Plant::new(&topo, PlantConfig::default()).unwrap();
        let obj = SyntheticObject::new(false, false, false, &ObjectConstants::default());
        (net, plant, obj)
    }

    #[test]
    fn trace_length_is_max_steps() {
        let (net, plant, obj) = setup();
        for max_steps in [1, 7] {
            let cfg = RolloutConfig {
                max_steps,
                ..RolloutConfig::default()
            };
            let start = plant.initial_state(plant.config.open_pose, &obj);
            let trace = rollout(&net, &plant, start, &obj, &cfg).unwrap();
            assert_eq!(trace.len(), max_steps);
            let last = &trace.steps[max_steps - 1].state;
            assert_eq!(trace.verdict, judge_success(&plant, last, &cfg));
        }
    }

    #[test]
    fn rollouts_are_deterministic() {
        let (net, plant, obj) = setup();
        let cfg = RolloutConfig {
            max_steps: 20,
            command_stride: 3,
            ..RolloutConfig::default()
        };
        let (o1, s1) = seeded_start(&plant, &obj, 3, 0.02, 0.1);
        let (o2, s2) = seeded_start(&plant, &obj, 3, 0.02, 0.1);
        let a = rollout(&net, &plant, s1, &o1, &cfg).unwrap();
        let b = rollout(&net, &plant, s2, &o2, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps[1].command, a.steps[2].command);
    }

    #[test]
    fn rejects_bad_labels_and_node_mismatch() {
        let (net, plant, obj) = setup();
        let start = plant.initial_state(plant.config.open_pose, &obj);
        let cfg = RolloutConfig {
            labels: [1.0; LABELS],
            ..RolloutConfig::default()
        };
        assert!(rollout(&net, &plant, start.clone(), &obj, &cfg).is_err());
        let other = Plant::new(&crate::topology::build_default_hand(), PlantConfig::default()).unwrap();
        let s = other.initial_state(other.config.open_pose, &obj);
        assert!(rollout(&net, &other, s, &obj, &RolloutConfig::default()).is_err());
    }

    #[test]
    fn trace_export() {
        let dir = tempfile::tempdir().unwrap();
        let (net, plant, obj) = setup();
        let cfg = RolloutConfig {
            max_steps: 3,
            ..RolloutConfig::default()
        };
        let start = plant.initial_state(plant.config.open_pose, &obj);
        let trace = rollout(&net, &plant, start, &obj, &cfg).unwrap();
        let path = dir.path().join("trace.csv");
        write_trace(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().next().unwrap().ends_with("grip_force,c00,c01,c02,c03,c04,c05,c06,c07,c08,c09,c10,c11,c12,c13,c14,c15"));
        let verdict: Verdict =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.verdict.json")).unwrap()).unwrap();
        assert_eq!(verdict, trace.verdict);
    }
}
