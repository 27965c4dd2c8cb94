//! Synthetic grasp plant and demonstration generator.
//!
//! The plant is a kinematic toy, not a physics model. Each finger's joint
//! vector is projected onto its open→closed direction to give a closure in
//! `[0, 1]`; closure beyond the object's touch point is penetration. Nodes
//! see their finger's penetration scaled by a per-node gain and by how far
//! the object has been drawn toward the palm (deeper segments only touch a
//! lifted object). Enough friction-weighted squeeze holds and lifts the
//! object; too little lets it fall.
//!
//! Joint order is finger-major: thumb 0–3, index 4–7, middle 8–11,
//! little 12–15.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{encode_labels, TrajectoryRecord, Trial};
use crate::error::{Error, Result};
use crate::model::{JOINTS, LABELS, TACTILE_AXES};
use crate::tensor::Tensor;
use crate::topology::{Finger, HandTopology, Segment};

const FINGERS: usize = 4;
const JOINTS_PER_FINGER: usize = JOINTS / FINGERS;

/// Property multipliers shared by every generated object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectConstants {
    pub radius: f64,
    pub mass: f64,
    pub heavy_factor: f64,
    pub stiffness: f64,
    pub soft_factor: f64,
    pub friction: f64,
    pub slippery_factor: f64,
}

impl Default for ObjectConstants {
    fn default() -> Self {
        Self {
            radius: 1.0,
            mass: 1.0,
            heavy_factor: 2.5,
            stiffness: 10.0,
            soft_factor: 0.3,
            friction: 1.0,
            slippery_factor: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObject {
    pub name: String,
    pub heavy: bool,
    pub soft: bool,
    pub slippery: bool,
    pub radius: f64,
    pub stiffness: f64,
    pub friction: f64,
    pub mass_proxy: f64,
}

impl SyntheticObject {
    pub fn new(heavy: bool, soft: bool, slippery: bool, k: &ObjectConstants) -> Self {
        let name = format!(
            "{}-{}-{}",
            if heavy { "heavy" } else { "light" },
            if soft { "soft" } else { "hard" },
            if slippery { "slippery" } else { "grippy" }
        );
        Self {
            name,
            heavy,
            soft,
            slippery,
            radius: k.radius,
            stiffness: k.stiffness * if soft { k.soft_factor } else { 1.0 },
            friction: k.friction * if slippery { k.slippery_factor } else { 1.0 },
            mass_proxy: k.mass * if heavy { k.heavy_factor } else { 1.0 },
        }
    }

    /// The eight property combinations; index bits are heavy, soft,
    /// slippery from high to low.
    pub fn catalog(k: &ObjectConstants) -> Vec<Self> {
        (0..8)
            .map(|i| Self::new(i & 4 != 0, i & 2 != 0, i & 1 != 0, k))
            .collect()
    }

    pub fn labels(&self) -> [f64; LABELS] {
        encode_labels(self.heavy, self.soft, self.slippery)
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub joint_lower: f64,
    pub joint_upper: f64,
    pub open_pose: [f64; JOINTS],
    pub closed_pose: [f64; JOINTS],
    /// Fraction of the command error removed per step, before rate limiting.
    pub tracking_gain: f64,
    /// Largest joint change per step (rad).
    pub rate_limit: f64,
    /// Closure at first contact for an object of unit radius.
    pub touch_closure: f64,
    /// Change of touch closure per unit radius above 1.
    pub touch_radius_slope: f64,
    pub palm_height: f64,
    pub lift_height: f64,
    /// Mean penetration that lifts the object all the way.
    pub full_lift_penetration: f64,
    pub lift_rate: f64,
    pub fall_rate: f64,
    pub gravity: f64,
    /// Per-step tilt multiplier while held.
    pub tilt_decay: f64,
    /// Width of the lift fraction over which a segment comes into contact.
    pub reach_band: f64,
    pub shear_per_mass: f64,
    pub soft_deformation_bound: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        let finger_open = [0.0, 0.1, 0.1, 0.1];
        let finger_closed = [0.1, 1.5, 1.4, 1.3];
        let mut open_pose = [0.0; JOINTS];
        let mut closed_pose = [0.0; JOINTS];
        open_pose[..4].copy_from_slice(&[0.4, 0.1, 0.1, 0.1]);
        closed_pose[..4].copy_from_slice(&[1.4, 0.6, 1.0, 1.2]);
        for f in 1..FINGERS {
            open_pose[f * 4..f * 4 + 4].copy_from_slice(&finger_open);
            closed_pose[f * 4..f * 4 + 4].copy_from_slice(&finger_closed);
        }
        Self {
            joint_lower: -0.3,
            joint_upper: 1.7,
            open_pose,
            closed_pose,
            tracking_gain: 0.2,
            rate_limit: 0.05,
            touch_closure: 0.45,
            touch_radius_slope: -0.3,
            palm_height: 5.0,
            lift_height: 4.0,
            full_lift_penetration: 0.15,
            lift_rate: 0.05,
            fall_rate: 0.1,
            gravity: 0.4,
            tilt_decay: 0.97,
            reach_band: 0.3,
            shear_per_mass: 0.3,
            soft_deformation_bound: 0.35,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("plant config: {m}")));
        if !(self.joint_lower < self.joint_upper) {
            return bad("joint_lower must be below joint_upper");
        }
        let range: f64 = self
            .open_pose
            .iter()
            .zip(&self.closed_pose)
            .map(|(o, c)| (c - o) * (c - o))
            .sum();
        if range == 0.0 {
            return bad("open and closed poses coincide");
        }
        for f in 0..FINGERS {
            let r: f64 = (f * 4..f * 4 + 4)
                .map(|j| (self.closed_pose[j] - self.open_pose[j]).powi(2))
                .sum();
            if r == 0.0 {
                return bad("every finger needs distinct open and closed poses");
            }
        }
        let positive = [
            self.tracking_gain,
            self.rate_limit,
            self.palm_height,
            self.lift_height,
            self.full_lift_penetration,
            self.lift_rate,
            self.fall_rate,
            self.reach_band,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.lift_height > self.palm_height {
            return bad("rates, heights and bands must be positive with lift_height ≤ palm_height");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub joints: [f64; JOINTS],
    pub object_height: f64,
    /// Degrees, in `[0, 180)`.
    pub object_tilt: f64,
    /// Per-node penetration depth.
    pub contact_map: Vec<f64>,
    /// Command components clamped to the joint box on the last step.
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    PullDown,
    PullSide,
}

impl std::str::FromStr for DisturbanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pull_down" => Ok(Self::PullDown),
            "pull_side" => Ok(Self::PullSide),
            other => Err(Error::InvalidArgument(format!(
                "unknown disturbance {other:?}, expected pull_down or pull_side"
            ))),
        }
    }
}

impl std::fmt::Display for DisturbanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PullDown => "pull_down",
            Self::PullSide => "pull_side",
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct NodeInfo {
    /// Finger index in joint-block order; `None` for palm nodes.
    finger: Option<usize>,
    depth: f64,
    gain: f64,
    shear_dir: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub config: PlantConfig,
    nodes: Vec<NodeInfo>,
}

impl Plant {
    pub fn new(topology: &HandTopology, config: PlantConfig) -> Result<Self> {
        config.validate()?;
        // Patch extents per (finger, segment), for the centre-weighted gain.
        let key = |n: &crate::topology::SensorNode| (n.finger, n.segment);
        let mut extents: Vec<((Finger, Segment), [usize; 4])> = Vec::new();
        for n in topology.nodes() {
            match extents.iter_mut().find(|(k, _)| *k == key(n)) {
                Some((_, e)) => {
                    e[0] = e[0].min(n.patch_row);
                    e[1] = e[1].max(n.patch_row);
                    e[2] = e[2].min(n.patch_col);
                    e[3] = e[3].max(n.patch_col);
                }
                None => extents.push((key(n), [n.patch_row, n.patch_row, n.patch_col, n.patch_col])),
            }
        }
        let nodes = topology
            .nodes()
            .iter()
            .map(|n| {
                let e = extents.iter().find(|(k, _)| *k == key(n)).expect("extent recorded").1;
                let offset = |v: usize, lo: usize, hi: usize| {
                    let half = (hi - lo) as f64 / 2.0;
                    if half == 0.0 {
                        0.0
                    } else {
                        (v as f64 - (lo as f64 + half)).abs() / half
                    }
                };
                let r = offset(n.patch_row, e[0], e[1]).max(offset(n.patch_col, e[2], e[3]));
                let angle = std::f64::consts::TAU * (n.id as f64 * 0.618_033_988_749_895).fract();
                NodeInfo {
                    finger: n.finger.joint_block(),
                    depth: n.segment.depth(),
                    gain: 1.0 - 0.5 * r,
                    shear_dir: (angle.cos(), angle.sin()),
                }
            })
            .collect();
        Ok(Self { config, nodes })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Joint vector at closure `c` on every finger.
    pub fn pose_for_closure(&self, c: f64) -> [f64; JOINTS] {
        let mut q = [0.0; JOINTS];
        for (j, v) in q.iter_mut().enumerate() {
            let (o, k) = (self.config.open_pose[j], self.config.closed_pose[j]);
            *v = o + c * (k - o);
        }
        q
    }

    /// Closure of each finger: projection of the joint offset onto the
    /// open→closed direction.
    pub fn finger_closure(&self, joints: &[f64; JOINTS]) -> [f64; FINGERS] {
        let mut out = [0.0; FINGERS];
        for (f, c) in out.iter_mut().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for j in f * JOINTS_PER_FINGER..(f + 1) * JOINTS_PER_FINGER {
                let dir = self.config.closed_pose[j] - self.config.open_pose[j];
                num += (joints[j] - self.config.open_pose[j]) * dir;
                den += dir * dir;
            }
            *c = num / den;
        }
        out
    }

    pub fn touch_closure(&self, obj: &SyntheticObject) -> f64 {
        (self.config.touch_closure + self.config.touch_radius_slope * (obj.radius - 1.0)).clamp(0.05, 0.95)
    }

    pub fn penetration(&self, joints: &[f64; JOINTS], obj: &SyntheticObject) -> [f64; FINGERS] {
        let touch = self.touch_closure(obj);
        self.finger_closure(joints).map(|c| (c - touch).max(0.0))
    }

    /// Largest finger penetration into the object.
    pub fn deformation(&self, state: &PlantState, obj: &SyntheticObject) -> f64 {
        self.penetration(&state.joints, obj).into_iter().fold(0.0, f64::max)
    }

    pub fn exceeds_soft_bound(&self, state: &PlantState, obj: &SyntheticObject) -> bool {
        obj.soft && self.deformation(state, obj) > self.config.soft_deformation_bound
    }

    pub fn palm_distance(&self, state: &PlantState) -> f64 {
        self.config.palm_height - state.object_height
    }

    fn contact_map(&self, joints: &[f64; JOINTS], height: f64, obj: &SyntheticObject) -> Vec<f64> {
        let p = self.penetration(joints, obj);
        let p_palm = p.iter().sum::<f64>() / FINGERS as f64;
        let lift = height / self.config.lift_height;
        let band = self.config.reach_band;
        self.nodes
            .iter()
            .map(|n| {
                let pen = n.finger.map_or(p_palm, |f| p[f]);
                let reach = ((lift + band - n.depth) / band).clamp(0.0, 1.0);
                pen * reach * n.gain
            })
            .collect()
    }

    /// Tactile readings, `nodes×3`, for the state's contact map.
    pub fn tactile(&self, state: &PlantState, obj: &SyntheticObject) -> Tensor {
        let shear = obj.friction * (self.config.shear_per_mass * obj.mass_proxy).min(1.0);
        let mut data = Vec::with_capacity(self.nodes.len() * TACTILE_AXES);
        for (n, &d) in self.nodes.iter().zip(&state.contact_map) {
            let normal = obj.stiffness * d;
            data.extend([normal * shear * n.shear_dir.0, normal * shear * n.shear_dir.1, normal]);
        }
        Tensor::from_raw(vec![self.nodes.len(), TACTILE_AXES], data)
    }

    pub fn initial_state(&self, joints: [f64; JOINTS], obj: &SyntheticObject) -> PlantState {
        PlantState {
            joints,
            object_height: 0.0,
            object_tilt: 0.0,
            contact_map: self.contact_map(&joints, 0.0, obj),
            clamped: 0,
        }
    }

    /// Advances one step toward `command`. Commands outside the joint box
    /// are clamped and counted in `clamped`.
    pub fn step(
        &self,
        state: &PlantState,
        command: &[f64],
        obj: &SyntheticObject,
    ) -> Result<(PlantState, Tensor)> {
        if command.len() != JOINTS {
            return Err(Error::ShapeMismatch {
                op: "plant_step",
                left: vec![command.len()],
                right: vec![JOINTS],
            });
        }
        if let Some(index) = command.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let cfg = &self.config;
        let mut joints = state.joints;
        let mut clamped = 0;
        for (q, &c) in joints.iter_mut().zip(command) {
            let target = c.clamp(cfg.joint_lower, cfg.joint_upper);
            if target != c {
                clamped += 1;
            }
            *q += (cfg.tracking_gain * (target - *q)).clamp(-cfg.rate_limit, cfg.rate_limit);
        }

        let p = self.penetration(&joints, obj);
        let opposed = p[0] > 0.0 && p[1..].iter().any(|&v| v > 0.0);
        let support = obj.friction * obj.stiffness * p.iter().sum::<f64>();
        let held = opposed && support >= obj.mass_proxy * cfg.gravity;
        let (height, tilt) = if held {
            let p_mean = p.iter().sum::<f64>() / FINGERS as f64;
            let target = cfg.lift_height * (p_mean / cfg.full_lift_penetration).min(1.0);
            let dh = (target - state.object_height).clamp(-cfg.lift_rate, cfg.lift_rate);
            (state.object_height + dh, state.object_tilt * cfg.tilt_decay)
        } else {
            ((state.object_height - cfg.fall_rate).max(0.0), state.object_tilt)
        };
        let next = PlantState {
            joints,
            object_height: height,
            object_tilt: tilt,
            contact_map: self.contact_map(&joints, height, obj),
            clamped,
        };
        let tactile = self.tactile(&next, obj);
        Ok((next, tactile))
    }

    /// An external pull on the object. `magnitude` is in height units for
    /// `PullDown` and degrees for `PullSide`.
    pub fn apply_disturbance(
        &self,
        state: &PlantState,
        kind: DisturbanceKind,
        magnitude: f64,
        obj: &SyntheticObject,
    ) -> Result<PlantState> {
        if !(magnitude > 0.0 && magnitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "disturbance magnitude must be positive, got {magnitude}"
            )));
        }
        let mut next = state.clone();
        match kind {
            DisturbanceKind::PullDown => next.object_height = (state.object_height - magnitude).max(0.0),
            DisturbanceKind::PullSide => next.object_tilt = (state.object_tilt + magnitude).min(179.9),
        }
        next.contact_map = self.contact_map(&next.joints, next.object_height, obj);
        Ok(next)
    }
}

/// Everything the demonstration generator needs, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub objects: ObjectConstants,
    pub plant: PlantConfig,
    /// Raw samples per trial, before preprocessing.
    pub trial_length: usize,
    /// Range of the static lead-in, as a fraction of the trial.
    pub prefix_fraction: [f64; 2],
    pub suffix_fraction: [f64; 2],
    /// Logistic steepness over the normalized closing interval.
    pub sigmoid_steepness: f64,
    /// Per-joint shift of the closing interval, fraction of its length.
    pub phase_jitter: f64,
    /// Per-joint closure offset (fraction of the open→closed range).
    pub joint_jitter: f64,
    /// Closure beyond first contact for a light, hard, grippy object.
    pub base_squeeze: f64,
    pub heavy_squeeze: f64,
    pub soft_squeeze: f64,
    pub slippery_squeeze: f64,
    pub squeeze_jitter: f64,
    /// Relative radius jitter per trial.
    pub radius_jitter: f64,
    /// Relative multiplicative noise on contacting tactile readings.
    pub tactile_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            objects: ObjectConstants::default(),
            plant: PlantConfig::default(),
            trial_length: 450,
            prefix_fraction: [0.06, 0.12],
            suffix_fraction: [0.06, 0.12],
            sigmoid_steepness: 8.0,
            phase_jitter: 0.03,
            joint_jitter: 0.03,
            base_squeeze: 0.30,
            heavy_squeeze: 0.08,
            soft_squeeze: -0.12,
            slippery_squeeze: 0.05,
            squeeze_jitter: 0.02,
            radius_jitter: 0.1,
            tactile_noise: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if self.trial_length < 50 {
            return Err(Error::InvalidArgument(format!(
                "trial length must be at least 50, got {}",
                self.trial_length
            )));
        }
        let frac_ok = |r: [f64; 2]| 0.0 <= r[0] && r[0] <= r[1] && r[1] < 0.4;
        if !frac_ok(self.prefix_fraction) || !frac_ok(self.suffix_fraction) {
            return Err(Error::InvalidArgument("prefix/suffix fractions must be ordered within [0, 0.4)".into()));
        }
        if !(self.sigmoid_steepness > 0.0) || !(0.0..1.0).contains(&self.tactile_noise) {
            return Err(Error::InvalidArgument("sigmoid steepness must be positive, tactile noise in [0, 1)".into()));
        }
        Ok(())
    }

    /// Closure the demonstrator aims for, before per-trial jitter.
    pub fn target_closure(&self, plant: &Plant, obj: &SyntheticObject) -> f64 {
        let bit = |b: bool, v: f64| if b { v } else { 0.0 };
        plant.touch_closure(obj)
            + self.base_squeeze
            + bit(obj.heavy, self.heavy_squeeze)
            + bit(obj.soft, self.soft_squeeze)
            + bit(obj.slippery, self.slippery_squeeze)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One scripted grasp of `obj`: static lead-in, logistic closure to the
/// property-dependent squeeze with per-joint phase and amplitude jitter,
/// static hold. Recorded tactile carries multiplicative noise.
pub fn generate_trial(
    plant: &Plant,
    obj: &SyntheticObject,
    seed: u64,
    length: usize,
    cfg: &GeneratorConfig,
) -> Result<Trial> {
    if length < 50 {
        return Err(Error::InvalidArgument(format!("trial length must be at least 50, got {length}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |scale: f64| if scale > 0.0 { rng.gen_range(-scale..=scale) } else { 0.0 };

    let obj = obj.clone().with_radius(obj.radius * (1.0 + jitter(cfg.radius_jitter)));
    let prefix = (length as f64 * (cfg.prefix_fraction[0] + (cfg.prefix_fraction[1] - cfg.prefix_fraction[0]) * (0.5 + jitter(0.5)))).round();
    let suffix = (length as f64 * (cfg.suffix_fraction[0] + (cfg.suffix_fraction[1] - cfg.suffix_fraction[0]) * (0.5 + jitter(0.5)))).round();
    let (t0, t1) = (prefix, length as f64 - suffix);
    let squeeze = cfg.target_closure(plant, &obj) + jitter(cfg.squeeze_jitter);
    let phases: Vec<f64> = (0..JOINTS).map(|_| jitter(cfg.phase_jitter)).collect();
    let amplitudes: Vec<f64> = (0..JOINTS).map(|_| squeeze + jitter(cfg.joint_jitter)).collect();
    let noise: Vec<f64> = (0..length * plant.node_count()).map(|_| jitter(cfg.tactile_noise)).collect();

    let k = cfg.sigmoid_steepness;
    let (lo, hi) = (logistic(-k / 2.0), logistic(k / 2.0));
    let ramp = |t: f64, phase: f64| -> f64 {
        let u = ((t - t0) / (t1 - t0) - phase).clamp(0.0, 1.0);
        (logistic(k * (u - 0.5)) - lo) / (hi - lo)
    };

    let labels = obj.labels();
    let mut state = plant.initial_state(plant.config.open_pose, &obj);
    let mut records = Vec::with_capacity(length);
    let mut command = [0.0; JOINTS];
    let nodes = plant.node_count();
    for t in 0..length {
        for (j, c) in command.iter_mut().enumerate() {
            let (o, cl) = (plant.config.open_pose[j], plant.config.closed_pose[j]);
            *c = o + ramp(t as f64, phases[j]) * amplitudes[j] * (cl - o);
        }
        let (next, tactile) = plant.step(&state, &command, &obj)?;
        state = next;
        let mut tactile = tactile.into_data();
        for (v, n) in tactile.iter_mut().zip(noise[t * nodes..].iter().flat_map(|n| [*n; TACTILE_AXES])) {
            *v *= 1.0 + n;
        }
        records.push(TrajectoryRecord {
            t,
            joints: state.joints,
            tactile,
            labels,
        });
    }
    Trial::new(obj.name.clone(), records)
}

/// Seed of trial `trial` of object `object` under a dataset seed.
pub fn trial_seed(seed: u64, object: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((object as u64) << 32) | trial as u64);
    rng.gen()
}

/// `trials_per` demonstrations of each of the first `objects` catalog
/// entries, object-major.
pub fn generate_dataset(
    plant: &Plant,
    cfg: &GeneratorConfig,
    objects: usize,
    trials_per: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    if objects == 0 || objects > 8 || trials_per == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 1–8 objects and at least one trial each, got {objects}×{trials_per}"
        )));
    }
    let catalog = SyntheticObject::catalog(&cfg.objects);
    let jobs: Vec<(usize, usize)> = (0..objects).flat_map(|o| (0..trials_per).map(move |t| (o, t))).collect();
    jobs.par_iter()
        .map(|&(o, t)| {
            let mut trial = generate_trial(plant, &catalog[o], trial_seed(seed, o, t), cfg.trial_length, cfg)?;
            trial.object_name = format!("{}_{t:02}", catalog[o].name);
            Ok(trial)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_toy_hand;

    fn toy_plant() -> Plant {
        Plant::new(&build_toy_hand(), PlantConfig::default()).unwrap()
    }

    fn default_object() -> SyntheticObject {
        SyntheticObject::new(false, false, false, &ObjectConstants::default())
    }

    #[test]
    fn object_constants_apply() {
        let k = ObjectConstants::default();
        let o = SyntheticObject::new(true, true, true, &k);
        assert_eq!(o.mass_proxy, 2.5);
        assert_eq!(o.stiffness, 3.0);
        assert_eq!(o.friction, 0.4);
        assert_eq!(o.labels(), [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(SyntheticObject::catalog(&k).len(), 8);
    }

    #[test]
    fn closure_of_poses() {
        let plant = toy_plant();
        let c = plant.finger_closure(&plant.pose_for_closure(0.3));
        for v in c {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn open_command_keeps_object_still() {
        let plant = toy_plant();
        let obj = default_object();
        let mut state = plant.initial_state(plant.config.open_pose, &obj);
        for _ in 0..50 {
            let (next, tactile) = plant.step(&state, &plant.config.open_pose, &obj).unwrap();
            assert!(tactile.data().iter().all(|&v| v == 0.0));
            state = next;
        }
        assert_eq!(state.object_height, 0.0);
    }

    #[test]
    fn full_closure_lifts_default_object() {
        let plant = toy_plant();
        let obj = default_object();
        let mut state = plant.initial_state(plant.config.open_pose, &obj);
        let cmd = plant.pose_for_closure(1.0);
        for _ in 0..300 {
            state = plant.step(&state, &cmd, &obj).unwrap().0;
        }
        assert!(plant.palm_distance(&state) < 2.0, "height {}", state.object_height);
        assert!(state.object_tilt < 15.0);
    }

    #[test]
    fn squeezing_soft_object_exceeds_bound() {
        let plant = toy_plant();
        let soft = SyntheticObject::new(false, true, false, &ObjectConstants::default());
        let mut state = plant.initial_state(plant.config.open_pose, &soft);
        let cmd = plant.pose_for_closure(1.0);
        for _ in 0..300 {
            state = plant.step(&state, &cmd, &soft).unwrap().0;
        }
        assert!(plant.exceeds_soft_bound(&state, &soft));
    }

    #[test]
    fn commands_are_clamped_and_counted() {
        let plant = toy_plant();
        let obj = default_object();
        let state = plant.initial_state(plant.config.open_pose, &obj);
        let mut cmd = plant.config.open_pose;
        cmd[3] = 9.0;
        cmd[7] = -9.0;
        let (next, _) = plant.step(&state, &cmd, &obj).unwrap();
        assert_eq!(next.clamped, 2);
        assert!((next.joints[3] - state.joints[3] - 0.05).abs() < 1e-12);
        let mut nan = cmd;
        nan[0] = f64::NAN;
        assert!(plant.step(&state, &nan, &obj).is_err());
    }

    fn grasped(plant: &Plant, obj: &SyntheticObject) -> PlantState {
        let mut state = plant.initial_state(plant.config.open_pose, obj);
        let cmd = plant.pose_for_closure(0.8);
        for _ in 0..300 {
            state = plant.step(&state, &cmd, obj).unwrap().0;
        }
        state
    }

    #[test]
    fn disturbances() {
        let plant = toy_plant();
        let obj = default_object();
        let state = grasped(&plant, &obj);
        let before: f64 = plant.tactile(&state, &obj).data().iter().map(|v| v.abs()).sum();

        let down = plant.apply_disturbance(&state, DisturbanceKind::PullDown, 2.0, &obj).unwrap();
        assert!((state.object_height - down.object_height - 2.0).abs() < 1e-12);
        let after: f64 = plant.tactile(&down, &obj).data().iter().map(|v| v.abs()).sum();
        assert!(after < before && after > 0.0);

        let side = plant.apply_disturbance(&state, DisturbanceKind::PullSide, 20.0, &obj).unwrap();
        assert_eq!(side.object_height, state.object_height);
        assert!((side.object_tilt - state.object_tilt - 20.0).abs() < 1e-12);

        assert!(plant.apply_disturbance(&state, DisturbanceKind::PullDown, 0.0, &obj).is_err());
    }

    #[test]
    fn stiffer_objects_press_harder() {
        let plant = toy_plant();
        let k = ObjectConstants::default();
        let hard = SyntheticObject::new(false, false, false, &k);
        let soft = SyntheticObject::new(false, true, false, &k);
        let state = grasped(&plant, &hard);
        let th = plant.tactile(&state, &hard);
        let ts = plant.tactile(&state, &soft);
        for i in 0..plant.node_count() {
            assert!(th.get(i, 2) >= ts.get(i, 2));
        }
    }

    #[test]
    fn generator_is_deterministic_and_label_sensitive() {
        let plant = toy_plant();
        let cfg = GeneratorConfig::default();
        let k = ObjectConstants::default();
        let light = SyntheticObject::new(false, false, false, &k);
        let heavy = SyntheticObject::new(true, false, false, &k);
        let a = generate_trial(&plant, &light, 5, 200, &cfg).unwrap();
        assert_eq!(a, generate_trial(&plant, &light, 5, 200, &cfg).unwrap());
        let total = |t: &Trial| -> f64 { t.records.iter().flat_map(|r| &r.tactile).map(|v| v.abs()).sum() };
        let h = generate_trial(&plant, &heavy, 5, 200, &cfg).unwrap();
        assert!(total(&h) > total(&a));
        assert_eq!(h.labels().unwrap(), [0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn contact_starts_after_motion() {
        let plant = toy_plant();
        let cfg = GeneratorConfig::default();
        let trial = generate_trial(&plant, &default_object(), 1, 300, &cfg).unwrap();
        let first_move = trial
            .records
            .windows(2)
            .position(|w| w[0].joints != w[1].joints)
            .unwrap();
        let first_touch = trial
            .records
            .iter()
            .position(|r| r.tactile.iter().any(|&v| v != 0.0))
            .unwrap();
        assert!(first_touch > first_move + 10);
        assert!(trial.records[first_move + 5].tactile.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dataset_generation() {
        let plant = toy_plant();
        let cfg = GeneratorConfig {
            trial_length: 60,
            ..GeneratorConfig::default()
        };
        let ds = generate_dataset(&plant, &cfg, 3, 2, 7).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds[0].object_name, "light-hard-grippy_00");
        assert_eq!(ds[5].object_name, "light-soft-grippy_01");
        assert_ne!(ds[0].records, ds[1].records);
        assert!(generate_dataset(&plant, &cfg, 9, 1, 0).is_err());
    }
}
