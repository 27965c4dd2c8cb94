//! Trajectory ingestion and preprocessing.
//!
//! Raw trials go through static-end trimming, a 10-sample moving average
//! over the window `[t−5, t+4]`, and index downsampling to a fixed length.
//! Processed trials then yield `(record_t, joints_{t+horizon})` pairs, with
//! whole trials assigned to the train or validation side.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, AUX_INPUT, DEFAULT_HORIZON, JOINTS, LABELS, TACTILE_AXES};
use crate::tensor::Tensor;

pub const DEFAULT_TARGET_LENGTH: usize = 330;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.70;
pub const DEFAULT_VELOCITY_EPS: f64 = 1e-4;
pub const SMOOTHING_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub joints: [f64; JOINTS],
    /// `nodes×3`, node-major.
    pub tactile: Vec<f64>,
    pub labels: [f64; LABELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub object_name: String,
    pub records: Vec<TrajectoryRecord>,
    /// Set once the moving average has been applied.
    #[serde(default)]
    pub smoothed: bool,
}

/// One-of-two encoding in the order light, heavy, hard, soft,
/// non-slippery, slippery.
pub fn encode_labels(heavy: bool, soft: bool, slippery: bool) -> [f64; LABELS] {
    let bit = |b: bool| if b { 1.0 } else { 0.0 };
    [
        bit(!heavy),
        bit(heavy),
        bit(!soft),
        bit(soft),
        bit(!slippery),
        bit(slippery),
    ]
}

/// Checks that exactly one label of each pair is set.
pub fn validate_labels(labels: &[f64]) -> Result<()> {
    let ok = labels.len() == LABELS
        && labels.chunks(2).all(|pair| {
            matches!((pair[0], pair[1]), (a, b) if (a == 1.0 && b == 0.0) || (a == 0.0 && b == 1.0))
        });
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "labels must hold one set bit per property pair, got {labels:?}"
        )))
    }
}

impl Trial {
    pub fn new(object_name: impl Into<String>, records: Vec<TrajectoryRecord>) -> Result<Self> {
        let trial = Self {
            object_name: object_name.into(),
            records,
            smoothed: false,
        };
        trial.validate()?;
        Ok(trial)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.records.first().map_or(0, |r| r.tactile.len() / TACTILE_AXES)
    }

    pub fn labels(&self) -> Option<[f64; LABELS]> {
        self.records.first().map(|r| r.labels)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.node_count();
        for (i, r) in self.records.iter().enumerate() {
            if i > 0 && r.t <= self.records[i - 1].t {
                return Err(Error::Dataset(format!(
                    "{}: time index not increasing at record {i}",
                    self.object_name
                )));
            }
            if r.tactile.len() != n * TACTILE_AXES || n == 0 {
                return Err(Error::Dataset(format!(
                    "{}: record {i} has {} tactile values",
                    self.object_name,
                    r.tactile.len()
                )));
            }
            validate_labels(&r.labels)
                .map_err(|e| Error::Dataset(format!("{}: record {i}: {e}", self.object_name)))?;
            let finite = r.joints.iter().chain(&r.tactile).all(|v| v.is_finite());
            if !finite {
                return Err(Error::Dataset(format!(
                    "{}: record {i} holds a non-finite value",
                    self.object_name
                )));
            }
        }
        Ok(())
    }

    fn step_velocity(&self, i: usize) -> f64 {
        let (a, b) = (&self.records[i - 1].joints, &self.records[i].joints);
        a.iter().zip(b).map(|(x, y)| (y - x).abs()).fold(0.0, f64::max)
    }
}

/// Drops the leading and trailing runs of records whose joint speed (max
/// absolute change from the previous record; the first record borrows its
/// successor's) stays below `velocity_eps`.
pub fn trim_static(trial: &Trial, velocity_eps: f64) -> Result<Trial> {
    if trial.is_empty() {
        return Err(Error::Dataset(format!("{}: empty trial", trial.object_name)));
    }
    let len = trial.len();
    let moving = |i: usize| -> bool {
        if len < 2 {
            return false;
        }
        let v = if i == 0 { trial.step_velocity(1) } else { trial.step_velocity(i) };
        v >= velocity_eps
    };
    let first = (0..len).find(|&i| moving(i));
    let Some(first) = first else {
        return Err(Error::Dataset(format!("{}: no motion detected", trial.object_name)));
    };
    let last = (0..len).rev().find(|&i| moving(i)).expect("a moving record exists");
    Ok(Trial {
        object_name: trial.object_name.clone(),
        records: trial.records[first..=last].to_vec(),
        smoothed: trial.smoothed,
    })
}

/// Replaces every joint and tactile channel by its mean over the window
/// `[t−5, t+4]`, clipped at the ends. Labels are untouched.
pub fn smooth(trial: &Trial) -> Result<Trial> {
    if trial.smoothed {
        return Err(Error::Dataset(format!("{}: already smoothed", trial.object_name)));
    }
    let len = trial.len();
    if len < SMOOTHING_WINDOW {
        return Err(Error::Dataset(format!(
            "{}: smoothing needs at least {SMOOTHING_WINDOW} records, got {len}",
            trial.object_name
        )));
    }
    let before = SMOOTHING_WINDOW / 2;
    let after = SMOOTHING_WINDOW - before - 1;
    let window = |t: usize| (t.saturating_sub(before), (t + after).min(len - 1));

    let channels = JOINTS + trial.records[0].tactile.len();
    let value = |r: &TrajectoryRecord, c: usize| {
        if c < JOINTS {
            r.joints[c]
        } else {
            r.tactile[c - JOINTS]
        }
    };
    // Prefix sums per channel, record-major.
    let mut prefix = vec![0.0; (len + 1) * channels];
    for (t, r) in trial.records.iter().enumerate() {
        for c in 0..channels {
            prefix[(t + 1) * channels + c] = prefix[t * channels + c] + value(r, c);
        }
    }
    let records = trial
        .records
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let (lo, hi) = window(t);
            let count = (hi - lo + 1) as f64;
            let mean = |c: usize| {
                // Sum directly for short windows at the ends to keep the
                // interior exact for constant signals.
                (prefix[(hi + 1) * channels + c] - prefix[lo * channels + c]) / count
            };
            let mut out = r.clone();
            for (c, j) in out.joints.iter_mut().enumerate() {
                *j = mean(c);
            }
            for (k, s) in out.tactile.iter_mut().enumerate() {
                *s = mean(JOINTS + k);
            }
            out
        })
        .collect();
    Ok(Trial {
        object_name: trial.object_name.clone(),
        records,
        smoothed: true,
    })
}

/// Keeps the records at `round(i·(L−1)/(target−1))`, preserving both ends.
pub fn downsample(trial: &Trial, target_length: usize) -> Result<Trial> {
    let len = trial.len();
    if target_length < 2 {
        return Err(Error::InvalidArgument("target length must be at least 2".into()));
    }
    if len < target_length {
        return Err(Error::Dataset(format!(
            "{}: {len} records, cannot downsample to {target_length}",
            trial.object_name
        )));
    }
    let records = (0..target_length)
        .map(|i| {
            let idx = ((i * (len - 1)) as f64 / (target_length - 1) as f64).round() as usize;
            trial.records[idx].clone()
        })
        .collect();
    Ok(Trial {
        object_name: trial.object_name.clone(),
        records,
        smoothed: trial.smoothed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub velocity_eps: f64,
    pub target_length: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            velocity_eps: DEFAULT_VELOCITY_EPS,
            target_length: DEFAULT_TARGET_LENGTH,
        }
    }
}

/// Trim, smooth and downsample. A trial that is already smoothed skips the
/// first two stages, so the pipeline is idempotent.
pub fn preprocess(trial: &Trial, cfg: &PreprocessConfig) -> Result<Trial> {
    let staged = if trial.smoothed {
        trial.clone()
    } else {
        smooth(&trim_static(trial, cfg.velocity_eps)?)?
    };
    downsample(&staged, cfg.target_length)
}

pub fn preprocess_all(trials: &[Trial], cfg: &PreprocessConfig) -> Result<Vec<Trial>> {
    trials.par_iter().map(|t| preprocess(t, cfg)).collect()
}

/// Flat storage of `(input, target)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pairs {
    node_count: usize,
    tactile: Vec<f64>,
    aux: Vec<f64>,
    target: Vec<f64>,
}

impl Pairs {
    pub fn new(node_count: usize) -> Self {
        Self {
            node_count,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.aux.len() / AUX_INPUT
    }

    pub fn is_empty(&self) -> bool {
        self.aux.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn push(&mut self, input: &TrajectoryRecord, target: &[f64; JOINTS]) {
        debug_assert_eq!(input.tactile.len(), self.node_count * TACTILE_AXES);
        self.tactile.extend_from_slice(&input.tactile);
        self.aux.extend_from_slice(&input.joints);
        self.aux.extend_from_slice(&input.labels);
        self.target.extend_from_slice(target);
    }

    /// Appends every pair `(record_t, joints_{t+horizon})` of `trial`.
    pub fn extend_from_trial(&mut self, trial: &Trial, horizon: usize) -> Result<()> {
        if trial.node_count() != self.node_count {
            return Err(Error::Dataset(format!(
                "{}: {} nodes, expected {}",
                trial.object_name,
                trial.node_count(),
                self.node_count
            )));
        }
        for t in 0..trial.len().saturating_sub(horizon) {
            self.push(&trial.records[t], &trial.records[t + horizon].joints);
        }
        Ok(())
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.target[i * JOINTS..(i + 1) * JOINTS]
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let per = self.node_count * TACTILE_AXES;
        let mut tactile = Vec::with_capacity(indices.len() * per);
        let mut aux = Vec::with_capacity(indices.len() * AUX_INPUT);
        let mut target = Vec::with_capacity(indices.len() * JOINTS);
        for &i in indices {
            tactile.extend_from_slice(&self.tactile[i * per..(i + 1) * per]);
            aux.extend_from_slice(&self.aux[i * AUX_INPUT..(i + 1) * AUX_INPUT]);
            target.extend_from_slice(&self.target[i * JOINTS..(i + 1) * JOINTS]);
        }
        let b = indices.len();
        Batch {
            tactile: Tensor::from_raw(vec![b * self.node_count, TACTILE_AXES], tactile),
            aux: Tensor::from_raw(vec![b, AUX_INPUT], aux),
            target: Some(Tensor::from_raw(vec![b, JOINTS], target)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub trials: Vec<Trial>,
    pub target_length: usize,
    pub horizon: usize,
    pub split_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Pairs,
    pub val: Pairs,
    /// Trial indices on each side.
    pub train_trials: Vec<usize>,
    pub val_trials: Vec<usize>,
}

impl Dataset {
    pub fn new(trials: Vec<Trial>) -> Self {
        Self {
            trials,
            target_length: DEFAULT_TARGET_LENGTH,
            horizon: DEFAULT_HORIZON,
            split_ratio: DEFAULT_SPLIT_RATIO,
        }
    }

    pub fn node_count(&self) -> usize {
        self.trials.first().map_or(0, Trial::node_count)
    }

    /// Number of training trials for the configured ratio.
    pub fn train_trial_count(&self) -> usize {
        (self.split_ratio * self.trials.len() as f64).round() as usize
    }

    /// Assigns whole trials to train/validation after a seeded shuffle.
    pub fn split(&self, seed: u64) -> Result<Split> {
        let n = self.trials.len();
        if n < 2 {
            return Err(Error::Dataset(format!("split needs at least 2 trials, got {n}")));
        }
        let n_train = self.train_trial_count();
        if n_train == 0 || n_train >= n {
            return Err(Error::Dataset(format!(
                "ratio {} leaves one side empty for {n} trials",
                self.split_ratio
            )));
        }
        for t in &self.trials {
            if t.len() != self.target_length {
                return Err(Error::Dataset(format!(
                    "{}: {} records, expected {} after preprocessing",
                    t.object_name,
                    t.len(),
                    self.target_length
                )));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (mut train_trials, mut val_trials) = (order[..n_train].to_vec(), order[n_train..].to_vec());
        train_trials.sort_unstable();
        val_trials.sort_unstable();

        let nodes = self.node_count();
        let mut train = Pairs::new(nodes);
        let mut val = Pairs::new(nodes);
        for &i in &train_trials {
            train.extend_from_trial(&self.trials[i], self.horizon)?;
        }
        for &i in &val_trials {
            val.extend_from_trial(&self.trials[i], self.horizon)?;
        }
        Ok(Split {
            train,
            val,
            train_trials,
            val_trials,
        })
    }
}

fn header(node_count: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..JOINTS).map(|j| format!("j{j:02}")));
    for n in 0..node_count {
        for axis in ["x", "y", "z"] {
            h.push(format!("s{n:03}{axis}"));
        }
    }
    h.extend((0..LABELS).map(|l| format!("l{l}")));
    h
}

/// Column names of a trajectory file for `node_count` sensor nodes.
pub fn trajectory_header(node_count: usize) -> Vec<String> {
    header(node_count)
}

pub fn write_trial_csv(path: impl AsRef<Path>, trial: &Trial) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header(trial.node_count())).map_err(|e| Error::csv(path, e))?;
    for r in &trial.records {
        w.write_record(record_fields(r)).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn record_fields(r: &TrajectoryRecord) -> Vec<String> {
    std::iter::once(r.t.to_string())
        .chain(r.joints.iter().map(f64::to_string))
        .chain(r.tactile.iter().map(f64::to_string))
        .chain(r.labels.iter().map(f64::to_string))
        .collect()
}

/// Reads one trial. The node count is inferred from the header.
pub fn read_trial_csv(path: impl AsRef<Path>) -> Result<Trial> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let head: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let fixed = 1 + JOINTS + LABELS;
    if head.len() < fixed || !(head.len() - fixed).is_multiple_of(TACTILE_AXES) {
        return Err(Error::Dataset(format!("{}: unexpected column count {}", path.display(), head.len())));
    }
    let nodes = (head.len() - fixed) / TACTILE_AXES;
    // Only the leading columns are checked by name; extra trailing columns
    // (trace exports) make the count differ and are rejected above.
    if head != header(nodes) {
        return Err(Error::Dataset(format!("{}: header does not match trajectory layout", path.display())));
    }
    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let field = |i: usize| -> Result<f64> {
            row[i].trim().parse::<f64>().map_err(|_| {
                Error::Dataset(format!(
                    "{}: line {}, column {}: bad number {:?}",
                    path.display(),
                    line + 2,
                    head[i],
                    &row[i]
                ))
            })
        };
        let t = row[0].trim().parse::<usize>().map_err(|_| {
            Error::Dataset(format!("{}: line {}: bad time index", path.display(), line + 2))
        })?;
        let mut joints = [0.0; JOINTS];
        for (j, v) in joints.iter_mut().enumerate() {
            *v = field(1 + j)?;
        }
        let tactile = (0..nodes * TACTILE_AXES)
            .map(|k| field(1 + JOINTS + k))
            .collect::<Result<Vec<_>>>()?;
        let mut labels = [0.0; LABELS];
        for (l, v) in labels.iter_mut().enumerate() {
            *v = field(1 + JOINTS + nodes * TACTILE_AXES + l)?;
        }
        records.push(TrajectoryRecord {
            t,
            joints,
            tactile,
            labels,
        });
    }
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trial")
        .to_string();
    Trial::new(name, records)
}

/// Reads every `*.csv` in `dir`, sorted by file name.
pub fn read_trial_dir(dir: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("{}: no trial CSV files", dir.display())));
    }
    paths.par_iter().map(read_trial_csv).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial_from_joint_series(values: &[f64], nodes: usize) -> Trial {
        let records = values
            .iter()
            .enumerate()
            .map(|(t, &v)| TrajectoryRecord {
                t,
                joints: [v; JOINTS],
                tactile: vec![v * 2.0; nodes * TACTILE_AXES],
                labels: encode_labels(true, false, true),
            })
            .collect();
        Trial::new("fixture", records).unwrap()
    }

    #[test]
    fn label_encoding() {
        assert_eq!(encode_labels(true, true, false), [0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(encode_labels(false, true, true), [1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(encode_labels(true, false, true), [0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert!(validate_labels(&[1.0, 1.0, 0.0, 1.0, 1.0, 0.0]).is_err());
        assert!(validate_labels(&[1.0, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn trims_static_ends() {
        let mut v = vec![0.0; 50];
        v.extend((1..=200).map(|i| i as f64 * 0.01));
        v.extend(vec![2.0; 80]);
        let t = trial_from_joint_series(&v, 2);
        let trimmed = trim_static(&t, 1e-4).unwrap();
        assert_eq!(trimmed.len(), 200);
        assert_eq!(trimmed.records[0].t, 50);

        let moving: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let t = trial_from_joint_series(&moving, 1);
        assert_eq!(trim_static(&t, 1e-4).unwrap(), t);

        let frozen = trial_from_joint_series(&[0.3; 20], 1);
        let err = trim_static(&frozen, 1e-4).unwrap_err();
        assert!(err.to_string().contains("no motion detected"));
    }

    #[test]
    fn smoothing_examples() {
        let constant = trial_from_joint_series(&[0.7; 30], 1);
        let s = smooth(&constant).unwrap();
        for r in &s.records {
            assert!((r.joints[0] - 0.7).abs() < 1e-15);
        }

        let mut impulse = vec![0.0; 100];
        impulse[20] = 1.0;
        let s = smooth(&trial_from_joint_series(&impulse, 1)).unwrap();
        for (t, r) in s.records.iter().enumerate() {
            let want = if (16..=25).contains(&t) { 0.1 } else { 0.0 };
            assert!((r.joints[3] - want).abs() < 1e-15, "t={t}");
            assert!((r.tactile[0] - 2.0 * want).abs() < 1e-15);
        }

        let ramp: Vec<f64> = (0..50).map(f64::from).collect();
        let s = smooth(&trial_from_joint_series(&ramp, 1)).unwrap();
        for t in 5..45 {
            assert!((s.records[t].joints[0] - (t as f64 - 0.5)).abs() < 1e-12);
        }
        assert_eq!(s.records[0].labels, encode_labels(true, false, true));

        assert!(smooth(&s).is_err());
        assert!(smooth(&trial_from_joint_series(&[0.0; 9], 1)).is_err());
    }

    #[test]
    fn downsample_examples() {
        let v: Vec<f64> = (0..660).map(f64::from).collect();
        let t = trial_from_joint_series(&v, 1);
        let d = downsample(&t, 330).unwrap();
        assert_eq!(d.len(), 330);
        assert_eq!(d.records[0].t, 0);
        assert_eq!(d.records[329].t, 659);
        assert!(d.records.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(downsample(&d, 330).unwrap(), d);
        assert!(downsample(&d, 331).is_err());
    }

    #[test]
    fn split_counts() {
        let v: Vec<f64> = (0..330).map(|i| i as f64 * 0.01).collect();
        let trials: Vec<Trial> = (0..10).map(|_| trial_from_joint_series(&v, 2)).collect();
        let ds = Dataset::new(trials.clone());
        let split = ds.split(3).unwrap();
        assert_eq!(split.train_trials.len(), 7);
        assert_eq!(split.train.len(), 2240);
        assert_eq!(split.val.len(), 960);
        let again = ds.split(3).unwrap();
        assert_eq!(again.train_trials, split.train_trials);

        let mut all_train = Dataset::new(trials.clone());
        all_train.split_ratio = 1.0;
        assert!(all_train.split(0).is_err());
        assert!(Dataset::new(trials[..1].to_vec()).split(0).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let v: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let trial = trial_from_joint_series(&v, 3);
        let path = dir.path().join("fixture.csv");
        write_trial_csv(&path, &trial).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,j00,j01"));
        assert!(text.lines().next().unwrap().contains("s002z,l0"));
        assert_eq!(read_trial_csv(&path).unwrap(), trial);
    }

    #[test]
    fn csv_reports_bad_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let trial = trial_from_joint_series(&[0.0, 1.0], 1);
        let path = dir.path().join("bad.csv");
        write_trial_csv(&path, &trial).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replacen(",1,", ",oops,", 1);
        std::fs::write(&path, text).unwrap();
        let err = read_trial_csv(&path).unwrap_err().to_string();
        assert!(err.contains("line") && err.contains("oops"), "{err}");
    }
}
