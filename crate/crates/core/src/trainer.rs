//! Supervised training over `(record_t, joints_{t+horizon})` pairs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::dataset::{Dataset, Pairs};
use crate::error::{Error, Result};
use crate::model::{ModelName, ModelSpec, Network, Scale, JOINTS};
use crate::optim::{adam_step, AdamConfig};
use crate::topology::HandTopology;

pub const METRICS_FILE: &str = "metrics.ndjson";
pub const LAST_CHECKPOINT: &str = "last.json";
pub const BEST_CHECKPOINT: &str = "best.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Write `epoch_NNNN.json` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub model: ModelName,
    pub scale: Scale,
    /// Overrides the architecture implied by `model` and `scale`.
    pub spec: Option<ModelSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            epochs: 200,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            model: ModelName::I,
            scale: Scale::Desk,
            spec: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and epochs must be at least 1".into()));
        }
        self.adam.validate()
    }

    pub fn model_spec(&self, node_count: usize) -> ModelSpec {
        match &self.spec {
            Some(spec) => ModelSpec {
                node_count,
                ..spec.clone()
            },
            None => ModelSpec::for_model(self.model, self.scale, node_count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub final_checkpoint: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|m| m.train_loss)
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().map(|m| m.val_loss)
    }
}

/// A network plus the bookkeeping needed to resume training exactly.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub network: Network,
    pub config: TrainConfig,
    pub epochs_completed: usize,
    pub best_val_loss: Option<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig, topology: &HandTopology) -> Result<Self> {
        config.validate()?;
        let spec = config.model_spec(topology.node_count());
        Ok(Self {
            network: Network::new(spec, topology, config.seed)?,
            config,
            epochs_completed: 0,
            best_val_loss: None,
        })
    }

    /// Continues from a saved state. The checkpoint's seed replaces the
    /// configured one so the shuffle sequence carries on unchanged.
    pub fn from_checkpoint(ckpt: Checkpoint, mut config: TrainConfig, topology: &HandTopology) -> Result<Self> {
        config.validate()?;
        config.seed = ckpt.seed;
        Ok(Self {
            network: Network::from_params(ckpt.params, topology)?,
            config,
            epochs_completed: ckpt.epochs_completed,
            best_val_loss: ckpt.best_val_loss,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.network.params.clone(),
            seed: self.config.seed,
            epochs_completed: self.epochs_completed,
            best_val_loss: self.best_val_loss,
        }
    }

    /// Shuffled pair order for a global epoch index.
    fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One pass over `train`; returns the mean training loss.
    pub fn train_epoch(&mut self, train: &Pairs) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        let epoch = self.epochs_completed;
        let order = self.epoch_order(epoch, train.len());
        let mut total = 0.0;
        for (batch_idx, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch = train.batch(chunk);
            let non_finite = || Error::NonFiniteLoss { epoch, batch: batch_idx };
            let mut tape = Tape::new();
            let loss = match self.network.loss_tape(&mut tape, &batch) {
                Err(Error::NonFiniteActivation { .. }) => return Err(non_finite()),
                other => other?,
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(non_finite());
            }
            let mut params = self.network.params.parameters_mut();
            tape.backward(loss, &mut params)?;
            adam_step(&mut params, &self.config.adam)?;
            total += value * chunk.len() as f64;
        }
        self.epochs_completed += 1;
        Ok(total / train.len() as f64)
    }

    /// Runs `epochs` more epochs. With `out_dir`, appends to the metrics
    /// log and writes scheduled, best and last checkpoints there.
    pub fn train(&mut self, train: &Pairs, val: &Pairs, epochs: usize, out_dir: Option<&Path>) -> Result<TrainReport> {
        if val.is_empty() {
            return Err(Error::Dataset("validation split is empty".into()));
        }
        let mut metrics_log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(METRICS_FILE);
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((path, file))
            }
            None => None,
        };
        let mut report = TrainReport::default();
        for _ in 0..epochs {
            let start = Instant::now();
            let train_loss = self.train_epoch(train)?;
            let val_loss = mean_loss(&self.network, val, self.config.batch_size)?;
            let metrics = EpochMetrics {
                epoch: self.epochs_completed,
                train_loss,
                val_loss,
                seconds: start.elapsed().as_secs_f64(),
            };
            let improved = self.best_val_loss.is_none_or(|b| val_loss < b);
            if improved {
                self.best_val_loss = Some(val_loss);
            }
            if let Some(dir) = out_dir {
                if let Some((path, file)) = metrics_log.as_mut() {
                    let line = serde_json::to_string(&metrics).map_err(|e| Error::json(&*path, e))?;
                    writeln!(file, "{line}").map_err(|e| Error::io(&*path, e))?;
                }
                let every = self.config.checkpoint_every;
                if every > 0 && self.epochs_completed.is_multiple_of(every) {
                    save_checkpoint(dir.join(format!("epoch_{:04}.json", self.epochs_completed)), &self.checkpoint())?;
                }
                if improved {
                    let best = dir.join(BEST_CHECKPOINT);
                    save_checkpoint(&best, &self.checkpoint())?;
                    report.best_checkpoint = Some(best);
                }
            }
            report.epochs.push(metrics);
        }
        if let Some(dir) = out_dir {
            let last = dir.join(LAST_CHECKPOINT);
            save_checkpoint(&last, &self.checkpoint())?;
            report.final_checkpoint = Some(last);
            let best = dir.join(BEST_CHECKPOINT);
            if best.exists() {
                report.best_checkpoint = Some(best);
            }
        }
        Ok(report)
    }
}

/// Splits `ds` under `cfg.seed` and trains a fresh model for `cfg.epochs`.
pub fn train(ds: &Dataset, cfg: &TrainConfig, topology: &HandTopology, out_dir: Option<&Path>) -> Result<TrainReport> {
    if ds.node_count() != topology.node_count() {
        return Err(Error::ShapeMismatch {
            op: "train",
            left: vec![ds.node_count()],
            right: vec![topology.node_count()],
        });
    }
    let split = ds.split(cfg.seed)?;
    let mut trainer = Trainer::new(cfg.clone(), topology)?;
    trainer.train(&split.train, &split.val, cfg.epochs, out_dir)
}

/// Mean squared error of `network` over `pairs`, read-only.
pub fn mean_loss(network: &Network, pairs: &Pairs, batch_size: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Dataset("no pairs to evaluate".into()));
    }
    let indices: Vec<usize> = (0..pairs.len()).collect();
    let mut sse = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = pairs.batch(chunk);
        let pred = network.predict_batch(&batch)?;
        let target = batch.target.as_ref().expect("pairs carry targets");
        sse += pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
    }
    Ok(sse / (pairs.len() * JOINTS) as f64)
}

/// Loss of a saved model on `pairs`.
pub fn evaluate(ckpt: &Checkpoint, topology: &HandTopology, pairs: &Pairs) -> Result<f64> {
    let network = Network::from_params(ckpt.params.clone(), topology)?;
    if pairs.node_count() != topology.node_count() {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            left: vec![pairs.node_count()],
            right: vec![topology.node_count()],
        });
    }
    mean_loss(&network, pairs, 100)
}
