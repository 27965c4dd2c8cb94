//! `tgl`: topology building, synthetic data, training, evaluation,
//! rollouts and analysis from one binary.
//!
//! Every subcommand writes only inside `--out` and finishes by writing
//! `manifest.json` there: the resolved configuration, the seed, SHA-256
//! hashes of the inputs read and of the primary outputs written.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use tgl_core::analysis::{compare_force_series, extract_node_features, pca_node_map, render_svg, write_pca_map};
use tgl_core::dataset::{preprocess_all, read_trial_dir, write_trial_csv, Dataset, Pairs, PreprocessConfig};
use tgl_core::model::ModelName;
use tgl_core::plant::{generate_dataset, GeneratorConfig, Plant, SyntheticObject};
use tgl_core::rollout::{rollout, seeded_start, write_trace, Disturbance, RolloutConfig};
use tgl_core::topology::{build_default_hand, build_toy_hand, load_topology, HandTopology, DEFAULT_HAND_FILE};
use tgl_core::trainer::{evaluate, TrainConfig, Trainer};
use tgl_core::{encode_labels, load_checkpoint, Error, Network};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOY_HAND_FILE: &str = "toy_hand_24.json";
pub const THREADS_ENV: &str = "TGL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tgl", version, about = "Graph-convolutional motion generation from whole-hand tactile sensing")]
struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a hand topology as JSON.
    Topology(TopologyCmd),
    /// Generate synthetic grasp trials as CSV.
    GenData(GenDataCmd),
    /// Train a model on a directory of trials.
    Train(TrainCmd),
    /// Mean loss of a checkpoint on a directory of trials.
    Eval(EvalCmd),
    /// Closed-loop rollout of a checkpoint against the synthetic plant.
    Rollout(RolloutCmd),
    /// Node-feature PCA map of a GCN checkpoint.
    Pca(PcaCmd),
    /// Compare the grip-force series of two rollout traces.
    CompareForces(CompareCmd),
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TopologyArg {
    /// Topology JSON; defaults to the 384-node hand, or the 24-node hand with --toy.
    #[arg(long, conflicts_with = "toy")]
    topology: Option<PathBuf>,
    /// Use the 24-node desk-scale hand.
    #[arg(long)]
    toy: bool,
}

#[derive(Debug, Args)]
struct TopologyCmd {
    /// The 384-node hand (the default when neither flag is given).
    #[arg(long, conflicts_with = "toy")]
    default: bool,
    /// The 24-node desk-scale hand.
    #[arg(long)]
    toy: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct GenDataCmd {
    #[arg(long, default_value_t = 8)]
    objects: usize,
    #[arg(long, default_value_t = 10)]
    trials_per: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    topology: TopologyArg,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct TrainCmd {
    /// Directory of trial CSVs.
    #[arg(long)]
    data: PathBuf,
    /// Training config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelName>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    topology: TopologyArg,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    topology: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct RolloutCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Rollout config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generator config JSON supplying plant and object constants.
    #[arg(long)]
    plant: Option<PathBuf>,
    /// True object properties as heavy,soft,slippery.
    #[arg(long, default_value = "0,0,0")]
    object: String,
    /// Labels fed to the model as heavy,soft,slippery; defaults to the object's.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// step:kind:magnitude, kind one of pull_down, pull_side.
    #[arg(long)]
    disturb: Option<String>,
    /// Seeds the start pose and radius jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    topology: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct PcaCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Step range START..END of each processed trial; defaults to the last 30 steps.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    topology: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct CompareCmd {
    /// Trace CSV with the reference forces.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code: 0 success, 1 invalid input, 2 runtime failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

type Result<T> = tgl_core::Result<T>;

fn dispatch(cli: &Cli) -> Result<()> {
    let verbose = cli.verbose;
    match &cli.command {
        Command::Topology(c) => cmd_topology(c),
        Command::GenData(c) => cmd_gen_data(c, verbose),
        Command::Train(c) => cmd_train(c, verbose),
        Command::Eval(c) => cmd_eval(c),
        Command::Rollout(c) => cmd_rollout(c),
        Command::Pca(c) => cmd_pca(c),
        Command::CompareForces(c) => cmd_compare(c),
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects the manifest while a subcommand runs.
struct Manifest {
    command: &'static str,
    out: PathBuf,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: Option<u64>,
    config: &'a serde_json::Value,
    inputs: &'a BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Manifest {
    fn new(command: &'static str, out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    fn config(&mut self, value: &impl Serialize) {
        self.config = serde_json::to_value(value).expect("configs serialize");
    }

    /// Records an input by file name and content hash, not by path, so the
    /// manifest does not depend on where the inputs live.
    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("input");
        self.inputs.insert(format!("{role}/{name}"), sha256_file(path)?);
        Ok(())
    }

    fn input_dir(&mut self, role: &str, dir: &Path) -> Result<()> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            self.input(role, &f)?;
        }
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    fn finish(self) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            outputs.insert(name.clone(), sha256_file(&self.out.join(name))?);
        }
        let file = ManifestFile {
            tool: "tgl",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            config: &self.config,
            inputs: &self.inputs,
            outputs,
        };
        let path = self.out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&file).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

fn resolve_topology(arg: &TopologyArg, manifest: &mut Manifest) -> Result<HandTopology> {
    match &arg.topology {
        Some(path) => {
            manifest.input("topology", path)?;
            load_topology(path)
        }
        None if arg.toy => Ok(build_toy_hand()),
        None => Ok(build_default_hand()),
    }
}

/// A topology matching `nodes`: the file if given, else a built-in hand.
fn topology_for(path: Option<&Path>, nodes: usize, manifest: &mut Manifest) -> Result<HandTopology> {
    let topo = match path {
        Some(p) => {
            manifest.input("topology", p)?;
            load_topology(p)?
        }
        None if nodes == build_toy_hand().node_count() => build_toy_hand(),
        None if nodes == build_default_hand().node_count() => build_default_hand(),
        None => return Err(invalid(format!("no built-in hand has {nodes} nodes; pass --topology"))),
    };
    if topo.node_count() != nodes {
        return Err(Error::ShapeMismatch {
            op: "topology vs model",
            left: vec![topo.node_count()],
            right: vec![nodes],
        });
    }
    Ok(topo)
}

fn parse_triple(s: &str) -> Result<(bool, bool, bool)> {
    let bits: Vec<bool> = s
        .split(',')
        .map(|p| match p.trim() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(invalid(format!("expected 0/1 in heavy,soft,slippery triple, got {other:?}"))),
        })
        .collect::<Result<_>>()?;
    match bits[..] {
        [h, s, l] => Ok((h, s, l)),
        _ => Err(invalid(format!("expected heavy,soft,slippery triple, got {s:?}"))),
    }
}

fn load_processed(dir: &Path) -> Result<Vec<tgl_core::Trial>> {
    let trials = read_trial_dir(dir)?;
    preprocess_all(&trials, &PreprocessConfig::default())
}

fn cmd_topology(c: &TopologyCmd) -> Result<()> {
    let mut m = Manifest::new("topology", &c.out.out)?;
    let (topo, name) = if c.toy {
        (build_toy_hand(), TOY_HAND_FILE)
    } else {
        (build_default_hand(), DEFAULT_HAND_FILE)
    };
    m.config(&serde_json::json!({ "hand": if c.toy { "toy" } else { "default" } }));
    topo.save(m.path(name))?;
    m.output(name);
    m.finish()
}

fn cmd_gen_data(c: &GenDataCmd, verbose: bool) -> Result<()> {
    let mut m = Manifest::new("gen-data", &c.out.out)?;
    let cfg = match &c.config {
        Some(p) => {
            m.input("config", p)?;
            GeneratorConfig::load(p)?
        }
        None => GeneratorConfig::default(),
    };
    let topo = resolve_topology(&c.topology, &mut m)?;
    let plant = Plant::new(&topo, cfg.plant.clone())?;
    let trials = generate_dataset(&plant, &cfg, c.objects, c.trials_per, c.seed)?;
    for t in &trials {
        let name = format!("{}.csv", t.object_name);
        write_trial_csv(m.path(&name), t)?;
        m.output(name);
    }
    if verbose {
        eprintln!("wrote {} trials to {}", trials.len(), c.out.out.display());
    }
    m.seed = Some(c.seed);
    m.config(&serde_json::json!({
        "generator": cfg,
        "objects": c.objects,
        "trials_per": c.trials_per,
        "nodes": topo.node_count(),
    }));
    m.finish()
}

fn cmd_train(c: &TrainCmd, verbose: bool) -> Result<()> {
    let mut m = Manifest::new("train", &c.out.out)?;
    let mut cfg: TrainConfig = match &c.config {
        Some(p) => {
            m.input("config", p)?;
            read_json(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(model) = c.model {
        cfg.model = model;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = c.epochs {
        cfg.epochs = epochs;
    }
    cfg.validate()?;
    m.input_dir("data", &c.data)?;
    let topo = resolve_topology(&c.topology, &mut m)?;
    let ds = Dataset::new(load_processed(&c.data)?);
    if ds.node_count() != topo.node_count() {
        return Err(Error::ShapeMismatch {
            op: "data vs topology",
            left: vec![ds.node_count()],
            right: vec![topo.node_count()],
        });
    }
    let mut trainer = match &c.resume {
        Some(p) => {
            m.input("resume", p)?;
            Trainer::from_checkpoint(load_checkpoint(p)?, cfg.clone(), &topo)?
        }
        None => Trainer::new(cfg.clone(), &topo)?,
    };
    let split = ds.split(trainer.config.seed)?;
    let report = trainer.train(&split.train, &split.val, cfg.epochs, Some(&c.out.out))?;
    if verbose {
        for e in &report.epochs {
            eprintln!("epoch {} train {:.4e} val {:.4e}", e.epoch, e.train_loss, e.val_loss);
        }
    }
    let mut names: Vec<String> = std::fs::read_dir(&c.out.out)
        .map_err(|e| io_err(&c.out.out, e))?
        .filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok()))
        .filter(|n| n.ends_with(".json") || n.ends_with(".bin"))
        .filter(|n| n != MANIFEST_FILE)
        .collect();
    names.sort();
    names.into_iter().for_each(|n| m.output(n));
    m.seed = Some(trainer.config.seed);
    m.config(&cfg);
    m.finish()
}

fn cmd_eval(c: &EvalCmd) -> Result<()> {
    let mut m = Manifest::new("eval", &c.out.out)?;
    m.input("checkpoint", &c.checkpoint)?;
    m.input_dir("data", &c.data)?;
    let ckpt = load_checkpoint(&c.checkpoint)?;
    let topo = topology_for(c.topology.as_deref(), ckpt.params.spec.node_count, &mut m)?;
    let trials = load_processed(&c.data)?;
    let mut pairs = Pairs::new(topo.node_count());
    for t in &trials {
        pairs.extend_from_trial(t, ckpt.params.spec.horizon)?;
    }
    let loss = evaluate(&ckpt, &topo, &pairs)?;
    let name = "eval.json";
    let body = serde_json::json!({ "loss": loss, "pairs": pairs.len(), "trials": trials.len() });
    let path = m.path(name);
    std::fs::write(&path, serde_json::to_string_pretty(&body).expect("json") + "\n").map_err(|e| io_err(&path, e))?;
    m.output(name);
    m.config(&serde_json::json!({ "horizon": ckpt.params.spec.horizon }));
    m.finish()
}

fn cmd_rollout(c: &RolloutCmd) -> Result<()> {
    let mut m = Manifest::new("rollout", &c.out.out)?;
    let mut cfg: RolloutConfig = match &c.config {
        Some(p) => {
            m.input("config", p)?;
            read_json(p)?
        }
        None => RolloutConfig::default(),
    };
    let gen = match &c.plant {
        Some(p) => {
            m.input("plant", p)?;
            GeneratorConfig::load(p)?
        }
        None => GeneratorConfig::default(),
    };
    let (heavy, soft, slippery) = parse_triple(&c.object)?;
    let obj = SyntheticObject::new(heavy, soft, slippery, &gen.objects);
    cfg.labels = match &c.labels {
        Some(s) => {
            let (h, so, sl) = parse_triple(s)?;
            encode_labels(h, so, sl)
        }
        None => obj.labels(),
    };
    if let Some(n) = c.max_steps {
        cfg.max_steps = n;
    }
    if let Some(d) = &c.disturb {
        cfg.disturbance = Some(d.parse::<Disturbance>()?);
    }
    cfg.validate()?;

    m.input("checkpoint", &c.checkpoint)?;
    let ckpt = load_checkpoint(&c.checkpoint)?;
    let topo = topology_for(c.topology.as_deref(), ckpt.params.spec.node_count, &mut m)?;
    let network = Network::from_params(ckpt.params, &topo)?;
    let plant = Plant::new(&topo, gen.plant.clone())?;
    let (obj, start) = seeded_start(&plant, &obj, c.seed, 0.02, gen.radius_jitter);
    let trace = rollout(&network, &plant, start, &obj, &cfg)?;
    write_trace(m.path("trace.csv"), &trace)?;
    m.output("trace.csv");
    m.output("trace.verdict.json");
    m.seed = Some(c.seed);
    m.config(&serde_json::json!({ "rollout": cfg, "object": obj, "generator": gen }));
    m.finish()?;
    if !trace.verdict.success {
        eprintln!(
            "rollout finished without success: distance {:.3}, angle {:.3}",
            trace.verdict.final_distance, trace.verdict.final_angle
        );
    }
    Ok(())
}

fn cmd_pca(c: &PcaCmd) -> Result<()> {
    let mut m = Manifest::new("pca", &c.out.out)?;
    m.input("checkpoint", &c.checkpoint)?;
    m.input_dir("data", &c.data)?;
    let ckpt = load_checkpoint(&c.checkpoint)?;
    let topo = topology_for(c.topology.as_deref(), ckpt.params.spec.node_count, &mut m)?;
    let network = Network::from_params(ckpt.params, &topo)?;
    let trials = load_processed(&c.data)?;
    let len = trials.iter().map(|t| t.len()).min().unwrap_or(0);
    let window = match &c.window {
        Some(w) => {
            let (a, b) = w
                .split_once("..")
                .ok_or_else(|| invalid(format!("window {w:?} is not START..END")))?;
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| invalid(format!("bad window bound {s:?}")));
            parse(a)?..parse(b)?
        }
        None => len.saturating_sub(30)..len,
    };
    let stack = extract_node_features(&network, &trials, window.clone())?;
    let report = pca_node_map(&stack, &topo)?;
    write_pca_map(m.path("pca_map.csv"), &report, &topo)?;
    let svg = m.path("pca_map.svg");
    std::fs::write(&svg, render_svg(&report, &topo)).map_err(|e| io_err(&svg, e))?;
    let json = m.path("pca_report.json");
    std::fs::write(&json, serde_json::to_string_pretty(&report).expect("json") + "\n").map_err(|e| io_err(&json, e))?;
    for n in ["pca_map.csv", "pca_map.svg", "pca_report.json"] {
        m.output(n);
    }
    m.config(&serde_json::json!({ "window": [window.start, window.end], "feature_len": stack.feature_len() }));
    m.finish()
}

/// The `grip_force` column of a trace CSV.
fn read_grip_forces(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Dataset(format!("{}: empty trace", path.display())))?;
    let col = header
        .split(',')
        .position(|h| h == "grip_force")
        .ok_or_else(|| Error::Dataset(format!("{}: no grip_force column", path.display())))?;
    lines
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .nth(col)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Dataset(format!("{}: line {}: bad grip_force", path.display(), i + 2)))
        })
        .collect()
}

fn cmd_compare(c: &CompareCmd) -> Result<()> {
    let mut m = Manifest::new("compare-forces", &c.out.out)?;
    m.input("a", &c.a)?;
    m.input("b", &c.b)?;
    let a = read_grip_forces(&c.a)?;
    let b = read_grip_forces(&c.b)?;
    let cmp = compare_force_series(&a, &b)?;
    let name = "force_comparison.json";
    let path = m.path(name);
    std::fs::write(&path, serde_json::to_string_pretty(&cmp).expect("json") + "\n").map_err(|e| io_err(&path, e))?;
    m.output(name);
    m.config(&serde_json::json!({ "tie_convention": "ties excluded; 0.5 when all steps tie" }));
    m.finish()
}
