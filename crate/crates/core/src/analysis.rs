//! Node-feature PCA maps and grip-force comparisons.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::dataset::{Pairs, Trial};
use crate::error::{Error, Result};
use crate::model::{ModelKind, Network};
use crate::pca::pca;
use crate::rollout::RolloutTrace;
use crate::tensor::Tensor;
use crate::topology::{Finger, HandTopology, Segment};

/// Last-conv-layer features, one row per node. Columns run trial-major,
/// then time step, then filter.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureStack {
    pub features: Tensor,
}

impl NodeFeatureStack {
    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_len(&self) -> usize {
        self.features.cols()
    }
}

pub fn extract_node_features(network: &Network, trials: &[Trial], window: Range<usize>) -> Result<NodeFeatureStack> {
    let spec = network.spec();
    if spec.kind != ModelKind::Gcn {
        return Err(Error::InvalidArgument("no conv features: model is an MLP".into()));
    }
    if window.is_empty() {
        return Err(Error::InvalidArgument("feature window is empty".into()));
    }
    if trials.is_empty() {
        return Err(Error::InvalidArgument("no trials to extract features from".into()));
    }
    let n = spec.node_count;
    let channels = *spec.conv_channels.last().expect("GCN has conv layers");
    let steps = window.len();

    let per_trial: Vec<Tensor> = trials
        .par_iter()
        .map(|trial| -> Result<Tensor> {
            if window.end > trial.len() {
                return Err(Error::InvalidArgument(format!(
                    "{}: window {window:?} exceeds {} records",
                    trial.object_name,
                    trial.len()
                )));
            }
            let mut pairs = Pairs::new(trial.node_count());
            for r in &trial.records[window.clone()] {
                pairs.push(r, &r.joints);
            }
            let indices: Vec<usize> = (0..steps).collect();
            let batch = pairs.batch(&indices);
            let mut tape = Tape::new();
            let out = network.forward_tape(&mut tape, &batch, false)?;
            Ok(tape.value(out.last_conv.expect("GCN has conv layers")).clone())
        })
        .collect::<Result<_>>()?;

    // Each per-trial tensor is (steps·n)×channels, step-major.
    let width = trials.len() * steps * channels;
    let mut data = vec![0.0; n * width];
    for (k, feats) in per_trial.iter().enumerate() {
        for s in 0..steps {
            for node in 0..n {
                let src = feats.row(s * n + node);
                let dst = node * width + (k * steps + s) * channels;
                data[dst..dst + channels].copy_from_slice(src);
            }
        }
    }
    Ok(NodeFeatureStack {
        features: Tensor::new(vec![n, width], data)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCentroid {
    pub finger: Finger,
    pub segment: Segment,
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// `nodes×2` principal-component coordinates.
    pub coordinates: Vec<[f64; 2]>,
    pub explained_variance: [f64; 2],
    pub centroids: Vec<SegmentCentroid>,
    /// Mean silhouette over (finger, segment) labels; `None` when undefined.
    pub silhouette: Option<f64>,
    pub zero_variance: bool,
}

/// Mean silhouette of `points` under `labels`. Points in singleton
/// clusters score 0. `None` with fewer than two clusters or when every
/// point coincides.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> Option<f64> {
    assert_eq!(points.len(), labels.len());
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return None;
    }
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let li = labels[i];
        if sizes[li] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (q, &lj) in points.iter().zip(labels) {
            sums[lj] += dist(p, q);
        }
        let a = sums[li] / (sizes[li] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != li && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    let all_equal = points.iter().all(|p| dist(p, &points[0]) == 0.0);
    (!all_equal).then(|| total / points.len() as f64)
}

/// Cluster label of every node: its (finger, segment) pair, densely numbered
/// in order of first appearance.
pub fn segment_labels(topology: &HandTopology) -> (Vec<usize>, Vec<(Finger, Segment)>) {
    let mut keys: Vec<(Finger, Segment)> = Vec::new();
    let labels = topology
        .nodes()
        .iter()
        .map(|n| {
            let key = (n.finger, n.segment);
            keys.iter().position(|k| *k == key).unwrap_or_else(|| {
                keys.push(key);
                keys.len() - 1
            })
        })
        .collect();
    (labels, keys)
}

/// Two-component PCA with nodes as samples, scored by silhouette over the
/// topology's (finger, segment) labels.
pub fn pca_node_map(stack: &NodeFeatureStack, topology: &HandTopology) -> Result<ClusterReport> {
    let n = stack.node_count();
    if n != topology.node_count() {
        return Err(Error::ShapeMismatch {
            op: "pca_node_map",
            left: vec![n],
            right: vec![topology.node_count()],
        });
    }
    let p = pca(&stack.features, 2.min(stack.feature_len()))?;
    let coordinates: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let row = p.projected.row(i);
            [row[0], row.get(1).copied().unwrap_or(0.0)]
        })
        .collect();
    let explained_variance = [p.explained_variance[0], p.explained_variance.get(1).copied().unwrap_or(0.0)];
    // Centering leaves rounding residue on constant columns.
    let scale = stack.features.data().iter().map(|v| v * v).sum::<f64>() / stack.features.len() as f64;
    let zero_variance = explained_variance[0] <= 1e-24 * (1.0 + scale);

    let (labels, keys) = segment_labels(topology);
    let centroids = keys
        .iter()
        .enumerate()
        .map(|(c, &(finger, segment))| {
            let members: Vec<&[f64; 2]> = coordinates.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            let m = members.len() as f64;
            SegmentCentroid {
                finger,
                segment,
                centroid: [
                    members.iter().map(|p| p[0]).sum::<f64>() / m,
                    members.iter().map(|p| p[1]).sum::<f64>() / m,
                ],
            }
        })
        .collect();
    let silhouette = if zero_variance { None } else { silhouette(&coordinates, &labels) };
    Ok(ClusterReport {
        coordinates,
        explained_variance,
        centroids,
        silhouette,
        zero_variance,
    })
}

pub fn write_pca_map(path: impl AsRef<Path>, report: &ClusterReport, topology: &HandTopology) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["node_id", "finger", "segment", "pc1", "pc2"]).map_err(|e| Error::csv(path, e))?;
    for (node, c) in topology.nodes().iter().zip(&report.coordinates) {
        w.write_record([
            node.id.to_string(),
            node.finger.to_string(),
            node.segment.to_string(),
            c[0].to_string(),
            c[1].to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Scatter plot of the map, coloured by finger and shaped by segment.
pub fn render_svg(report: &ClusterReport, topology: &HandTopology) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 30.0;
    let xs = report.coordinates.iter().map(|c| c[0]);
    let ys = report.coordinates.iter().map(|c| c[1]);
    let range = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) }
    };
    let (x0, x1) = range(&mut xs.into_iter());
    let (y0, y1) = range(&mut ys.into_iter());
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (SIZE - 2.0 * PAD);
    let sy = |y: f64| SIZE - PAD - (y - y0) / (y1 - y0) * (SIZE - 2.0 * PAD);
    let colour = |f: Finger| match f {
        Finger::Thumb => "#d62728",
        Finger::Index => "#1f77b4",
        Finger::Middle => "#2ca02c",
        Finger::Little => "#9467bd",
        Finger::None => "#7f7f7f",
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (node, c) in topology.nodes().iter().zip(&report.coordinates) {
        let (x, y) = (sx(c[0]), sy(c[1]));
        let r = 2.0 + 3.0 * (1.0 - node.segment.depth());
        let _ = writeln!(
            svg,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r:.1}\" fill=\"{}\" fill-opacity=\"0.7\"><title>{} {} {}</title></circle>",
            colour(node.finger),
            node.id,
            node.finger,
            node.segment
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceComparison {
    /// `b − a` per step.
    pub differences: Vec<f64>,
    /// Share of non-tied steps with `b > a`; 0.5 when every step ties.
    pub fraction_b_greater: f64,
    pub final_quarter_mean_a: f64,
    pub final_quarter_mean_b: f64,
}

pub fn compare_force_series(a: &[f64], b: &[f64]) -> Result<ForceComparison> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "compare_force_traces",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let differences: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let greater = differences.iter().filter(|&&d| d > 0.0).count();
    let decided = differences.iter().filter(|&&d| d != 0.0).count();
    let fraction_b_greater = if decided == 0 { 0.5 } else { greater as f64 / decided as f64 };
    let tail = (a.len() / 4).max(1);
    let mean = |s: &[f64]| s[s.len() - tail..].iter().sum::<f64>() / tail as f64;
    Ok(ForceComparison {
        differences,
        fraction_b_greater,
        final_quarter_mean_a: mean(a),
        final_quarter_mean_b: mean(b),
    })
}

pub fn compare_force_traces(a: &RolloutTrace, b: &RolloutTrace) -> Result<ForceComparison> {
    compare_force_series(&a.grip_forces(), &b.grip_forces())
}
