//! Sensor graph of a tactile-skinned hand and its normalized propagation
//! operator `S = D̂^{-1/2} (A + I) D̂^{-1/2}`.
//!
//! Every sensor chip is a node. Chips inside a patch are joined on a
//! 4-neighbourhood grid; consecutive patches along a finger are stitched
//! through their facing boundary rows, and the first patch of each finger
//! is stitched to one palm patch.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_HAND_FILE: &str = "allegro_uskin_384.json";
pub const DEFAULT_NODE_COUNT: usize = 384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Fingertip,
    ProximalLower,
    ProximalUpper,
    Middle,
    Distal,
    Palm,
}

impl Segment {
    pub const ALL: [Segment; 6] = [
        Segment::Fingertip,
        Segment::ProximalLower,
        Segment::ProximalUpper,
        Segment::Middle,
        Segment::Distal,
        Segment::Palm,
    ];

    /// How deep inside the hand the segment sits, 0 at the fingertip and 1
    /// at the palm. Objects reach deeper segments only once pulled in.
    pub fn depth(self) -> f64 {
        match self {
            Segment::Fingertip => 0.0,
            Segment::Distal => 0.2,
            Segment::Middle => 0.4,
            Segment::ProximalUpper => 0.6,
            Segment::ProximalLower => 0.8,
            Segment::Palm => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Fingertip => "fingertip",
            Segment::ProximalLower => "proximal_lower",
            Segment::ProximalUpper => "proximal_upper",
            Segment::Middle => "middle",
            Segment::Distal => "distal",
            Segment::Palm => "palm",
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Little,
    None,
}

impl Finger {
    pub const HAND: [Finger; 4] = [Finger::Thumb, Finger::Index, Finger::Middle, Finger::Little];

    /// Position in joint order (four joints per finger); `None` for the palm.
    pub fn joint_block(self) -> Option<usize> {
        match self {
            Finger::Thumb => Some(0),
            Finger::Index => Some(1),
            Finger::Middle => Some(2),
            Finger::Little => Some(3),
            Finger::None => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Little => "little",
            Finger::None => "none",
        }
    }
}

impl fmt::Display for Finger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorNode {
    pub id: usize,
    pub segment: Segment,
    pub finger: Finger,
    /// Grid row inside the patch (palm nodes use palm-wide coordinates).
    #[serde(rename = "row")]
    pub patch_row: usize,
    #[serde(rename = "col")]
    pub patch_col: usize,
}

/// Validated sensor graph. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTopology", into = "RawTopology")]
pub struct HandTopology {
    nodes: Vec<SensorNode>,
    edges: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct RawTopology {
    nodes: Vec<SensorNode>,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<RawTopology> for HandTopology {
    type Error = Error;

    fn try_from(raw: RawTopology) -> Result<Self> {
        HandTopology::new(raw.nodes, raw.edges)
    }
}

impl From<HandTopology> for RawTopology {
    fn from(t: HandTopology) -> Self {
        RawTopology {
            nodes: t.nodes,
            edges: t.edges,
        }
    }
}

impl HandTopology {
    pub fn new(nodes: Vec<SensorNode>, edges: Vec<[usize; 2]>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Topology("no nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Topology(format!(
                    "node ids must be contiguous from 0: position {i} holds id {}",
                    node.id
                )));
            }
            if (node.segment == Segment::Palm) != (node.finger == Finger::None) {
                return Err(Error::Topology(format!(
                    "node {i}: segment {} does not fit finger {}",
                    node.segment, node.finger
                )));
            }
        }
        let n = nodes.len();
        let mut seen = HashSet::with_capacity(edges.len());
        for &[a, b] in &edges {
            if a >= n || b >= n {
                return Err(Error::Topology(format!(
                    "edge [{a}, {b}] references a node id outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop on node {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Topology(format!("duplicate edge [{a}, {b}]")));
            }
        }
        Ok(Self { nodes, edges })
    }

    pub fn nodes(&self) -> &[SensorNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &[a, b] in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn degree(&self, id: usize) -> usize {
        self.edges.iter().filter(|e| e[0] == id || e[1] == id).count()
    }

    /// Number of connected components.
    pub fn component_count(&self) -> usize {
        let adj = self.neighbors();
        let mut seen = vec![false; adj.len()];
        let mut count = 0;
        for start in 0..adj.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.nodes.len();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let mut nodes = self.nodes.clone();
        for node in &self.nodes {
            nodes[perm[node.id]] = SensorNode {
                id: perm[node.id],
                ..*node
            };
        }
        let edges = self.edges.iter().map(|&[a, b]| [perm[a], perm[b]]).collect();
        Self::new(nodes, edges)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Topology(format!("parse error: {e}")))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a topology file.
pub fn load_topology(path: impl AsRef<Path>) -> Result<HandTopology> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    HandTopology::from_json_str(&text)
        .map_err(|e| Error::Topology(format!("{}: {e}", path.display())))
}

/// Which boundary of a palm patch a finger attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

#[derive(Debug, Clone)]
pub struct FingerChain {
    pub finger: Finger,
    /// Phalanx patches ordered from the palm outward; the fingertip patch
    /// always closes the chain.
    pub phalanges: Vec<Segment>,
    pub palm_patch: usize,
    pub palm_side: Side,
}

/// Patch dimensions and arrangement used to synthesize a hand graph.
#[derive(Debug, Clone)]
pub struct HandLayout {
    pub fingertip: (usize, usize),
    pub phalanx: (usize, usize),
    pub palm_patch: (usize, usize),
    /// Grid position (row, col) of every palm patch.
    pub palm_grid: Vec<(usize, usize)>,
    pub chains: Vec<FingerChain>,
}

impl HandLayout {
    /// Four 24-chip fingertips, eleven 16-chip phalanx patches and seven
    /// 16-chip palm patches: 384 nodes.
    pub fn allegro_uskin() -> Self {
        let long = |finger, palm_patch| FingerChain {
            finger,
            phalanges: vec![Segment::ProximalLower, Segment::ProximalUpper, Segment::Middle],
            palm_patch,
            palm_side: Side::Top,
        };
        Self {
            fingertip: (6, 4),
            phalanx: (4, 4),
            palm_patch: (4, 4),
            palm_grid: vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0)],
            chains: vec![
                FingerChain {
                    finger: Finger::Thumb,
                    phalanges: vec![Segment::Middle, Segment::Distal],
                    palm_patch: 6,
                    palm_side: Side::Left,
                },
                long(Finger::Index, 0),
                long(Finger::Middle, 1),
                long(Finger::Little, 2),
            ],
        }
    }

    /// 24-node desk-scale hand: 2×2 fingertips, a single-chip middle
    /// phalanx per finger and one 2×2 palm patch.
    pub fn toy() -> Self {
        let chain = |finger, side| FingerChain {
            finger,
            phalanges: vec![Segment::Middle],
            palm_patch: 0,
            palm_side: side,
        };
        Self {
            fingertip: (2, 2),
            phalanx: (1, 1),
            palm_patch: (2, 2),
            palm_grid: vec![(0, 0)],
            chains: vec![
                chain(Finger::Thumb, Side::Left),
                chain(Finger::Index, Side::Top),
                chain(Finger::Middle, Side::Top),
                chain(Finger::Little, Side::Top),
            ],
        }
    }

    pub fn build(&self) -> HandTopology {
        let mut nodes = Vec::new();
        let mut edges = BTreeSet::new();

        let (pr, pc) = self.palm_patch;
        let mut palm_patches = Vec::with_capacity(self.palm_grid.len());
        for &(gr, gc) in &self.palm_grid {
            let patch = add_patch(&mut nodes, &mut edges, Segment::Palm, Finger::None, pr, pc, gr * pr, gc * pc);
            palm_patches.push(patch);
        }
        for (i, &(ri, ci)) in self.palm_grid.iter().enumerate() {
            for (j, &(rj, cj)) in self.palm_grid.iter().enumerate() {
                if ri == rj && cj == ci + 1 {
                    stitch(&mut edges, &palm_patches[i].col(pc - 1), &palm_patches[j].col(0));
                }
                if ci == cj && rj == ri + 1 {
                    stitch(&mut edges, &palm_patches[i].row(pr - 1), &palm_patches[j].row(0));
                }
            }
        }

        for chain in &self.chains {
            let palm = &palm_patches[chain.palm_patch];
            let mut prev_boundary = match chain.palm_side {
                Side::Top => palm.row(0),
                Side::Bottom => palm.row(pr - 1),
                Side::Left => palm.col(0),
                Side::Right => palm.col(pc - 1),
            };
            let segments = chain
                .phalanges
                .iter()
                .map(|&s| (s, self.phalanx))
                .chain(std::iter::once((Segment::Fingertip, self.fingertip)));
            for (segment, (rows, cols)) in segments {
                let patch = add_patch(&mut nodes, &mut edges, segment, chain.finger, rows, cols, 0, 0);
                stitch(&mut edges, &prev_boundary, &patch.row(0));
                prev_boundary = patch.row(rows - 1);
            }
        }

        HandTopology::new(nodes, edges.into_iter().map(|(a, b)| [a, b]).collect())
            .expect("layout produces a valid topology")
    }
}

/// The full 384-chip hand.
pub fn build_default_hand() -> HandTopology {
    HandLayout::allegro_uskin().build()
}

/// The 24-chip desk-scale hand.
pub fn build_toy_hand() -> HandTopology {
    HandLayout::toy().build()
}

struct Patch {
    first: usize,
    rows: usize,
    cols: usize,
}

impl Patch {
    fn row(&self, r: usize) -> Vec<usize> {
        (0..self.cols).map(|c| self.first + r * self.cols + c).collect()
    }

    fn col(&self, c: usize) -> Vec<usize> {
        (0..self.rows).map(|r| self.first + r * self.cols + c).collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn add_patch(
    nodes: &mut Vec<SensorNode>,
    edges: &mut BTreeSet<(usize, usize)>,
    segment: Segment,
    finger: Finger,
    rows: usize,
    cols: usize,
    row_offset: usize,
    col_offset: usize,
) -> Patch {
    let first = nodes.len();
    for r in 0..rows {
        for c in 0..cols {
            let id = nodes.len();
            nodes.push(SensorNode {
                id,
                segment,
                finger,
                patch_row: row_offset + r,
                patch_col: col_offset + c,
            });
            if c > 0 {
                edges.insert((id - 1, id));
            }
            if r > 0 {
                edges.insert((id - cols, id));
            }
        }
    }
    Patch { first, rows, cols }
}

/// Joins two boundary lines, pairing positions by proportional index so
/// every node on the longer line gets exactly one partner.
fn stitch(edges: &mut BTreeSet<(usize, usize)>, a: &[usize], b: &[usize]) {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    for (i, &u) in long.iter().enumerate() {
        let j = if long.len() == 1 {
            0
        } else {
            ((i as f64) * (short.len() - 1) as f64 / (long.len() - 1) as f64).round() as usize
        };
        let v = short[j];
        edges.insert((u.min(v), u.max(v)));
    }
}

/// `A`, `Â = A + I`, the degrees of `Â`, and `S = D̂^{-1/2} Â D̂^{-1/2}`,
/// all stored dense.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix {
    pub n: usize,
    pub a: Tensor,
    pub a_hat: Tensor,
    pub d_hat: Vec<f64>,
    pub s: Tensor,
}

pub fn normalize_adjacency(topology: &HandTopology) -> PropagationMatrix {
    let n = topology.node_count();
    let mut a = vec![0.0; n * n];
    for &[u, v] in topology.edges() {
        a[u * n + v] = 1.0;
        a[v * n + u] = 1.0;
    }
    let mut a_hat = a.clone();
    for i in 0..n {
        a_hat[i * n + i] = 1.0;
    }
    let d_hat: Vec<f64> = a_hat.chunks(n).map(|row| row.iter().sum()).collect();
    let s = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if a_hat[k] == 0.0 {
                0.0
            } else {
                a_hat[k] / (d_hat[i] * d_hat[j]).sqrt()
            }
        })
        .collect();
    PropagationMatrix {
        n,
        a: Tensor::from_raw(vec![n, n], a),
        a_hat: Tensor::from_raw(vec![n, n], a_hat),
        d_hat,
        s: Tensor::from_raw(vec![n, n], s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: usize) -> SensorNode {
        SensorNode {
            id,
            segment: Segment::Palm,
            finger: Finger::None,
            patch_row: 0,
            patch_col: id,
        }
    }

    #[test]
    fn default_hand_counts() {
        let t = build_default_hand();
        assert_eq!(t.node_count(), DEFAULT_NODE_COUNT);
        let count = |seg| t.nodes().iter().filter(|n| n.segment == seg).count();
        assert_eq!(count(Segment::Fingertip), 4 * 24);
        assert_eq!(count(Segment::Palm), 7 * 16);
        assert_eq!(t.node_count() - count(Segment::Fingertip) - count(Segment::Palm), 11 * 16);
        assert_eq!(t.component_count(), 1);
    }

    #[test]
    fn interior_patch_node_has_four_in_patch_neighbors() {
        let t = build_default_hand();
        // Palm patch 0 occupies ids 0..16 as a 4×4 grid; id 5 is (1,1).
        let adj = t.neighbors();
        let in_patch = adj[5].iter().filter(|&&v| v < 16).count();
        assert_eq!(in_patch, 4);
    }

    #[test]
    fn toy_hand_is_connected() {
        let t = build_toy_hand();
        assert_eq!(t.node_count(), 24);
        assert_eq!(t.component_count(), 1);
    }

    #[test]
    fn validation_errors() {
        let nodes: Vec<_> = (0..4).map(node).collect();
        let err = HandTopology::new(nodes.clone(), vec![[0, 999]]).unwrap_err();
        assert!(err.to_string().contains("999"));
        assert!(HandTopology::new(nodes.clone(), vec![[1, 1]]).is_err());
        assert!(HandTopology::new(nodes.clone(), vec![[0, 1], [1, 0]]).is_err());
        let mut bad = nodes.clone();
        bad[2].id = 7;
        assert!(HandTopology::new(bad, vec![]).is_err());
        assert!(HandTopology::new(vec![node(0)], vec![]).is_ok());
    }

    #[test]
    fn small_operators() {
        let one = HandTopology::new(vec![node(0)], vec![]).unwrap();
        assert_eq!(normalize_adjacency(&one).s.data(), &[1.0]);
        let two = HandTopology::new(vec![node(0), node(1)], vec![[0, 1]]).unwrap();
        assert_eq!(normalize_adjacency(&two).s.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn json_roundtrip_and_parse_errors() {
        let t = build_toy_hand();
        let back = HandTopology::from_json_str(&t.to_json_string()).unwrap();
        assert_eq!(back, t);
        let err = HandTopology::from_json_str("{\"nodes\": [ {\"id\": 0}]}").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }
}
