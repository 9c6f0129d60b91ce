//! Recursive two-way normalized cut.
//!
//! The affinity graph is built once; every tree node slices its own subgraph
//! (degrees recomputed on the slice), takes the Fiedler vector, scans `l`
//! evenly spaced thresholds for the cheapest cut, and splits iff that cut costs
//! at most `tau`. Traversal is depth-first with the side holding the lowest
//! patch index visited first.

use serde::{Deserialize, Serialize};

use crate::affinity::{build_affinity_with, AffinityGraph, AffinityOptions};
use crate::error::{Error, Result};
use crate::spectral::{fiedler_with, SolverOptions};
use crate::tensorio::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcutParams {
    /// Maximum accepted NCut cost.
    pub tau: f64,
    pub alpha: u32,
    /// Number of thresholds tried along the Fiedler vector.
    pub splits: usize,
    /// Smallest side (in patches) a split may produce.
    pub min_size: usize,
    pub clamp: bool,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl Default for NcutParams {
    fn default() -> Self {
        Self {
            tau: 0.5,
            alpha: 10,
            splits: 32,
            min_size: 2,
            clamp: true,
            solver: SolverOptions::default(),
        }
    }
}

impl NcutParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::InvalidParameter(format!("tau = {}", self.tau)));
        }
        if self.alpha == 0 {
            return Err(Error::InvalidParameter("alpha must be >= 1".into()));
        }
        if self.splits < 2 {
            return Err(Error::InvalidParameter("splits must be >= 2".into()));
        }
        if self.min_size == 0 {
            return Err(Error::InvalidParameter("min_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Flat patch-resolution labels, numbered by first occurrence in scan order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub num_segments: usize,
}

impl SegmentationMap {
    /// Renumbers arbitrary ids so that labels appear as 0, 1, 2, … in scan order.
    pub fn from_raw<T: Copy + Eq + std::hash::Hash>(
        height: usize,
        width: usize,
        raw: &[T],
    ) -> Result<Self> {
        if raw.len() != height * width || raw.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {height}x{width} grid",
                raw.len()
            )));
        }
        let mut ids = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|r| {
                let next = ids.len() as u32;
                *ids.entry(*r).or_insert(next)
            })
            .collect();
        Ok(Self {
            height,
            width,
            labels,
            num_segments: ids.len(),
        })
    }

    /// Patch indices of each segment, in label order.
    pub fn segments(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_segments];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    CostAboveTau,
    TooSmall,
    NoValidSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    /// Flat patch indices, ascending.
    pub node_ids: Vec<usize>,
    /// Cost of the accepted split; absent at leaves.
    pub split_cost: Option<f64>,
    /// Cost of the best candidate that was rejected at a leaf, if any.
    pub candidate_cost: Option<f64>,
    pub children: Vec<usize>,
    pub stop_reason: Option<StopReason>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub params: NcutParams,
    /// Arena in creation order; index 0 is the root.
    pub nodes: Vec<TreeNode>,
}

impl PartitionTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Leaves in depth-first order.
    pub fn leaves(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.is_leaf() {
                out.push(node);
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    pub fn segmentation(&self, height: usize, width: usize) -> Result<SegmentationMap> {
        let mut raw = vec![usize::MAX; height * width];
        for (leaf_id, leaf) in self.leaves().into_iter().enumerate() {
            for &p in &leaf.node_ids {
                raw[p] = leaf_id;
            }
        }
        if raw.contains(&usize::MAX) {
            return Err(Error::DimensionMismatch(
                "tree leaves do not cover the grid".into(),
            ));
        }
        SegmentationMap::from_raw(height, width, &raw)
    }
}

/// `cut(A,B)/assoc(A,V) + cut(A,B)/assoc(B,V)`, with `A = {i : side[i]}`.
pub fn ncut_value(g: &AffinityGraph, side: &[bool]) -> Result<f64> {
    if side.len() != g.len() {
        return Err(Error::DimensionMismatch(format!(
            "mask of {} for {} nodes",
            side.len(),
            g.len()
        )));
    }
    let d = g.degrees();
    let (mut assoc_a, mut assoc_b, mut cut) = (0.0, 0.0, 0.0);
    let (mut size_a, mut size_b) = (0usize, 0usize);
    for i in 0..g.len() {
        if side[i] {
            size_a += 1;
            assoc_a += d[i];
            cut += g
                .row(i)
                .iter()
                .zip(side)
                .filter(|(_, &s)| !s)
                .map(|(w, _)| w)
                .sum::<f64>();
        } else {
            size_b += 1;
            assoc_b += d[i];
        }
    }
    if size_a == 0 || size_b == 0 {
        return Err(Error::EmptySide);
    }
    Ok(cut / assoc_a + cut / assoc_b)
}

/// Accepted bipartition: `side[i]` is true for `x_i <= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub side: Vec<bool>,
    pub cost: f64,
    pub threshold_index: usize,
    pub threshold: f64,
}

/// The `l` thresholds strictly inside `(min x, max x)`.
pub fn split_thresholds(x: &[f64], l: usize) -> Vec<f64> {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (1..=l)
        .map(|j| lo + (hi - lo) * j as f64 / (l + 1) as f64)
        .collect()
}

/// Minimum-NCut threshold cut of `x`; ties keep the smallest threshold index.
pub fn best_split(g: &AffinityGraph, x: &[f64], l: usize, min_size: usize) -> Result<Split> {
    if l < 2 {
        return Err(Error::InvalidParameter("l must be >= 2".into()));
    }
    if x.len() != g.len() || g.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "vector of {} for {} nodes",
            x.len(),
            g.len()
        )));
    }
    let n = x.len();
    let mut best: Option<Split> = None;
    let mut last_size = usize::MAX;
    for (j, s) in split_thresholds(x, l).into_iter().enumerate() {
        let side: Vec<bool> = x.iter().map(|&v| v <= s).collect();
        let size_a = side.iter().filter(|&&b| b).count();
        // monotone thresholds: equal size means the same mask as the last one
        if size_a == last_size {
            continue;
        }
        last_size = size_a;
        if size_a < min_size || n - size_a < min_size {
            continue;
        }
        let cost = ncut_value(g, &side)?;
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(Split {
                side,
                cost,
                threshold_index: j,
                threshold: s,
            });
        }
    }
    best.ok_or(Error::NoValidSplit)
}

/// All off-diagonal weights equal: every bipartition costs the same and the
/// second eigenspace is the whole complement, so there is nothing to split on.
fn is_uniform(g: &AffinityGraph) -> bool {
    let n = g.len();
    if n < 2 {
        return true;
    }
    let reference = g.weight(0, 1);
    let tol = 1e-12 * reference.abs().max(1e-300);
    (0..n).all(|i| {
        g.row(i)
            .iter()
            .enumerate()
            .all(|(j, &w)| i == j || (w - reference).abs() <= tol)
    })
}

/// Segments a feature map; returns the patch-level map and the split record.
pub fn recursive_ncut(
    fm: &FeatureMap,
    params: &NcutParams,
) -> Result<(SegmentationMap, PartitionTree)> {
    params.validate()?;
    let graph = build_affinity_with(
        fm,
        AffinityOptions {
            alpha: params.alpha,
            clamp: params.clamp,
        },
    )?;
    let tree = partition_graph(&graph, params)?;
    let seg = tree.segmentation(fm.height(), fm.width())?;
    Ok((seg, tree))
}

/// Recursive partition of an already-built graph.
pub fn partition_graph(graph: &AffinityGraph, params: &NcutParams) -> Result<PartitionTree> {
    params.validate()?;
    let mut nodes = vec![TreeNode {
        id: 0,
        node_ids: graph.node_ids().to_vec(),
        split_cost: None,
        candidate_cost: None,
        children: Vec::new(),
        stop_reason: None,
    }];
    // (arena index, local indices into `graph`)
    let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, (0..graph.len()).collect())];

    while let Some((id, local)) = stack.pop() {
        if local.len() < 2 || local.len() < 2 * params.min_size {
            nodes[id].stop_reason = Some(StopReason::TooSmall);
            continue;
        }
        let sub;
        let g = if local.len() == graph.len() {
            graph
        } else {
            sub = graph.subgraph(&local)?;
            &sub
        };
        if is_uniform(g) {
            nodes[id].stop_reason = Some(StopReason::NoValidSplit);
            continue;
        }
        let x = fiedler_with(g, &params.solver)?.vector;
        let split = match best_split(g, &x, params.splits, params.min_size) {
            Ok(s) => s,
            Err(Error::NoValidSplit) => {
                nodes[id].stop_reason = Some(StopReason::NoValidSplit);
                continue;
            }
            Err(e) => return Err(e),
        };
        log::trace!(
            "node {id}: {} patches, best cut {:.4}",
            local.len(),
            split.cost
        );
        if split.cost > params.tau {
            nodes[id].candidate_cost = Some(split.cost);
            nodes[id].stop_reason = Some(StopReason::CostAboveTau);
            continue;
        }

        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (k, &li) in local.iter().enumerate() {
            if split.side[k] {
                a.push(li);
            } else {
                b.push(li);
            }
        }
        // left child holds the lowest index
        if !split.side[0] {
            std::mem::swap(&mut a, &mut b);
        }
        let left = nodes.len();
        let right = left + 1;
        for (child, part) in [(left, &a), (right, &b)] {
            nodes.push(TreeNode {
                id: child,
                node_ids: part.iter().map(|&li| graph.node_ids()[li]).collect(),
                split_cost: None,
                candidate_cost: None,
                children: Vec::new(),
                stop_reason: None,
            });
        }
        nodes[id].split_cost = Some(split.cost);
        nodes[id].children = vec![left, right];
        stack.push((right, b));
        stack.push((left, a));
    }
    Ok(PartitionTree {
        params: *params,
        nodes,
    })
}
