//! Node drop, node/edge masking and subgraph masking for each representation.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::molecule::{
    Edge, MolGraph, NodeFeatures, TokenKind, TokenSeq, VoxelGrid, MASK_AT, MASK_BO,
};
use crate::error::{Error, Result};

pub const DEFAULT_ND_RATIO: f64 = 0.2;
pub const DEFAULT_NM_RATIO: f64 = 0.2;
pub const DEFAULT_SM_RATIO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NodeDrop,
    NodeMask,
    SubgraphMask,
}

impl Strategy {
    pub fn default_ratio(self) -> f64 {
        match self {
            Strategy::NodeDrop => DEFAULT_ND_RATIO,
            Strategy::NodeMask => DEFAULT_NM_RATIO,
            Strategy::SubgraphMask => DEFAULT_SM_RATIO,
        }
    }
}

/// Number of units touched at `ratio` out of `count`.
pub fn masked_count(ratio: f64, count: usize) -> usize {
    ((ratio * count as f64).ceil() as usize).min(count)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Domain {
            op: "augment",
            detail: format!("ratio {ratio} outside [0, 1)"),
        });
    }
    Ok(())
}

/// Nodes visited breadth-first from `anchor`, neighbors in index order,
/// stopping after `k` nodes or when the component is exhausted.
pub fn bfs_region(graph: &MolGraph, anchor: usize, k: usize) -> Vec<usize> {
    let adj = graph.adjacency();
    let mut seen = vec![false; graph.node_count()];
    let mut order = Vec::with_capacity(k);
    let mut queue = VecDeque::from([anchor]);
    seen[anchor] = true;
    while let Some(v) = queue.pop_front() {
        if order.len() == k {
            break;
        }
        order.push(v);
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    order
}

pub fn augment_graph<R: Rng + ?Sized>(
    graph: &MolGraph,
    strategy: Strategy,
    ratio: f64,
    rng: &mut R,
) -> Result<MolGraph> {
    check_ratio(ratio)?;
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::Invalid("graph has no nodes".into()));
    }
    let k = masked_count(ratio, n);
    let mut out = graph.clone();
    match strategy {
        Strategy::NodeDrop => {
            if n - k < 1 {
                return Err(Error::Invalid(format!(
                    "dropping {k} of {n} nodes would leave an empty graph"
                )));
            }
            let mut keep = vec![true; n];
            for i in sample(rng, n, k) {
                keep[i] = false;
            }
            let mut remap = vec![usize::MAX; n];
            let mut next = 0;
            for (i, &kept) in keep.iter().enumerate() {
                if kept {
                    remap[i] = next;
                    next += 1;
                }
            }
            out.nodes = graph
                .nodes
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(f, _)| *f)
                .collect();
            out.edges = graph
                .edges
                .iter()
                .filter(|e| keep[e.u] && keep[e.v])
                .map(|e| Edge {
                    u: remap[e.u],
                    v: remap[e.v],
                    bond: e.bond,
                })
                .collect();
        }
        Strategy::NodeMask => {
            for i in sample(rng, n, k) {
                out.nodes[i] = NodeFeatures::MASKED;
            }
            let e = graph.edges.len();
            for i in sample(rng, e, masked_count(ratio, e)) {
                out.edges[i].bond = 0;
            }
        }
        Strategy::SubgraphMask => {
            if k == 0 {
                return Ok(out);
            }
            let anchor = rng.random_range(0..n);
            let mut inside = vec![false; n];
            for v in bfs_region(graph, anchor, k) {
                inside[v] = true;
                out.nodes[v] = NodeFeatures::MASKED;
            }
            for e in out.edges.iter_mut() {
                if inside[e.u] && inside[e.v] {
                    e.bond = 0;
                }
            }
        }
    }
    Ok(out)
}

pub fn augment_tokens<R: Rng + ?Sized>(
    seq: &TokenSeq,
    strategy: Strategy,
    ratio: f64,
    rng: &mut R,
) -> Result<TokenSeq> {
    check_ratio(ratio)?;
    let kinds: Vec<TokenKind> = seq.kinds().collect();
    let atoms: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i].is_atom()).collect();
    let mut out = seq.clone();
    match strategy {
        Strategy::NodeDrop => {
            return Err(Error::Invalid(
                "node drop is not defined for token sequences".into(),
            ))
        }
        Strategy::NodeMask => {
            let bonds: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i].is_bond()).collect();
            for i in sample(rng, atoms.len(), masked_count(ratio, atoms.len())) {
                out.tokens[atoms[i]] = MASK_AT;
            }
            for i in sample(rng, bonds.len(), masked_count(ratio, bonds.len())) {
                out.tokens[bonds[i]] = MASK_BO;
            }
        }
        Strategy::SubgraphMask => {
            let k = masked_count(ratio, atoms.len());
            if k == 0 {
                return Ok(out);
            }
            let mut hit = vec![false; kinds.len()];
            for p in token_neighborhood(&atoms, rng.random_range(0..atoms.len()), k) {
                hit[p] = true;
            }
            close_under_spans(seq, &mut hit);
            for (i, masked) in hit.iter().enumerate() {
                if *masked {
                    match kinds[i] {
                        TokenKind::Atom(_) => out.tokens[i] = MASK_AT,
                        TokenKind::Branch(_) | TokenKind::Ring(_) => out.tokens[i] = MASK_BO,
                        _ => {}
                    }
                }
            }
        }
    }
    Ok(out)
}

/// All positions between the `k` atom tokens closest in sequence order to
/// `atoms[anchor]`, growing the window toward the nearer side first.
fn token_neighborhood(atoms: &[usize], anchor: usize, k: usize) -> std::ops::RangeInclusive<usize> {
    let (mut lo, mut hi) = (anchor, anchor);
    while hi - lo + 1 < k {
        let left = (lo > 0).then(|| atoms[anchor] - atoms[lo - 1]);
        let right = (hi + 1 < atoms.len()).then(|| atoms[hi + 1] - atoms[anchor]);
        match (left, right) {
            (Some(l), Some(r)) if l <= r => lo -= 1,
            (Some(_), None) => lo -= 1,
            _ => hi += 1,
        }
    }
    atoms[lo]..=atoms[hi]
}

/// Extends `hit` so every span is covered entirely or not at all.
fn close_under_spans(seq: &TokenSeq, hit: &mut [bool]) {
    loop {
        let mut changed = false;
        for s in &seq.spans {
            let r = s.range();
            if hit[r.clone()].iter().any(|&h| h) && !hit[r.clone()].iter().all(|&h| h) {
                hit[r].iter_mut().for_each(|h| *h = true);
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
}

/// Indices of the `k` points nearest to `anchor` by squared distance, ties
/// broken by index.
pub fn nearest_points(grid: &VoxelGrid, anchor: usize, k: usize) -> Vec<usize> {
    let a = grid.points[anchor].pos.map(i64::from);
    let dist = |i: usize| -> i64 {
        let p = grid.points[i].pos.map(i64::from);
        (0..3).map(|d| (p[d] - a[d]).pow(2)).sum()
    };
    let mut idx: Vec<usize> = (0..grid.points.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by_key(k, |&i| (dist(i), i));
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

pub fn augment_voxels<R: Rng + ?Sized>(
    grid: &VoxelGrid,
    strategy: Strategy,
    ratio: f64,
    rng: &mut R,
) -> Result<VoxelGrid> {
    check_ratio(ratio)?;
    let n = grid.points.len();
    if n == 0 {
        return Err(Error::Invalid("voxel grid is empty".into()));
    }
    let k = masked_count(ratio, n);
    let mut out = grid.clone();
    match strategy {
        Strategy::NodeDrop => {
            return Err(Error::Invalid(
                "node drop is not defined for voxel grids".into(),
            ))
        }
        Strategy::NodeMask => {
            for i in sample(rng, n, k) {
                out.points[i].channel = 0;
            }
        }
        Strategy::SubgraphMask => {
            if k == 0 {
                return Ok(out);
            }
            let anchor = rng.random_range(0..n);
            for i in nearest_points(grid, anchor, k) {
                out.points[i].channel = 0;
            }
        }
    }
    Ok(out)
}

/// Per-modality strategy lists, applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub tokens: Vec<(Strategy, f64)>,
    pub graph: Vec<(Strategy, f64)>,
    pub voxels: Vec<(Strategy, f64)>,
}

impl AugmentPolicy {
    /// Node drop on graphs, node masking on tokens and voxels, subgraph
    /// masking on all three.
    pub fn standard() -> Self {
        let nm = (Strategy::NodeMask, DEFAULT_NM_RATIO);
        let sm = (Strategy::SubgraphMask, DEFAULT_SM_RATIO);
        Self {
            tokens: vec![nm, sm],
            graph: vec![(Strategy::NodeDrop, DEFAULT_ND_RATIO), sm],
            voxels: vec![nm, sm],
        }
    }

    pub fn identity() -> Self {
        Self {
            tokens: Vec::new(),
            graph: Vec::new(),
            voxels: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (_, r) in self.tokens.iter().chain(&self.graph).chain(&self.voxels) {
            check_ratio(*r).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self
            .tokens
            .iter()
            .chain(&self.voxels)
            .any(|(s, _)| *s == Strategy::NodeDrop)
        {
            return Err(Error::Config("node drop applies to graphs only".into()));
        }
        Ok(())
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        mol: &super::ToyMolecule,
        rng: &mut R,
    ) -> Result<super::ToyMolecule> {
        let mut out = mol.clone();
        for &(s, r) in &self.tokens {
            out.tokens = augment_tokens(&out.tokens, s, r, rng)?;
        }
        for &(s, r) in &self.graph {
            out.graph = augment_graph(&out.graph, s, r, rng)?;
        }
        for &(s, r) in &self.voxels {
            out.voxels = augment_voxels(&out.voxels, s, r, rng)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modalities::gen_toy_molecule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> MolGraph {
        MolGraph {
            nodes: (0..n)
                .map(|i| NodeFeatures {
                    label: (i % 16 + 1) as u8,
                    tag: 1,
                })
                .collect(),
            edges: (1..n)
                .map(|v| Edge {
                    u: v - 1,
                    v,
                    bond: 1,
                })
                .collect(),
        }
    }

    #[test]
    fn zero_ratio_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = gen_toy_molecule(&mut rng, 6, 12).unwrap();
        for s in [
            Strategy::NodeDrop,
            Strategy::NodeMask,
            Strategy::SubgraphMask,
        ] {
            assert_eq!(augment_graph(&m.graph, s, 0.0, &mut rng).unwrap(), m.graph);
        }
        for s in [Strategy::NodeMask, Strategy::SubgraphMask] {
            assert_eq!(
                augment_tokens(&m.tokens, s, 0.0, &mut rng).unwrap(),
                m.tokens
            );
            assert_eq!(
                augment_voxels(&m.voxels, s, 0.0, &mut rng).unwrap(),
                m.voxels
            );
        }
    }

    #[test]
    fn node_drop_on_ten_nodes_removes_two() {
        let g = path(10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = augment_graph(&g, Strategy::NodeDrop, 0.2, &mut rng).unwrap();
        assert_eq!(out.node_count(), 8);
        out.validate().unwrap();
    }

    #[test]
    fn node_drop_refuses_to_empty_graph() {
        let g = path(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(augment_graph(&g, Strategy::NodeDrop, 0.2, &mut rng).is_err());
    }

    #[test]
    fn bad_ratio_rejected() {
        let g = path(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(augment_graph(&g, Strategy::NodeMask, 1.0, &mut rng).is_err());
        assert!(augment_graph(&g, Strategy::NodeMask, -0.1, &mut rng).is_err());
    }

    #[test]
    fn subgraph_mask_on_path_is_contiguous() {
        let g = path(20);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = augment_graph(&g, Strategy::SubgraphMask, 0.2, &mut rng).unwrap();
        let masked: Vec<usize> = (0..20).filter(|&i| out.nodes[i].label == 0).collect();
        assert_eq!(masked.len(), 4);
        assert_eq!(masked[3] - masked[0], 3);
        assert_eq!(out.edges.iter().filter(|e| e.bond == 0).count(), 3);
    }

    #[test]
    fn empty_voxels_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(augment_voxels(&VoxelGrid::empty(), Strategy::NodeMask, 0.2, &mut rng).is_err());
    }

    #[test]
    fn window_prefers_nearer_side() {
        let atoms = [0, 1, 5, 6, 7];
        assert_eq!(token_neighborhood(&atoms, 2, 2), 5..=6);
        assert_eq!(token_neighborhood(&atoms, 1, 2), 0..=1);
        assert_eq!(token_neighborhood(&atoms, 4, 3), 5..=7);
    }

    #[test]
    fn standard_policy_is_valid() {
        AugmentPolicy::standard().validate().unwrap();
        let mut bad = AugmentPolicy::identity();
        bad.voxels.push((Strategy::NodeDrop, 0.2));
        assert!(bad.validate().is_err());
    }
}
