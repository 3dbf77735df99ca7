//! Toy molecules rendered as a token string, a labeled graph and a voxel grid.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Padding / no-op token.
pub const NOP: u32 = 0;
/// Masked atom token.
pub const MASK_AT: u32 = 1;
/// Masked branch or ring token.
pub const MASK_BO: u32 = 2;

pub const ATOM_LABELS: usize = 16;
pub const BOND_KINDS: usize = 4;
const ATOM_BASE: u32 = 3;
const BRANCH_BASE: u32 = ATOM_BASE + ATOM_LABELS as u32;
const RING_BASE: u32 = BRANCH_BASE + BOND_KINDS as u32;
pub const VOCAB_SIZE: usize = RING_BASE as usize + BOND_KINDS;

/// Chirality-style tags carried by graph nodes; 0 is the mask value.
pub const NODE_TAGS: usize = 3;

/// Voxel grid side length.
pub const GRID_SIDE: usize = 16;
/// Channel 0 holds masked points, channel `l` atoms with label `l`.
pub const GRID_CHANNELS: usize = ATOM_LABELS + 1;
/// Length units per voxel.
pub const GRID_RESOLUTION: f64 = 1.0;
const BOND_LENGTH: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Nop,
    MaskAtom,
    MaskBond,
    /// Atom label in `1..=ATOM_LABELS`.
    Atom(u8),
    /// Bond kind in `1..=BOND_KINDS`.
    Branch(u8),
    Ring(u8),
}

impl TokenKind {
    pub fn id(self) -> u32 {
        match self {
            TokenKind::Nop => NOP,
            TokenKind::MaskAtom => MASK_AT,
            TokenKind::MaskBond => MASK_BO,
            TokenKind::Atom(l) => ATOM_BASE + u32::from(l) - 1,
            TokenKind::Branch(b) => BRANCH_BASE + u32::from(b) - 1,
            TokenKind::Ring(b) => RING_BASE + u32::from(b) - 1,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Some(match id {
            NOP => TokenKind::Nop,
            MASK_AT => TokenKind::MaskAtom,
            MASK_BO => TokenKind::MaskBond,
            i if i < BRANCH_BASE => TokenKind::Atom((i - ATOM_BASE + 1) as u8),
            i if i < RING_BASE => TokenKind::Branch((i - BRANCH_BASE + 1) as u8),
            i if (i as usize) < VOCAB_SIZE => TokenKind::Ring((i - RING_BASE + 1) as u8),
            _ => return None,
        })
    }

    pub fn is_atom(self) -> bool {
        matches!(self, TokenKind::Atom(_))
    }

    pub fn is_bond(self) -> bool {
        matches!(self, TokenKind::Branch(_) | TokenKind::Ring(_))
    }
}

/// Subsequence governed by a branch or ring token.
///
/// A branch span starts at the branch token and covers the branch body. A
/// ring span runs from the atom that opens the ring to the ring token that
/// closes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    /// Position of the branch or ring token.
    pub token: usize,
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<u32>,
    pub spans: Vec<Span>,
}

impl TokenSeq {
    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.tokens.iter().find(|&&t| t as usize >= VOCAB_SIZE) {
            return Err(Error::Invalid(format!("token id {bad} outside vocabulary")));
        }
        for s in &self.spans {
            if s.len == 0 || s.start + s.len > self.tokens.len() || !s.range().contains(&s.token) {
                return Err(Error::Invalid(format!("span {s:?} out of bounds")));
            }
        }
        Ok(())
    }

    pub fn kinds(&self) -> impl Iterator<Item = TokenKind> + '_ {
        self.tokens
            .iter()
            .map(|&t| TokenKind::from_id(t).unwrap_or(TokenKind::Nop))
    }

    pub fn atom_count(&self) -> usize {
        self.kinds().filter(|k| k.is_atom()).count()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Categorical node features; zero in either field means masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub label: u8,
    pub tag: u8,
}

impl NodeFeatures {
    pub const MASKED: NodeFeatures = NodeFeatures { label: 0, tag: 0 };
}

/// Undirected edge; `bond == 0` means masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub bond: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MolGraph {
    pub nodes: Vec<NodeFeatures>,
    pub edges: Vec<Edge>,
}

impl MolGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if e.u == e.v {
                return Err(Error::Invalid(format!("self-loop on node {}", e.u)));
            }
            if e.u >= self.nodes.len() || e.v >= self.nodes.len() {
                return Err(Error::Invalid(format!(
                    "edge {e:?} references a missing node"
                )));
            }
            if !seen.insert((e.u.min(e.v), e.u.max(e.v))) {
                return Err(Error::Invalid(format!("duplicate edge {e:?}")));
            }
        }
        Ok(())
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.u].push(e.v);
            adj[e.v].push(e.u);
        }
        adj.iter_mut().for_each(|a| a.sort_unstable());
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// One placed atom, in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelPoint {
    pub pos: [u8; 3],
    pub channel: u8,
}

/// Occupancy grid stored as its list of placed points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub side: usize,
    pub channels: usize,
    pub resolution: f64,
    pub points: Vec<VoxelPoint>,
}

impl VoxelGrid {
    pub fn empty() -> Self {
        Self {
            side: GRID_SIDE,
            channels: GRID_CHANNELS,
            resolution: GRID_RESOLUTION,
            points: Vec::new(),
        }
    }

    /// Dense counts indexed `[x][y][z][channel]`.
    pub fn occupancy(&self) -> Vec<u32> {
        let s = self.side;
        let mut grid = vec![0u32; s * s * s * self.channels];
        for p in &self.points {
            let [x, y, z] = p.pos.map(usize::from);
            grid[((x * s + y) * s + z) * self.channels + usize::from(p.channel)] += 1;
        }
        grid
    }

    pub fn total_occupancy(&self) -> usize {
        self.points.len()
    }

    pub fn channel_count(&self, channel: u8) -> usize {
        self.points.iter().filter(|p| p.channel == channel).count()
    }
}

/// The three views of one generated molecule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMolecule {
    pub tokens: TokenSeq,
    pub graph: MolGraph,
    pub voxels: VoxelGrid,
}

/// Random labeled tree with optional ring closures, serialized depth-first
/// into tokens and laid out in 3D.
pub fn gen_toy_molecule<R: Rng + ?Sized>(
    rng: &mut R,
    min_nodes: usize,
    max_nodes: usize,
) -> Result<ToyMolecule> {
    if min_nodes < 2 || max_nodes < min_nodes {
        return Err(Error::Invalid(format!(
            "node range {min_nodes}..={max_nodes} must satisfy 2 <= min <= max"
        )));
    }
    let n = rng.random_range(min_nodes..=max_nodes);
    let nodes: Vec<NodeFeatures> = (0..n)
        .map(|_| NodeFeatures {
            label: rng.random_range(1..=ATOM_LABELS as u8),
            tag: rng.random_range(1..=NODE_TAGS as u8),
        })
        .collect();
    let mut degree = vec![0usize; n];
    let mut parent = vec![usize::MAX; n];
    let mut edges = Vec::with_capacity(n + 2);
    for v in 1..n {
        let open: Vec<usize> = (0..v).filter(|&u| degree[u] < 4).collect();
        let u = if open.is_empty() {
            rng.random_range(0..v)
        } else {
            open[rng.random_range(0..open.len())]
        };
        parent[v] = u;
        degree[u] += 1;
        degree[v] += 1;
        edges.push(Edge {
            u,
            v,
            bond: rng.random_range(1..=BOND_KINDS as u8),
        });
    }
    let tree_edges = edges.len();
    let rings = if n >= 4 {
        rng.random_range(0..=2usize)
    } else {
        0
    };
    for _ in 0..rings {
        for _attempt in 0..8 {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            let exists = edges
                .iter()
                .any(|e| (e.u == a && e.v == b) || (e.u == b && e.v == a));
            if a != b && !exists {
                edges.push(Edge {
                    u: a.min(b),
                    v: a.max(b),
                    bond: rng.random_range(1..=BOND_KINDS as u8),
                });
                break;
            }
        }
    }
    let graph = MolGraph { nodes, edges };
    let tokens = serialize(&graph, &parent, &graph.edges[tree_edges..]);
    let voxels = layout(&graph, &parent, rng);
    Ok(ToyMolecule {
        tokens,
        graph,
        voxels,
    })
}

fn serialize(graph: &MolGraph, parent: &[usize], rings: &[Edge]) -> TokenSeq {
    let n = graph.nodes.len();
    let mut children: Vec<Vec<(usize, u8)>> = vec![Vec::new(); n];
    for e in &graph.edges[..n - 1] {
        let (p, c) = if parent[e.v] == e.u {
            (e.u, e.v)
        } else {
            (e.v, e.u)
        };
        children[p].push((c, e.bond));
    }
    let mut out = TokenSeq {
        tokens: Vec::new(),
        spans: Vec::new(),
    };
    let mut position = vec![usize::MAX; n];
    emit(0, graph, &children, rings, &mut position, &mut out);
    out
}

fn emit(
    v: usize,
    graph: &MolGraph,
    children: &[Vec<(usize, u8)>],
    rings: &[Edge],
    position: &mut [usize],
    out: &mut TokenSeq,
) {
    position[v] = out.tokens.len();
    out.tokens.push(TokenKind::Atom(graph.nodes[v].label).id());
    for r in rings {
        let partner = if r.u == v {
            r.v
        } else if r.v == v {
            r.u
        } else {
            continue;
        };
        if position[partner] == usize::MAX {
            continue;
        }
        let token = out.tokens.len();
        out.tokens.push(TokenKind::Ring(r.bond).id());
        out.spans.push(Span {
            token,
            start: position[partner],
            len: token - position[partner] + 1,
        });
    }
    let kids = &children[v];
    for (i, &(c, bond)) in kids.iter().enumerate() {
        if i + 1 == kids.len() {
            emit(c, graph, children, rings, position, out);
        } else {
            let token = out.tokens.len();
            out.tokens.push(TokenKind::Branch(bond).id());
            let slot = out.spans.len();
            out.spans.push(Span {
                token,
                start: token,
                len: 1,
            });
            emit(c, graph, children, rings, position, out);
            out.spans[slot].len = out.tokens.len() - token;
        }
    }
}

fn layout<R: Rng + ?Sized>(graph: &MolGraph, parent: &[usize], rng: &mut R) -> VoxelGrid {
    let n = graph.nodes.len();
    let mut pos = vec![[0.0f64; 3]; n];
    for v in 1..n {
        let dir = loop {
            let d = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0f64),
            ];
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-3 && norm <= 1.0 {
                break d.map(|x| x / norm);
            }
        };
        let p = pos[parent[v]];
        pos[v] = [0, 1, 2].map(|i| p[i] + BOND_LENGTH * dir[i]);
    }
    let mut centroid = [0.0; 3];
    for p in &pos {
        for i in 0..3 {
            centroid[i] += p[i] / n as f64;
        }
    }
    let half = GRID_SIDE as f64 * GRID_RESOLUTION / 2.0;
    let max = (GRID_SIDE - 1) as f64;
    let points = pos
        .iter()
        .zip(&graph.nodes)
        .map(|(p, f)| VoxelPoint {
            pos: [0, 1, 2].map(|i| {
                let cell = ((p[i] - centroid[i] + half) / GRID_RESOLUTION).floor();
                cell.clamp(0.0, max) as u8
            }),
            channel: f.label,
        })
        .collect();
    VoxelGrid {
        points,
        ..VoxelGrid::empty()
    }
}
