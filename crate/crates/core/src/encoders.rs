//! Per-modality encoders and projection heads.
//!
//! Parameters live in [`EncoderParams`] as plain named arrays. Each forward
//! pass binds them into a fresh [`Graph`] as trainable leaves, so gradients
//! come back keyed by the same names.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Modality;
use crate::modalities::molecule::{
    MolGraph, TokenKind, TokenSeq, VoxelGrid, ATOM_LABELS, BOND_KINDS, GRID_CHANNELS, NODE_TAGS,
    VOCAB_SIZE,
};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Graph, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Features per voxel channel: count, centroid (3), per-axis variance (3).
pub const VOXEL_STATS_PER_CHANNEL: usize = 7;
pub const VOXEL_FEATURES: usize = GRID_CHANNELS * VOXEL_STATS_PER_CHANNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Graph,
    Tokens,
    Voxels,
    Continuous { input: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderDims {
    pub hidden: usize,
    pub joint: usize,
    pub gin_layers: usize,
    /// Encoder for main, aux1 and aux2, in that order.
    pub kinds: [EncoderKind; 3],
}

impl EncoderDims {
    pub fn molecular(hidden: usize, joint: usize) -> Self {
        Self {
            hidden,
            joint,
            gin_layers: 2,
            kinds: [EncoderKind::Graph, EncoderKind::Tokens, EncoderKind::Voxels],
        }
    }

    pub fn continuous(inputs: [usize; 3], hidden: usize, joint: usize) -> Self {
        Self {
            hidden,
            joint,
            gin_layers: 2,
            kinds: inputs.map(|input| EncoderKind::Continuous { input }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.joint == 0 {
            return Err(Error::Config(format!(
                "hidden {} and joint {} must be positive",
                self.hidden, self.joint
            )));
        }
        for k in self.kinds {
            match k {
                EncoderKind::Graph if self.gin_layers == 0 => {
                    return Err(Error::Config(
                        "graph encoder needs at least one layer".into(),
                    ))
                }
                EncoderKind::Continuous { input: 0 } => {
                    return Err(Error::Config(
                        "continuous encoder input must be positive".into(),
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    GinEps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub dims: EncoderDims,
    tensors: BTreeMap<String, ParamTensor<T>>,
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

struct Init<'a, T> {
    rng: ChaCha8Rng,
    out: &'a mut BTreeMap<String, ParamTensor<T>>,
}

impl<T: Scalar> Init<'_, T> {
    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) {
        let a = glorot_bound(fan_in, fan_out);
        let data = (0..fan_in * fan_out)
            .map(|_| T::lit(self.rng.random_range(-a..=a)))
            .collect();
        self.insert(name, ParamKind::Weight, vec![fan_in, fan_out], data);
    }

    fn bias(&mut self, name: String, len: usize) {
        self.insert(name, ParamKind::Bias, vec![len], vec![T::zero(); len]);
    }

    fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.weight(format!("{prefix}.w"), fan_in, fan_out);
        self.bias(format!("{prefix}.b"), fan_out);
    }

    fn insert(&mut self, name: String, kind: ParamKind, shape: Vec<usize>, data: Vec<T>) {
        self.out.insert(name, ParamTensor { kind, shape, data });
    }
}

/// Glorot-uniform weights and embedding tables, zero biases, GIN epsilons
/// at zero. Deterministic per seed.
pub fn init_params<T: Scalar>(seed: u64, dims: EncoderDims) -> Result<EncoderParams<T>> {
    dims.validate()?;
    let mut tensors = BTreeMap::new();
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: &mut tensors,
    };
    let h = dims.hidden;
    for m in Modality::ALL {
        let p = m.name();
        match dims.kinds[m.index()] {
            EncoderKind::Graph => {
                init.weight(format!("{p}.emb_label"), ATOM_LABELS + 1, h);
                init.weight(format!("{p}.emb_tag"), NODE_TAGS + 1, h);
                init.weight(format!("{p}.emb_bond"), BOND_KINDS + 1, h);
                for l in 0..dims.gin_layers {
                    init.insert(
                        format!("{p}.gin{l}.eps"),
                        ParamKind::GinEps,
                        vec![],
                        vec![T::zero()],
                    );
                    init.dense(&format!("{p}.gin{l}.fc0"), h, h);
                    init.dense(&format!("{p}.gin{l}.fc1"), h, h);
                }
            }
            EncoderKind::Tokens => {
                init.weight(format!("{p}.emb_token"), VOCAB_SIZE, h);
                init.dense(&format!("{p}.fc0"), h, h);
                init.dense(&format!("{p}.fc1"), h, h);
            }
            EncoderKind::Voxels => {
                init.dense(&format!("{p}.fc0"), VOXEL_FEATURES, h);
                init.dense(&format!("{p}.fc1"), h, h);
            }
            EncoderKind::Continuous { input } => {
                init.dense(&format!("{p}.fc0"), input, h);
                init.dense(&format!("{p}.fc1"), h, h);
            }
        }
        init.dense(&format!("{p}.proj0"), h, h);
        init.dense(&format!("{p}.proj1"), h, dims.joint);
    }
    Ok(EncoderParams { dims, tensors })
}

impl<T: Scalar> EncoderParams<T> {
    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamTensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }

    /// Names of the parameters belonging to modality `m`.
    pub fn names_for(&self, m: Modality) -> impl Iterator<Item = &str> {
        let prefix = format!("{}.", m.name());
        self.tensors
            .keys()
            .filter(move |k| k.starts_with(&prefix))
            .map(String::as_str)
    }

    /// Records every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &Graph<T>) -> Result<BoundParams<T>> {
        let mut out = BTreeMap::new();
        for (name, t) in &self.tensors {
            out.insert(name.clone(), g.param(t.shape.clone(), t.data.clone())?);
        }
        Ok(BoundParams {
            dims: self.dims,
            tensors: out,
        })
    }

    /// Like [`bind`](Self::bind) but with `name` replaced by `leaf`.
    pub fn bind_with(&self, g: &Graph<T>, name: &str, leaf: &Tensor<T>) -> Result<BoundParams<T>> {
        let mut bound = self.bind(g)?;
        let slot = bound
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))?;
        if slot.shape() != leaf.shape() {
            return Err(Error::ShapeMismatch {
                op: "bind_with",
                lhs: slot.shape().to_vec(),
                rhs: leaf.shape().to_vec(),
            });
        }
        *slot = leaf.clone();
        Ok(bound)
    }
}

/// Parameters recorded on one graph.
#[derive(Debug, Clone)]
pub struct BoundParams<T> {
    pub dims: EncoderDims,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> BoundParams<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
    }

    /// Gradients gathered by parameter name; parameters without a gradient
    /// path are omitted.
    pub fn named_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, Vec<T>> {
        self.tensors
            .iter()
            .filter_map(|(k, t)| grads.get(t).map(|g| (k.clone(), g.to_vec())))
            .collect()
    }

    fn dense(&self, x: &Tensor<T>, prefix: &str) -> Result<Tensor<T>> {
        x.matmul(self.get(&format!("{prefix}.w"))?)?
            .add(self.get(&format!("{prefix}.b"))?)
    }

    /// `fc1(tanh(fc0(x)))`.
    fn mlp(&self, x: &Tensor<T>, prefix: &str) -> Result<Tensor<T>> {
        let hidden = self.dense(x, &format!("{prefix}.fc0"))?.tanh()?;
        self.dense(&hidden, &format!("{prefix}.fc1"))
    }
}

/// One modality's inputs for a whole batch.
#[derive(Debug, Clone, Copy)]
pub enum ModalInput<'a> {
    Tokens(&'a [TokenSeq]),
    Graphs(&'a [MolGraph]),
    Voxels(&'a [VoxelGrid]),
    Features(&'a [Vec<f64>]),
}

impl ModalInput<'_> {
    pub fn len(&self) -> usize {
        match self {
            ModalInput::Tokens(x) => x.len(),
            ModalInput::Graphs(x) => x.len(),
            ModalInput::Voxels(x) => x.len(),
            ModalInput::Features(x) => x.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Hidden representations `[N, h]` for one modality.
pub fn encode_batch<T: Scalar>(
    p: &BoundParams<T>,
    m: Modality,
    input: ModalInput<'_>,
) -> Result<Tensor<T>> {
    if input.is_empty() {
        return Err(Error::Invalid("empty input batch".into()));
    }
    let kind = p.dims.kinds[m.index()];
    match (kind, input) {
        (EncoderKind::Tokens, ModalInput::Tokens(x)) => encode_tokens(p, m, x),
        (EncoderKind::Graph, ModalInput::Graphs(x)) => encode_graphs(p, m, x),
        (EncoderKind::Voxels, ModalInput::Voxels(x)) => encode_voxels(p, m, x),
        (EncoderKind::Continuous { input: d }, ModalInput::Features(x)) => {
            encode_features(p, m, d, x)
        }
        (kind, _) => Err(Error::Invalid(format!(
            "{} encoder is {kind:?} and cannot take this input",
            m.name()
        ))),
    }
}

fn encode_tokens<T: Scalar>(
    p: &BoundParams<T>,
    m: Modality,
    seqs: &[TokenSeq],
) -> Result<Tensor<T>> {
    let mut ids = Vec::new();
    let mut seg = Vec::new();
    let mut inv_len = Vec::with_capacity(seqs.len() * p.dims.hidden);
    for (s, seq) in seqs.iter().enumerate() {
        if seq.is_empty() {
            return Err(Error::Invalid(format!("token sequence {s} is empty")));
        }
        if let Some(bad) = seq
            .tokens
            .iter()
            .find(|&&t| TokenKind::from_id(t).is_none())
        {
            return Err(Error::Invalid(format!("unknown token id {bad}")));
        }
        // Pool in sorted order so the mean is exactly order-independent.
        let mut sorted: Vec<usize> = seq.tokens.iter().map(|&t| t as usize).collect();
        sorted.sort_unstable();
        ids.extend(sorted);
        seg.extend(std::iter::repeat_n(s, seq.len()));
        let w = T::one() / T::from_count(seq.len());
        inv_len.extend(std::iter::repeat_n(w, p.dims.hidden));
    }
    let g = p.get(&format!("{}.emb_token", m.name()))?.graph().clone();
    let pooled = p
        .get(&format!("{}.emb_token", m.name()))?
        .select_rows(&ids)?
        .segment_sum(&seg, seqs.len())?;
    let scale = g.constant(vec![seqs.len(), p.dims.hidden], inv_len)?;
    p.mlp(&pooled.mul(&scale)?, m.name())
}

fn encode_graphs<T: Scalar>(
    p: &BoundParams<T>,
    m: Modality,
    graphs: &[MolGraph],
) -> Result<Tensor<T>> {
    let name = m.name();
    let (mut labels, mut tags, mut owner) = (Vec::new(), Vec::new(), Vec::new());
    let (mut src, mut dst, mut bonds) = (Vec::new(), Vec::new(), Vec::new());
    for (gi, graph) in graphs.iter().enumerate() {
        if graph.node_count() == 0 {
            return Err(Error::Invalid(format!("graph {gi} has no nodes")));
        }
        let base = labels.len();
        for f in &graph.nodes {
            if usize::from(f.label) > ATOM_LABELS || usize::from(f.tag) > NODE_TAGS {
                return Err(Error::Invalid(format!("node features {f:?} out of range")));
            }
            labels.push(usize::from(f.label));
            tags.push(usize::from(f.tag));
            owner.push(gi);
        }
        for e in &graph.edges {
            if usize::from(e.bond) > BOND_KINDS
                || e.u >= graph.node_count()
                || e.v >= graph.node_count()
            {
                return Err(Error::Invalid(format!("edge {e:?} invalid in graph {gi}")));
            }
            for (a, b) in [(e.u, e.v), (e.v, e.u)] {
                src.push(base + a);
                dst.push(base + b);
                bonds.push(usize::from(e.bond));
            }
        }
    }
    let nodes = labels.len();
    let mut h = p
        .get(&format!("{name}.emb_label"))?
        .select_rows(&labels)?
        .add(&p.get(&format!("{name}.emb_tag"))?.select_rows(&tags)?)?;
    let edge_emb = if bonds.is_empty() {
        None
    } else {
        Some(p.get(&format!("{name}.emb_bond"))?.select_rows(&bonds)?)
    };
    for l in 0..p.dims.gin_layers {
        let prefix = format!("{name}.gin{l}");
        let self_weight = p.get(&format!("{prefix}.eps"))?.add_scalar(T::one())?;
        let mut agg = h.mul(&self_weight)?;
        if let Some(e) = &edge_emb {
            let msg = h.select_rows(&src)?.add(e)?.segment_sum(&dst, nodes)?;
            agg = agg.add(&msg)?;
        }
        h = p.mlp(&agg, &prefix)?.tanh()?;
    }
    h.segment_sum(&owner, graphs.len())
}

/// Count, centroid and per-axis variance of each channel, with coordinates
/// scaled to `[0, 1)` by the grid side. Empty channels give zeros.
pub fn voxel_stats(grid: &VoxelGrid) -> Vec<f64> {
    let mut out = vec![0.0; VOXEL_FEATURES];
    let side = grid.side as f64;
    for c in 0..GRID_CHANNELS.min(grid.channels) {
        let pts: Vec<[f64; 3]> = grid
            .points
            .iter()
            .filter(|p| usize::from(p.channel) == c)
            .map(|p| p.pos.map(|x| f64::from(x) / side))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let n = pts.len() as f64;
        let row = &mut out[c * VOXEL_STATS_PER_CHANNEL..(c + 1) * VOXEL_STATS_PER_CHANNEL];
        row[0] = n;
        for axis in 0..3 {
            let mean = pts.iter().map(|p| p[axis]).sum::<f64>() / n;
            let var = pts.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / n;
            row[1 + axis] = mean;
            row[4 + axis] = var;
        }
    }
    out
}

fn encode_voxels<T: Scalar>(
    p: &BoundParams<T>,
    m: Modality,
    grids: &[VoxelGrid],
) -> Result<Tensor<T>> {
    let mut feats = Vec::with_capacity(grids.len() * VOXEL_FEATURES);
    for (i, grid) in grids.iter().enumerate() {
        if grid.points.is_empty() {
            return Err(Error::Invalid(format!("voxel grid {i} is empty")));
        }
        feats.extend(voxel_stats(grid).into_iter().map(T::lit));
    }
    let g = p.get(&format!("{}.fc0.w", m.name()))?.graph().clone();
    let x = g.constant(vec![grids.len(), VOXEL_FEATURES], feats)?;
    p.mlp(&x, m.name())
}

fn encode_features<T: Scalar>(
    p: &BoundParams<T>,
    m: Modality,
    dim: usize,
    views: &[Vec<f64>],
) -> Result<Tensor<T>> {
    let mut feats = Vec::with_capacity(views.len() * dim);
    for v in views {
        if v.len() != dim {
            return Err(Error::ShapeMismatch {
                op: "encode_features",
                lhs: vec![dim],
                rhs: vec![v.len()],
            });
        }
        feats.extend(v.iter().map(|&x| T::lit(x)));
    }
    let g = p.get(&format!("{}.fc0.w", m.name()))?.graph().clone();
    let x = g.constant(vec![views.len(), dim], feats)?;
    p.mlp(&x, m.name())
}

/// Projection head followed by row normalization: `[N, h] -> [N, d]`.
pub fn project_batch<T: Scalar>(
    p: &BoundParams<T>,
    m: Modality,
    h: &Tensor<T>,
) -> Result<Tensor<T>> {
    let name = m.name();
    let hidden = p.dense(h, &format!("{name}.proj0"))?.tanh()?;
    p.dense(&hidden, &format!("{name}.proj1"))?.l2_normalize()
}

/// Encode then project.
pub fn embed<T: Scalar>(
    p: &BoundParams<T>,
    m: Modality,
    input: ModalInput<'_>,
) -> Result<Tensor<T>> {
    project_batch(p, m, &encode_batch(p, m, input)?)
}

fn single<T: Scalar>(t: Tensor<T>) -> Result<Tensor<T>> {
    let n = t.numel();
    t.reshape(vec![n])
}

pub fn encode_seq<T: Scalar>(
    tokens: &TokenSeq,
    p: &BoundParams<T>,
    m: Modality,
) -> Result<Tensor<T>> {
    single(encode_batch(
        p,
        m,
        ModalInput::Tokens(std::slice::from_ref(tokens)),
    )?)
}

pub fn encode_graph<T: Scalar>(
    graph: &MolGraph,
    p: &BoundParams<T>,
    m: Modality,
) -> Result<Tensor<T>> {
    single(encode_batch(
        p,
        m,
        ModalInput::Graphs(std::slice::from_ref(graph)),
    )?)
}

pub fn encode_voxel<T: Scalar>(
    grid: &VoxelGrid,
    p: &BoundParams<T>,
    m: Modality,
) -> Result<Tensor<T>> {
    single(encode_batch(
        p,
        m,
        ModalInput::Voxels(std::slice::from_ref(grid)),
    )?)
}

pub fn encode_continuous<T: Scalar>(
    view: &[f64],
    p: &BoundParams<T>,
    m: Modality,
) -> Result<Tensor<T>> {
    single(encode_batch(p, m, ModalInput::Features(&[view.to_vec()]))?)
}

/// Projects a single hidden vector `[h]` to the unit sphere.
pub fn project<T: Scalar>(h: &Tensor<T>, p: &BoundParams<T>, m: Modality) -> Result<Tensor<T>> {
    let row = h.reshape(vec![1, h.numel()])?;
    single(project_batch(p, m, &row)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointTensor {
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: u32,
    dims: EncoderDims,
    tensors: Vec<CheckpointTensor>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            dims: self.dims,
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| CheckpointTensor {
                    name: name.clone(),
                    kind: t.kind,
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|x| x.as_f64()).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let reference = init_params::<T>(0, ck.dims)?;
        let mut tensors = BTreeMap::new();
        for t in ck.tensors {
            let expected = reference
                .get(&t.name)
                .ok_or_else(|| Error::Invalid(format!("unexpected tensor {}", t.name)))?;
            if expected.shape != t.shape || t.data.len() != expected.data.len() {
                return Err(Error::ShapeMismatch {
                    op: "load_checkpoint",
                    lhs: expected.shape.clone(),
                    rhs: t.shape,
                });
            }
            let data = t.data.into_iter().map(T::lit).collect();
            tensors.insert(
                t.name,
                ParamTensor {
                    kind: t.kind,
                    shape: t.shape,
                    data,
                },
            );
        }
        if tensors.len() != reference.len() {
            return Err(Error::Invalid("checkpoint is missing tensors".into()));
        }
        Ok(Self {
            dims: ck.dims,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
