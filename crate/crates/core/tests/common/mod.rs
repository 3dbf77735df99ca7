#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use trimodal_core::modalities::augment::{
    augment_graph, augment_tokens, augment_voxels, masked_count, nearest_points,
};
use trimodal_core::modalities::molecule::{MASK_AT, MASK_BO};
use trimodal_core::modalities::{gen_toy_molecule, MolGraph, Strategy, TokenKind, ToyMolecule};
use trimodal_core::{Graph, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Vec<f64> {
    let mut x = gaussian(rng, rows * d);
    for r in x.chunks_mut(d) {
        let n = dot(r, r).sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    x
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn row(x: &[f64], d: usize, i: usize) -> &[f64] {
    &x[i * d..(i + 1) * d]
}

pub fn constant(g: &Graph, rows: usize, d: usize, data: &[f64]) -> Tensor {
    g.constant(vec![rows, d], data.to_vec()).unwrap()
}

/// Random orthogonal `d x d` matrix (row-major) by Gram-Schmidt.
pub fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v = gaussian(rng, d);
        for b in &q {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q.concat()
}

/// Applies `x -> R x + t` to every row.
pub fn transform_rows(x: &[f64], d: usize, rot: &[f64], shift: &[f64]) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|r| (0..d).map(move |i| dot(&rot[i * d..(i + 1) * d], r) + shift[i]))
        .collect()
}

/// Largest element-wise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_rel(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// A generated molecule whose graph nodes carry unique labels so they can
/// be tracked through node drop.
pub fn labeled_graph(rng: &mut ChaCha8Rng) -> MolGraph {
    let mut g = gen_toy_molecule(rng, 5, 16).unwrap().graph;
    for (i, n) in g.nodes.iter_mut().enumerate() {
        n.label = i as u8 + 1;
    }
    g
}

fn connected_subset(g: &MolGraph, members: &[usize]) -> bool {
    if members.is_empty() {
        return true;
    }
    let inside: Vec<bool> = (0..g.node_count()).map(|v| members.contains(&v)).collect();
    let adj = g.adjacency();
    let mut seen = vec![false; g.node_count()];
    let mut stack = vec![members[0]];
    seen[members[0]] = true;
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if inside[u] && !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    members.iter().all(|&v| seen[v])
}

/// Node drop removes exactly the expected count and keeps precisely the
/// edges among surviving nodes.
pub fn check_node_drop(trials: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for t in 0..trials {
        let g = labeled_graph(&mut r);
        let ratio = [0.2, 0.1, 0.35][t % 3];
        let out =
            augment_graph(&g, Strategy::NodeDrop, ratio, &mut r).map_err(|e| e.to_string())?;
        let k = masked_count(ratio, g.node_count());
        if out.node_count() != g.node_count() - k {
            return Err(format!(
                "trial {t}: {} nodes left of {}, expected {k} dropped",
                out.node_count(),
                g.node_count()
            ));
        }
        out.validate().map_err(|e| format!("trial {t}: {e}"))?;
        let original = |label: u8| label as usize - 1;
        let kept: Vec<usize> = out.nodes.iter().map(|n| original(n.label)).collect();
        let mut expected: Vec<(usize, usize, u8)> = g
            .edges
            .iter()
            .filter(|e| kept.contains(&e.u) && kept.contains(&e.v))
            .map(|e| (e.u.min(e.v), e.u.max(e.v), e.bond))
            .collect();
        let mut got: Vec<(usize, usize, u8)> = out
            .edges
            .iter()
            .map(|e| {
                let (u, v) = (kept[e.u], kept[e.v]);
                (u.min(v), u.max(v), e.bond)
            })
            .collect();
        expected.sort_unstable();
        got.sort_unstable();
        if expected != got {
            return Err(format!(
                "trial {t}: edge set after drop is {got:?}, expected {expected:?}"
            ));
        }
    }
    Ok(())
}

/// Node and edge masking touch exactly `ceil(ratio * count)` units each.
pub fn check_graph_mask_counts(trials: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for t in 0..trials {
        let g = labeled_graph(&mut r);
        let ratio = [0.2, 0.05, 0.5][t % 3];
        let out =
            augment_graph(&g, Strategy::NodeMask, ratio, &mut r).map_err(|e| e.to_string())?;
        let nodes = out.nodes.iter().filter(|n| n.label == 0).count();
        let edges = out.edges.iter().filter(|e| e.bond == 0).count();
        if nodes != masked_count(ratio, g.node_count())
            || edges != masked_count(ratio, g.edges.len())
        {
            return Err(format!(
                "trial {t}: masked {nodes} nodes / {edges} edges of {} / {} at ratio {ratio}",
                g.node_count(),
                g.edges.len()
            ));
        }
    }
    Ok(())
}

/// Subgraph masking hides a connected region of the expected size together
/// with exactly its internal edges.
pub fn check_subgraph_mask(trials: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for t in 0..trials {
        let g = labeled_graph(&mut r);
        let ratio = [0.05, 0.2, 0.4][t % 3];
        let out =
            augment_graph(&g, Strategy::SubgraphMask, ratio, &mut r).map_err(|e| e.to_string())?;
        let masked: Vec<usize> = (0..g.node_count())
            .filter(|&v| out.nodes[v].label == 0)
            .collect();
        if masked.len() != masked_count(ratio, g.node_count()) {
            return Err(format!("trial {t}: {} nodes masked", masked.len()));
        }
        if !connected_subset(&g, &masked) {
            return Err(format!(
                "trial {t}: masked region {masked:?} is not connected"
            ));
        }
        for (e, o) in g.edges.iter().zip(&out.edges) {
            let internal = masked.contains(&e.u) && masked.contains(&e.v);
            if (o.bond == 0) != internal {
                return Err(format!(
                    "trial {t}: edge {e:?} masking does not match the region"
                ));
            }
        }
    }
    Ok(())
}

fn mask_positions(tokens: &[u32]) -> Vec<usize> {
    (0..tokens.len())
        .filter(|&i| tokens[i] == MASK_AT || tokens[i] == MASK_BO)
        .collect()
}

/// Token masking preserves length, hits the expected atom/bond counts under
/// NM and never splits a branch or ring span under SM.
pub fn check_token_masks(trials: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for t in 0..trials {
        let mol = gen_toy_molecule(&mut r, 4, 16).map_err(|e| e.to_string())?;
        let seq = &mol.tokens;
        let atoms = seq.atom_count();
        let bonds = seq.kinds().filter(|k| k.is_bond()).count();
        let ratio = [0.2, 0.05, 0.3][t % 3];

        let nm =
            augment_tokens(seq, Strategy::NodeMask, ratio, &mut r).map_err(|e| e.to_string())?;
        let at = nm.tokens.iter().filter(|&&x| x == MASK_AT).count();
        let bo = nm.tokens.iter().filter(|&&x| x == MASK_BO).count();
        if nm.len() != seq.len()
            || at != masked_count(ratio, atoms)
            || bo != masked_count(ratio, bonds)
        {
            return Err(format!(
                "trial {t}: NM masked {at} atoms / {bo} bonds of {atoms} / {bonds}"
            ));
        }

        let sm = augment_tokens(seq, Strategy::SubgraphMask, ratio, &mut r)
            .map_err(|e| e.to_string())?;
        if sm.len() != seq.len() {
            return Err(format!("trial {t}: SM changed the length"));
        }
        let hit = mask_positions(&sm.tokens);
        let masked_atoms = hit.iter().filter(|&&i| sm.tokens[i] == MASK_AT).count();
        if masked_atoms < masked_count(ratio, atoms) {
            return Err(format!("trial {t}: SM masked only {masked_atoms} atoms"));
        }
        for s in &seq.spans {
            let inside = s.range().filter(|i| hit.contains(i)).count();
            let maskable = s
                .range()
                .filter(|&i| {
                    !matches!(
                        TokenKind::from_id(seq.tokens[i]),
                        Some(TokenKind::Nop) | None
                    )
                })
                .count();
            if inside != 0 && inside != maskable {
                return Err(format!(
                    "trial {t}: span {s:?} partially masked ({inside} of {maskable})"
                ));
            }
        }
    }
    Ok(())
}

/// Voxel masking moves points into channel 0 without changing where they
/// are; SM picks a nearest-neighbor set of some anchor.
pub fn check_voxel_masks(trials: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for t in 0..trials {
        let mol: ToyMolecule = gen_toy_molecule(&mut r, 4, 16).map_err(|e| e.to_string())?;
        let grid = &mol.voxels;
        let n = grid.total_occupancy();
        let ratio = [0.2, 0.05, 0.3][t % 3];
        for strategy in [Strategy::NodeMask, Strategy::SubgraphMask] {
            let out = augment_voxels(grid, strategy, ratio, &mut r).map_err(|e| e.to_string())?;
            if out.total_occupancy() != n {
                return Err(format!(
                    "trial {t}: occupancy {} != {n}",
                    out.total_occupancy()
                ));
            }
            let occ_in = grid.occupancy();
            let occ_out = out.occupancy();
            let per_cell = |occ: &[u32]| -> Vec<u32> {
                occ.chunks(grid.channels).map(|c| c.iter().sum()).collect()
            };
            if per_cell(&occ_in) != per_cell(&occ_out) {
                return Err(format!("trial {t}: a point moved between cells"));
            }
            let masked: Vec<usize> = (0..n).filter(|&i| out.points[i].channel == 0).collect();
            if masked.len() != masked_count(ratio, n) {
                return Err(format!(
                    "trial {t}: {} points masked, expected {}",
                    masked.len(),
                    masked_count(ratio, n)
                ));
            }
            if strategy == Strategy::SubgraphMask
                && !(0..n).any(|a| knn_by_sort(grid, a, masked.len()) == masked)
            {
                return Err(format!(
                    "trial {t}: SM set {masked:?} is no anchor's nearest-neighbor set"
                ));
            }
        }
        let anchor = r.random_range(0..n);
        let k = r.random_range(1..=n);
        if nearest_points(grid, anchor, k) != knn_by_sort(grid, anchor, k) {
            return Err(format!(
                "trial {t}: nearest_points disagrees with full sort"
            ));
        }
    }
    Ok(())
}

/// `k` nearest points to `anchor` by a full sort on (squared distance, index).
pub fn knn_by_sort(
    grid: &trimodal_core::modalities::VoxelGrid,
    anchor: usize,
    k: usize,
) -> Vec<usize> {
    let a = grid.points[anchor].pos;
    let mut order: Vec<(i64, usize)> = grid
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d: i64 = (0..3).map(|c| (p.pos[c] as i64 - a[c] as i64).pow(2)).sum();
            (d, i)
        })
        .collect();
    order.sort();
    let mut idx: Vec<usize> = order[..k].iter().map(|&(_, i)| i).collect();
    idx.sort_unstable();
    idx
}
