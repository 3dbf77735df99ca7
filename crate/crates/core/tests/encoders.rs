mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use trimodal_core::encoders::{
    embed, encode_batch, encode_continuous, encode_graph, encode_voxel, init_params, project,
    EncoderDims, EncoderParams, ModalInput,
};
use trimodal_core::gradcheck::{check_gradient, FD_STEP, GRAD_TOL};
use trimodal_core::losses::{total_objective, LossConfig, Modality, TriBatch};
use trimodal_core::modalities::molecule::{Edge, MolGraph, NodeFeatures};
use trimodal_core::modalities::{gen_toy_molecule, AugmentPolicy, ToyMolecule};
use trimodal_core::Graph;

fn mol_params(seed: u64) -> EncoderParams<f64> {
    init_params(seed, EncoderDims::molecular(16, 8)).unwrap()
}

fn permuted(graph: &MolGraph, perm: &[usize]) -> MolGraph {
    // perm[old] = new
    let mut nodes = vec![NodeFeatures::MASKED; graph.nodes.len()];
    for (old, f) in graph.nodes.iter().enumerate() {
        nodes[perm[old]] = *f;
    }
    let mut edges: Vec<Edge> = graph
        .edges
        .iter()
        .map(|e| Edge {
            u: perm[e.u],
            v: perm[e.v],
            bond: e.bond,
        })
        .collect();
    edges.reverse();
    MolGraph { nodes, edges }
}

#[test]
fn graph_encoder_is_permutation_invariant() {
    let p = mol_params(1);
    let g = Graph::new();
    let b = p.bind(&g).unwrap();
    let mut r = rng(2);
    for _ in 0..30 {
        let m = gen_toy_molecule(&mut r, 3, 16).unwrap();
        let mut perm: Vec<usize> = (0..m.graph.node_count()).collect();
        perm.shuffle(&mut r);
        let h1 = encode_graph(&m.graph, &b, Modality::Main).unwrap();
        let h2 = encode_graph(&permuted(&m.graph, &perm), &b, Modality::Main).unwrap();
        let err = max_rel(h1.data(), h2.data(), 1e-8);
        assert!(
            h1.data()
                .iter()
                .zip(h2.data())
                .all(|(a, c)| (a - c).abs() <= 1e-12),
            "{err}"
        );
    }
}

#[test]
fn path_and_star_are_distinguished() {
    let node = NodeFeatures { label: 1, tag: 1 };
    let edge = |u, v| Edge { u, v, bond: 1 };
    let path = MolGraph {
        nodes: vec![node; 4],
        edges: vec![edge(0, 1), edge(1, 2), edge(2, 3)],
    };
    let star = MolGraph {
        nodes: vec![node; 4],
        edges: vec![edge(0, 1), edge(0, 2), edge(0, 3)],
    };
    for seed in 0..20 {
        let p = mol_params(seed);
        let g = Graph::new();
        let b = p.bind(&g).unwrap();
        let h1 = encode_graph(&path, &b, Modality::Main).unwrap();
        let h2 = encode_graph(&star, &b, Modality::Main).unwrap();
        let gap: f64 = h1
            .data()
            .iter()
            .zip(h2.data())
            .map(|(a, c)| (a - c).abs())
            .sum();
        assert!(gap > 1e-6, "seed {seed}: {gap}");
    }
}

#[test]
fn glorot_variance() {
    let p = mol_params(3);
    let p = init_params::<f64>(
        3,
        EncoderDims {
            hidden: 100,
            ..p.dims
        },
    )
    .unwrap();
    let w = p.get("main.gin0.fc0.w").unwrap();
    assert_eq!(w.shape, vec![100, 100]);
    let n = w.data.len() as f64;
    let mean = w.data.iter().sum::<f64>() / n;
    let var = w.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let expected = 2.0 / 200.0;
    assert!((var / expected - 1.0).abs() <= 0.1, "{var} vs {expected}");
}

#[test]
fn projections_are_unit_norm() {
    let p = init_params::<f64>(4, EncoderDims::continuous([5, 6, 7], 12, 8)).unwrap();
    let g = Graph::new();
    let b = p.bind(&g).unwrap();
    let mut r = rng(5);
    for m in Modality::ALL {
        let dim = [5, 6, 7][m.index()];
        for _ in 0..20 {
            let x = gaussian(&mut r, dim);
            let z = project(&encode_continuous(&x, &b, m).unwrap(), &b, m).unwrap();
            assert_eq!(z.shape(), &[8]);
            assert!((dot(z.data(), z.data()).sqrt() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn input_scale_reaches_the_output() {
    let p = init_params::<f64>(6, EncoderDims::continuous([4, 4, 4], 8, 4)).unwrap();
    let g = Graph::new();
    let b = p.bind(&g).unwrap();
    let x = [0.3, -0.1, 0.2, 0.05];
    let x2: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
    let z1 = embed(&b, Modality::Aux1, ModalInput::Features(&[x.to_vec()])).unwrap();
    let z2 = embed(&b, Modality::Aux1, ModalInput::Features(&[x2])).unwrap();
    let gap: f64 = z1
        .data()
        .iter()
        .zip(z2.data())
        .map(|(a, c)| (a - c).abs())
        .sum();
    assert!(gap > 1e-6);
}

#[test]
fn voxel_translation_changes_features() {
    let p = mol_params(7);
    let g = Graph::new();
    let b = p.bind(&g).unwrap();
    let mut r = rng(8);
    for _ in 0..10 {
        let m = gen_toy_molecule(&mut r, 3, 10).unwrap();
        let mut moved = m.voxels.clone();
        let max_x = moved.points.iter().map(|q| q.pos[0]).max().unwrap();
        let shift = if (max_x as usize) + 1 < moved.side {
            1
        } else {
            -1i16
        };
        for q in &mut moved.points {
            q.pos[0] = (q.pos[0] as i16 + shift) as u8;
        }
        let h1 = encode_voxel(&m.voxels, &b, Modality::Aux2).unwrap();
        let h2 = encode_voxel(&moved, &b, Modality::Aux2).unwrap();
        let gap: f64 = h1
            .data()
            .iter()
            .zip(h2.data())
            .map(|(a, c)| (a - c).abs())
            .sum();
        assert!(gap > 1e-9);
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let p = mol_params(9);
    let g = Graph::new();
    let b = p.bind(&g).unwrap();
    let m = gen_toy_molecule(&mut rng(1), 3, 6).unwrap();
    assert!(encode_batch(
        &b,
        Modality::Main,
        ModalInput::Voxels(std::slice::from_ref(&m.voxels))
    )
    .is_err());
    assert!(encode_batch(&b, Modality::Main, ModalInput::Graphs(&[])).is_err());
}

fn augmented_pairs(b: usize, seed: u64) -> Vec<ToyMolecule> {
    let mut r = rng(seed);
    let policy = AugmentPolicy::standard();
    let mut out = Vec::new();
    for _ in 0..b {
        let m = gen_toy_molecule(&mut r, 4, 7).unwrap();
        out.push(policy.apply(&m, &mut r).unwrap());
        out.push(policy.apply(&m, &mut r).unwrap());
    }
    out
}

/// End to end: augmented molecules through all three encoders into the full
/// objective, checked against finite differences for every parameter.
#[test]
fn pipeline_gradient_over_all_parameters() {
    let mols = augmented_pairs(2, 10);
    let graphs: Vec<_> = mols.iter().map(|m| m.graph.clone()).collect();
    let tokens: Vec<_> = mols.iter().map(|m| m.tokens.clone()).collect();
    let voxels: Vec<_> = mols.iter().map(|m| m.voxels.clone()).collect();
    let mut params = init_params::<f64>(11, EncoderDims::molecular(4, 8)).unwrap();
    let mut r = rng(12);
    for (_, t) in params.iter_mut() {
        for v in &mut t.data {
            *v += 0.1 * r.random_range(-1.0..1.0);
        }
    }
    let cfg = LossConfig::default();
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut worst = 0.0f64;
    for name in &names {
        let x = params.get(name).unwrap().data.clone();
        let shape = params.get(name).unwrap().shape.clone();
        let chk = check_gradient(
            |leaf| {
                let b = params.bind_with(leaf.graph(), name, leaf)?;
                let z = [
                    embed(&b, Modality::Main, ModalInput::Graphs(&graphs))?,
                    embed(&b, Modality::Aux1, ModalInput::Tokens(&tokens))?,
                    embed(&b, Modality::Aux2, ModalInput::Voxels(&voxels))?,
                ];
                let [a, c, d] = z;
                Ok(total_objective(&TriBatch::new(a, c, d)?, &cfg)?.total)
            },
            &x,
            &shape,
            FD_STEP,
        )
        .unwrap();
        worst = worst.max(chk.max_rel_err);
        assert!(chk.passes(GRAD_TOL), "{name}: {}", chk.max_rel_err);
    }
    eprintln!(
        "{} parameter tensors, worst rel err {worst:.2e}",
        names.len()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn checkpoints_round_trip_bit_exactly(
        seed in 0u64..1000,
        hidden in 1usize..6,
        joint in 1usize..5,
        scale in prop::sample::select(vec![1e-300, 1e-7, 1.0, 3.7e5, 1e300]),
    ) {
        let mut p = init_params::<f64>(seed, EncoderDims::molecular(hidden, joint)).unwrap();
        let mut r = rng(seed);
        for (_, t) in p.iter_mut() {
            for v in &mut t.data {
                *v = scale * r.random_range(-1.0..1.0);
            }
        }
        let back = EncoderParams::<f64>::from_json(&p.to_json().unwrap()).unwrap();
        for ((n1, a), (n2, b)) in p.iter().zip(back.iter()) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(a.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            b.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let p = mol_params(13);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    p.save(&path).unwrap();
    assert_eq!(EncoderParams::<f64>::load(&path).unwrap(), p);
    std::fs::write(&path, "{}").unwrap();
    assert!(EncoderParams::<f64>::load(&path).is_err());
}
