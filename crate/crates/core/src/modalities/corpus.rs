//! Line-delimited JSON dumps of generated molecules.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::molecule::{
    Edge, MolGraph, NodeFeatures, Span, TokenSeq, ToyMolecule, VoxelGrid, VoxelPoint,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tokens: Vec<u32>,
    spans: Vec<Span>,
    nodes: Vec<NodeFeatures>,
    edges: Vec<Edge>,
    points: Vec<VoxelPoint>,
}

pub fn write_corpus<W: Write>(mut out: W, molecules: &[ToyMolecule]) -> Result<()> {
    for m in molecules {
        let rec = Record {
            tokens: m.tokens.tokens.clone(),
            spans: m.tokens.spans.clone(),
            nodes: m.graph.nodes.clone(),
            edges: m.graph.edges.clone(),
            points: m.voxels.points.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<ToyMolecule>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Invalid(format!("corpus line {}: {e}", i + 1)))?;
        let m = ToyMolecule {
            tokens: TokenSeq {
                tokens: rec.tokens,
                spans: rec.spans,
            },
            graph: MolGraph {
                nodes: rec.nodes,
                edges: rec.edges,
            },
            voxels: VoxelGrid {
                points: rec.points,
                ..VoxelGrid::empty()
            },
        };
        m.tokens.validate()?;
        m.graph.validate()?;
        out.push(m);
    }
    Ok(out)
}
