//! Synthetic trimodal data and per-representation augmentations.
//!
//! Two families are provided. Latent-factor samples give three continuous
//! views of a shared Gaussian latent. Toy molecules give a token string, a
//! labeled graph and a voxel grid built from the same random structure.

pub mod augment;
pub mod corpus;
pub mod latent;
pub mod molecule;

pub use augment::{augment_graph, augment_tokens, augment_voxels, AugmentPolicy, Strategy};
pub use corpus::{read_corpus, write_corpus};
pub use latent::{gen_latent_batch, FeatureAugment, LatentGenerator, LatentSample};
pub use molecule::{
    gen_toy_molecule, Edge, MolGraph, NodeFeatures, Span, TokenKind, TokenSeq, ToyMolecule,
    VoxelGrid, VoxelPoint,
};
