//! Drawing augmented trimodal batches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderDims, ModalInput};
use crate::error::{Error, Result};
use crate::modalities::{
    gen_toy_molecule, AugmentPolicy, FeatureAugment, LatentGenerator, MolGraph, TokenSeq, VoxelGrid,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Latent {
        k: usize,
        view_dims: [usize; 3],
        noise_sigma: f64,
        augment: FeatureAugment,
    },
    Molecule {
        min_nodes: usize,
        max_nodes: usize,
        policy: AugmentPolicy,
    },
}

impl DataConfig {
    pub fn latent_default() -> Self {
        DataConfig::Latent {
            k: 8,
            view_dims: [32, 24, 16],
            noise_sigma: 0.05,
            augment: FeatureAugment {
                mask_ratio: 0.2,
                jitter: 0.05,
            },
        }
    }

    pub fn molecule_default() -> Self {
        DataConfig::Molecule {
            min_nodes: 6,
            max_nodes: 16,
            policy: AugmentPolicy::standard(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DataConfig::Latent {
                k,
                view_dims,
                noise_sigma,
                augment,
            } => {
                if *k == 0 || view_dims.contains(&0) || !(*noise_sigma >= 0.0) {
                    return Err(Error::Config(format!(
                        "latent data needs k > 0, positive view dims and noise >= 0 (k={k}, dims={view_dims:?}, noise={noise_sigma})"
                    )));
                }
                augment.validate()
            }
            DataConfig::Molecule {
                min_nodes,
                max_nodes,
                policy,
            } => {
                if *min_nodes < 2 || max_nodes < min_nodes {
                    return Err(Error::Config(format!(
                        "node range {min_nodes}..={max_nodes} must satisfy 2 <= min <= max"
                    )));
                }
                policy.validate()
            }
        }
    }

    pub fn encoder_dims(&self, hidden: usize, joint: usize) -> EncoderDims {
        match self {
            DataConfig::Latent { view_dims, .. } => {
                EncoderDims::continuous(*view_dims, hidden, joint)
            }
            DataConfig::Molecule { .. } => EncoderDims::molecular(hidden, joint),
        }
    }
}

/// Owned inputs for one modality.
#[derive(Debug, Clone, PartialEq)]
pub enum ModalData {
    Tokens(Vec<TokenSeq>),
    Graphs(Vec<MolGraph>),
    Voxels(Vec<VoxelGrid>),
    Features(Vec<Vec<f64>>),
}

impl ModalData {
    pub fn as_input(&self) -> ModalInput<'_> {
        match self {
            ModalData::Tokens(x) => ModalInput::Tokens(x),
            ModalData::Graphs(x) => ModalInput::Graphs(x),
            ModalData::Voxels(x) => ModalInput::Voxels(x),
            ModalData::Features(x) => ModalInput::Features(x),
        }
    }
}

/// Two augmentations of each of `B` samples per modality; rows `2s` and
/// `2s + 1` come from sample `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub batch: usize,
    pub data: [ModalData; 3],
}

/// Sample generator plus augmentation for one data family.
#[derive(Debug, Clone)]
pub enum Source {
    Latent {
        generator: LatentGenerator,
        augment: FeatureAugment,
    },
    Molecule {
        min_nodes: usize,
        max_nodes: usize,
        policy: AugmentPolicy,
    },
}

impl Source {
    /// The latent generator's fixed maps are drawn from `generator_seed`.
    pub fn new(cfg: &DataConfig, generator_seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg {
            DataConfig::Latent {
                k,
                view_dims,
                noise_sigma,
                augment,
            } => Source::Latent {
                generator: LatentGenerator::new(generator_seed, *k, *view_dims, *noise_sigma)?,
                augment: *augment,
            },
            DataConfig::Molecule {
                min_nodes,
                max_nodes,
                policy,
            } => Source::Molecule {
                min_nodes: *min_nodes,
                max_nodes: *max_nodes,
                policy: policy.clone(),
            },
        })
    }

    pub fn draw<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &self,
        batch: usize,
        data_rng: &mut R1,
        aug_rng: &mut R2,
    ) -> Result<AugmentedBatch> {
        if batch < 2 {
            return Err(Error::BatchTooSmall(batch));
        }
        match self {
            Source::Latent { generator, augment } => {
                let samples = generator.sample_batch(data_rng, batch);
                let mut views: [Vec<Vec<f64>>; 3] = Default::default();
                for s in &samples {
                    for (m, out) in views.iter_mut().enumerate() {
                        for _ in 0..2 {
                            out.push(augment.apply(&s.views[m], aug_rng));
                        }
                    }
                }
                Ok(AugmentedBatch {
                    batch,
                    data: views.map(ModalData::Features),
                })
            }
            Source::Molecule {
                min_nodes,
                max_nodes,
                policy,
            } => {
                let mut graphs = Vec::with_capacity(2 * batch);
                let mut tokens = Vec::with_capacity(2 * batch);
                let mut voxels = Vec::with_capacity(2 * batch);
                for _ in 0..batch {
                    let mol = gen_toy_molecule(data_rng, *min_nodes, *max_nodes)?;
                    for _ in 0..2 {
                        let a = policy.apply(&mol, aug_rng)?;
                        graphs.push(a.graph);
                        tokens.push(a.tokens);
                        voxels.push(a.voxels);
                    }
                }
                Ok(AugmentedBatch {
                    batch,
                    data: [
                        ModalData::Graphs(graphs),
                        ModalData::Tokens(tokens),
                        ModalData::Voxels(voxels),
                    ],
                })
            }
        }
    }
}
