//! The transformer: token embeddings, structure-biased attention with domain-routed
//! experts, and the prediction heads.

mod forward;
mod init;
mod sample;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::GraphError;
use crate::numcore::NumError;

pub use forward::{
    affinity_head, attention_bias, block_forward, classify_head, embed, encode, forward_encode, mode_ffn, noise_head,
    retrieval_projection, token_head, EncodeMode, Encoded, BIAS_SENTINEL,
};
pub use init::{add_task_heads, init_params, TaskHead};
pub use sample::{Sample, TokenBatch};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {0} outside the vocabulary of {1}")]
    IdOutOfVocab(usize, usize),
    #[error("3D channel requested for a sample without coordinates")]
    MissingCoords,
    #[error("mode {mode:?} does not match sample contents: {why}")]
    ModeMismatch { mode: EncodeMode, why: &'static str },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    #[default]
    Desk,
    Large,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BitConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub atom_vocab: usize,
    pub degree_cap: usize,
    pub d_max: usize,
    pub kernels: usize,
    pub edge_dim: usize,
    pub retrieval_dim: usize,
    pub dropout_embed: f64,
    pub dropout_attn: f64,
    pub dropout_hidden: f64,
    pub enable_2d: bool,
    pub enable_3d: bool,
    pub enable_mode: bool,
    pub enable_mose: bool,
}

impl Default for BitConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl BitConfig {
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            layers: 4,
            hidden: 64,
            heads: 8,
            ffn_mult: 4,
            atom_vocab: 118,
            degree_cap: crate::encode::DEFAULT_DEGREE_CAP,
            d_max: crate::encode::DEFAULT_D_MAX,
            kernels: 16,
            edge_dim: 8,
            retrieval_dim: 32,
            dropout_embed: 0.0,
            dropout_attn: 0.0,
            dropout_hidden: 0.0,
            enable_2d: true,
            enable_3d: true,
            enable_mode: true,
            enable_mose: true,
        };
        match p {
            Preset::Desk => base,
            Preset::Tiny => Self {
                layers: 2,
                hidden: 32,
                heads: 4,
                ffn_mult: 2,
                kernels: 8,
                edge_dim: 4,
                retrieval_dim: 16,
                ..base
            },
            Preset::Large => Self {
                layers: 12,
                hidden: 768,
                heads: 32,
                kernels: 128,
                edge_dim: 32,
                retrieval_dim: 256,
                dropout_attn: 0.1,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn_mult == 0 {
            return bad("layers, hidden, heads and ffn_mult must be positive");
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden must be divisible by heads");
        }
        if self.kernels == 0 {
            return bad("kernels must be at least 1");
        }
        if self.d_max == 0 || self.edge_dim == 0 || self.retrieval_dim == 0 {
            return bad("d_max, edge_dim and retrieval_dim must be positive");
        }
        if self.atom_vocab == 0 || self.atom_vocab > crate::molgraph::MAX_ELEMENT as usize {
            return bad("atom_vocab must be in 1..=118");
        }
        for p in [self.dropout_embed, self.dropout_attn, self.dropout_hidden] {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout rates must be in [0, 1)");
            }
        }
        Ok(())
    }

    pub fn mask_id(&self) -> usize {
        self.atom_vocab
    }

    pub fn mol_vnode_id(&self) -> usize {
        self.atom_vocab + 1
    }

    pub fn pocket_vnode_id(&self) -> usize {
        self.atom_vocab + 2
    }

    pub fn pad_id(&self) -> usize {
        self.atom_vocab + 3
    }

    /// Rows of the token embedding table.
    pub fn token_rows(&self) -> usize {
        self.atom_vocab + 4
    }

    /// Token id of an element; elements map to `z - 1`.
    pub fn element_id(&self, z: u8) -> Result<usize, ModelError> {
        let id = (z as usize).wrapping_sub(1);
        if z == 0 || id >= self.atom_vocab {
            return Err(ModelError::IdOutOfVocab(z as usize, self.atom_vocab));
        }
        Ok(id)
    }

    /// Degree-embedding bucket for virtual nodes.
    pub fn virtual_degree(&self) -> usize {
        self.degree_cap + 1
    }
}
