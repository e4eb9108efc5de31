use std::rc::Rc;

use super::{BitConfig, ModelError};
use crate::encode::{StructuralEncoding, TokenSlot};
use crate::molgraph::{Domain, MolecularGraph};

/// One tokenized instance: ids, domain tags, structure, and channel flags.
///
/// Padding tokens are appended after the real tokens; they attend to nothing
/// and nothing attends to them.
#[derive(Clone, Debug)]
pub struct Sample {
    pub tokens: Vec<usize>,
    pub domains: Vec<Domain>,
    pub enc: StructuralEncoding,
    /// Unit directions between real tokens (n_real²), present with coordinates.
    pub dirs: Option<Vec<[f64; 3]>>,
    pub use_2d: bool,
    pub use_3d: bool,
    pub n_pad: usize,
}

impl Sample {
    pub fn build(
        cfg: &BitConfig,
        ligand: Option<&MolecularGraph>,
        pocket: Option<&MolecularGraph>,
        use_2d: bool,
        use_3d: bool,
    ) -> Result<Self, ModelError> {
        if ligand.is_none() && pocket.is_none() {
            return Err(ModelError::Config("a sample needs a ligand or a pocket".into()));
        }
        let enc = StructuralEncoding::build(ligand, pocket, cfg.d_max, cfg.degree_cap);
        if use_3d && enc.distances.is_none() {
            return Err(ModelError::MissingCoords);
        }
        let mut tokens = Vec::with_capacity(enc.n());
        let mut domains = Vec::with_capacity(enc.n());
        for slot in enc.layout.slots() {
            let (id, dom) = match slot {
                TokenSlot::MolVirtual => (cfg.mol_vnode_id(), Domain::Molecule),
                TokenSlot::Ligand(i) => {
                    (cfg.element_id(ligand.expect("ligand slot").atoms[i].element)?, Domain::Molecule)
                }
                TokenSlot::PocketVirtual => (cfg.pocket_vnode_id(), Domain::Pocket),
                TokenSlot::Pocket(i) => {
                    (cfg.element_id(pocket.expect("pocket slot").atoms[i].element)?, Domain::Pocket)
                }
            };
            tokens.push(id);
            domains.push(dom);
        }
        let dirs = if use_3d { StructuralEncoding::directions(ligand, pocket) } else { None };
        Ok(Self { tokens, domains, enc, dirs, use_2d, use_3d, n_pad: 0 })
    }

    pub fn molecule(cfg: &BitConfig, g: &MolecularGraph, use_2d: bool, use_3d: bool) -> Result<Self, ModelError> {
        Self::build(cfg, Some(g), None, use_2d, use_3d)
    }

    pub fn pocket(cfg: &BitConfig, g: &MolecularGraph, use_2d: bool, use_3d: bool) -> Result<Self, ModelError> {
        Self::build(cfg, None, Some(g), use_2d, use_3d)
    }

    pub fn complex(
        cfg: &BitConfig,
        ligand: &MolecularGraph,
        pocket: &MolecularGraph,
        use_2d: bool,
        use_3d: bool,
    ) -> Result<Self, ModelError> {
        Self::build(cfg, Some(ligand), Some(pocket), use_2d, use_3d)
    }

    pub fn n_real(&self) -> usize {
        self.tokens.len()
    }

    pub fn n(&self) -> usize {
        self.tokens.len() + self.n_pad
    }

    pub fn is_complex(&self) -> bool {
        self.enc.layout.has_mol() && self.enc.layout.has_pocket()
    }

    /// Token positions of ligand atoms.
    pub fn ligand_rows(&self) -> Vec<usize> {
        (0..self.enc.layout.ligand).map(|i| self.enc.layout.ligand_token(i)).collect()
    }

    /// Token positions of pocket atoms.
    pub fn pocket_rows(&self) -> Vec<usize> {
        (0..self.enc.layout.pocket).map(|i| self.enc.layout.pocket_token(i)).collect()
    }

    /// Token positions of every real atom (virtual nodes excluded).
    pub fn atom_rows(&self) -> Vec<usize> {
        let mut r = self.ligand_rows();
        r.extend(self.pocket_rows());
        r
    }

    /// Replaces the token at `pos` with `[MASK]` and returns the original id.
    pub fn mask_token(&mut self, cfg: &BitConfig, pos: usize) -> usize {
        std::mem::replace(&mut self.tokens[pos], cfg.mask_id())
    }

    /// Ids with padding appended.
    pub fn padded_tokens(&self, cfg: &BitConfig) -> Vec<usize> {
        let mut t = self.tokens.clone();
        t.resize(self.n(), cfg.pad_id());
        t
    }

    pub fn key_mask(&self) -> Rc<[bool]> {
        (0..self.n()).map(|i| i < self.n_real()).collect()
    }

    /// Directions padded to n², zero wherever padding is involved.
    pub fn padded_dirs(&self) -> Option<Rc<[[f64; 3]]>> {
        let d = self.dirs.as_ref()?;
        let (r, n) = (self.n_real(), self.n());
        let mut out = vec![[0.0; 3]; n * n];
        for i in 0..r {
            out[i * n..i * n + r].copy_from_slice(&d[i * r..(i + 1) * r]);
        }
        Some(out.into())
    }
}

/// Samples padded to a common token count.
#[derive(Clone, Debug, Default)]
pub struct TokenBatch {
    pub samples: Vec<Sample>,
}

impl TokenBatch {
    pub fn new(mut samples: Vec<Sample>) -> Self {
        let n = samples.iter().map(Sample::n_real).max().unwrap_or(0);
        for s in samples.iter_mut() {
            s.n_pad = n - s.n_real();
        }
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Common token count after padding.
    pub fn width(&self) -> usize {
        self.samples.first().map_or(0, Sample::n)
    }
}
