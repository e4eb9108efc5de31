//! Molecular graphs, dataset entries, and their ingestion.

mod jsonl;
mod pocket;
mod stats;
pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jsonl::{entry_to_json, parse_jsonl, parse_jsonl_str, write_jsonl, ParseError};
pub use pocket::{extract_pocket, DEFAULT_POCKET_CUTOFF};
pub use stats::{graph_stats, hop_distances, DomainStats, SpdKey, StatsReport};
pub use synth::{synth_generate, SynthSpec};

/// Largest atomic number in the element table.
pub const MAX_ELEMENT: u8 = 118;
pub const DEFAULT_MAX_ATOMS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph has no atoms")]
    NoAtoms,
    #[error("graph has {0} atoms, above the limit of {1}")]
    TooManyAtoms(usize, usize),
    #[error("element {0} is outside the vocabulary 1..={MAX_ELEMENT}")]
    UnknownElement(u32),
    #[error("bond index out of range: ({0}, {1}) with {2} atoms")]
    BondOutOfRange(usize, usize, usize),
    #[error("self bond on atom {0}")]
    SelfBond(usize),
    #[error("duplicate bond between {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("unknown bond order {0} (expected 1..=4)")]
    UnknownBondOrder(u32),
    #[error("coordinates present on some atoms but not all")]
    PartialCoords,
    #[error("non-finite coordinate on atom {0}")]
    NonFiniteCoords(usize),
    #[error("missing coordinates: {0}")]
    MissingCoords(&'static str),
    #[error("EmptyPocket: no protein atom within {0} Å of the ligand")]
    EmptyPocket(f64),
    #[error("infeasible generation spec: {0}")]
    InfeasibleSpec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Molecule,
    Pocket,
}

impl Domain {
    pub fn index(self) -> usize {
        match self {
            Domain::Molecule => 0,
            Domain::Pocket => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Order code in files: 1, 2, 3, and 4 for aromatic.
    pub fn code(self) -> u32 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn from_code(code: u32) -> Result<Self, GraphError> {
        match code {
            1 => Ok(BondOrder::Single),
            2 => Ok(BondOrder::Double),
            3 => Ok(BondOrder::Triple),
            4 => Ok(BondOrder::Aromatic),
            other => Err(GraphError::UnknownBondOrder(other)),
        }
    }

    /// Zero-based feature index used by the edge encoding.
    pub fn index(self) -> usize {
        self.code() as usize - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub element: u8,
    pub coords: Option<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub domain: Domain,
}

impl MolecularGraph {
    /// Builds and validates with the default atom limit.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>, domain: Domain) -> Result<Self, GraphError> {
        let g = Self { atoms, bonds, domain };
        g.validate(DEFAULT_MAX_ATOMS)?;
        Ok(g)
    }

    pub fn validate(&self, max_atoms: usize) -> Result<(), GraphError> {
        let n = self.atoms.len();
        if n == 0 {
            return Err(GraphError::NoAtoms);
        }
        if n > max_atoms {
            return Err(GraphError::TooManyAtoms(n, max_atoms));
        }
        for a in &self.atoms {
            if a.element == 0 || a.element > MAX_ELEMENT {
                return Err(GraphError::UnknownElement(a.element as u32));
            }
        }
        let with = self.atoms.iter().filter(|a| a.coords.is_some()).count();
        if with != 0 && with != n {
            return Err(GraphError::PartialCoords);
        }
        for (idx, a) in self.atoms.iter().enumerate() {
            if let Some(c) = a.coords {
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(GraphError::NonFiniteCoords(idx));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for b in &self.bonds {
            if b.i >= n || b.j >= n {
                return Err(GraphError::BondOutOfRange(b.i, b.j, n));
            }
            if b.i == b.j {
                return Err(GraphError::SelfBond(b.i));
            }
            if !seen.insert((b.i.min(b.j), b.i.max(b.j))) {
                return Err(GraphError::DuplicateBond(b.i, b.j));
            }
        }
        Ok(())
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn has_coords(&self) -> bool {
        self.atoms.first().is_some_and(|a| a.coords.is_some())
    }

    /// Coordinates of every atom, or `None` if the graph is 2-D only.
    pub fn coords(&self) -> Option<Vec<[f64; 3]>> {
        self.atoms.iter().map(|a| a.coords).collect()
    }

    /// Neighbor lists as (neighbor, bond order), each sorted by neighbor index.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.i].push((b.j, b.order));
            adj[b.j].push((b.i, b.order));
        }
        for list in adj.iter_mut() {
            list.sort_by_key(|e| e.0);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.atoms.len()];
        for b in &self.bonds {
            d[b.i] += 1;
            d[b.j] += 1;
        }
        d
    }

    /// Copy with every coordinate removed.
    pub fn without_coords(&self) -> Self {
        let atoms = self.atoms.iter().map(|a| Atom { element: a.element, coords: None }).collect();
        Self { atoms, bonds: self.bonds.clone(), domain: self.domain }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexRecord {
    pub ligand: MolecularGraph,
    pub pocket: MolecularGraph,
    pub affinity: Option<f64>,
    pub active: Option<bool>,
}

impl ComplexRecord {
    pub fn new(
        ligand: MolecularGraph,
        pocket: MolecularGraph,
        affinity: Option<f64>,
        active: Option<bool>,
    ) -> Result<Self, GraphError> {
        if !ligand.has_coords() {
            return Err(GraphError::MissingCoords("complex ligand"));
        }
        if !pocket.has_coords() {
            return Err(GraphError::MissingCoords("complex pocket"));
        }
        let ligand = MolecularGraph { domain: Domain::Molecule, ..ligand };
        let pocket = MolecularGraph { domain: Domain::Pocket, ..pocket };
        Ok(Self { ligand, pocket, affinity, active })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Molecule,
    Pocket,
    Complex,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Molecule(MolecularGraph),
    Pocket(MolecularGraph),
    Complex(ComplexRecord),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub payload: Payload,
}

impl DatasetEntry {
    pub fn kind(&self) -> EntryKind {
        match self.payload {
            Payload::Molecule(_) => EntryKind::Molecule,
            Payload::Pocket(_) => EntryKind::Pocket,
            Payload::Complex(_) => EntryKind::Complex,
        }
    }

    pub fn molecule(id: impl Into<String>, g: MolecularGraph) -> Self {
        Self { id: id.into(), payload: Payload::Molecule(MolecularGraph { domain: Domain::Molecule, ..g }) }
    }

    pub fn pocket(id: impl Into<String>, g: MolecularGraph) -> Self {
        Self { id: id.into(), payload: Payload::Pocket(MolecularGraph { domain: Domain::Pocket, ..g }) }
    }

    pub fn complex(id: impl Into<String>, c: ComplexRecord) -> Self {
        Self { id: id.into(), payload: Payload::Complex(c) }
    }
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}
