use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TaskError;
use crate::molgraph::synth::{random_molecule, random_pocket, unit_vector};
use crate::molgraph::{BondOrder, GraphError, MolecularGraph};

/// Signature element planted in the pockets of each family.
pub const POCKET_SIGNATURES: [u8; 4] = [12, 20, 26, 30];
/// Marker element carried by the ligands that bind each family.
pub const LIGAND_MARKERS: [u8; 4] = [9, 17, 35, 53];

const BASE_LIGAND_ELEMENTS: [u8; 3] = [6, 7, 8];
const BASE_POCKET_ELEMENTS: [u8; 4] = [6, 7, 8, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSpec {
    pub families: usize,
    pub train_pockets_per_family: usize,
    pub train_ligands_per_family: usize,
    pub test_pockets_per_family: usize,
    /// Actives per held-out screening pool.
    pub pool_actives: usize,
    pub pool_size: usize,
    pub ligand_atoms: [usize; 2],
    pub pocket_atoms: [usize; 2],
}

impl Default for RetrievalSpec {
    fn default() -> Self {
        Self {
            families: 4,
            train_pockets_per_family: 16,
            train_ligands_per_family: 48,
            test_pockets_per_family: 2,
            pool_actives: 10,
            pool_size: 1000,
            ligand_atoms: [6, 16],
            pocket_atoms: [20, 36],
        }
    }
}

impl RetrievalSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: &str| Err(TaskError::Config(format!("retrieval data: {m}")));
        if !(2..=POCKET_SIGNATURES.len()).contains(&self.families) {
            return bad("families must be between 2 and 4");
        }
        if self.pool_actives == 0 || self.pool_actives >= self.pool_size {
            return bad("pool needs at least one active and one decoy");
        }
        if !(self.pool_size - self.pool_actives).is_multiple_of(self.families - 1) {
            return bad("pool decoys must split evenly across the other families");
        }
        if self.train_pockets_per_family == 0 || self.train_ligands_per_family == 0 || self.test_pockets_per_family == 0
        {
            return bad("every split needs members");
        }
        if self.ligand_atoms[0] < 3 || self.ligand_atoms[0] > self.ligand_atoms[1] {
            return bad("ligand size range must start at 3 or more");
        }
        if self.pocket_atoms[0] < 3 || self.pocket_atoms[0] > self.pocket_atoms[1] {
            return bad("pocket size range must start at 3 or more");
        }
        Ok(())
    }

    /// Held-out ligands per family: the pool actives plus this family's decoy share.
    pub fn test_ligands_per_family(&self) -> usize {
        self.pool_actives + (self.pool_size - self.pool_actives) / (self.families - 1)
    }
}

/// A graph with an integer class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Labeled {
    pub id: String,
    pub graph: MolecularGraph,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct RetrievalData {
    pub spec: RetrievalSpec,
    pub train_pockets: Vec<Labeled>,
    pub train_ligands: Vec<Labeled>,
    pub test_pockets: Vec<Labeled>,
    pub test_ligands: Vec<Labeled>,
}

impl RetrievalData {
    /// Held-out pool for a family: `pool_actives` of its ligands followed by the
    /// decoy share of every other family. Returns indices into `test_ligands` and labels.
    pub fn pool(&self, family: usize) -> (Vec<usize>, Vec<bool>) {
        let per = self.spec.test_ligands_per_family();
        let mut idx = Vec::with_capacity(self.spec.pool_size);
        let mut labels = Vec::with_capacity(self.spec.pool_size);
        for f in 0..self.spec.families {
            let base = f * per;
            if f == family {
                idx.extend(base..base + self.spec.pool_actives);
                labels.extend(std::iter::repeat_n(true, self.spec.pool_actives));
            } else {
                idx.extend(base + self.spec.pool_actives..base + per);
                labels.extend(std::iter::repeat_n(false, per - self.spec.pool_actives));
            }
        }
        (idx, labels)
    }
}

/// Molecule over C/N/O with one or two leaf atoms replaced by `marker`.
pub fn marked_ligand<R: Rng>(rng: &mut R, n: usize, marker: u8) -> Result<MolecularGraph, TaskError> {
    for _ in 0..64 {
        let mut g = random_molecule(rng, n, &BASE_LIGAND_ELEMENTS)?;
        let deg = g.degrees();
        let leaves: Vec<usize> = (0..n).filter(|&i| deg[i] == 1).collect();
        if leaves.is_empty() {
            continue;
        }
        let k = leaves.len().min(2);
        for p in sample(rng, leaves.len(), k) {
            let a = leaves[p];
            g.atoms[a].element = marker;
            for b in g.bonds.iter_mut().filter(|b| b.i == a || b.j == a) {
                b.order = BondOrder::Single;
            }
        }
        return Ok(g);
    }
    Err(TaskError::Graph(GraphError::InfeasibleSpec(format!("no leaf atom in {n}-atom molecules"))))
}

/// Pocket shell with a sixth of its atoms (at least three) set to `signature`.
pub fn signed_pocket<R: Rng>(rng: &mut R, n: usize, signature: u8) -> Result<MolecularGraph, TaskError> {
    let radius = 6.5 + rng.random_range(0.0..2.0);
    let axis = unit_vector(rng);
    let mut g = random_pocket(rng, n, radius, axis, &BASE_POCKET_ELEMENTS)?;
    let k = (n / 6).max(3).min(n);
    for a in sample(rng, n, k) {
        g.atoms[a].element = signature;
    }
    Ok(g)
}

pub fn retrieval_generate(seed: u64, spec: &RetrievalSpec) -> Result<RetrievalData, TaskError> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let pockets = |count: usize, tag: &str, master: &mut ChaCha8Rng| -> Result<Vec<Labeled>, TaskError> {
        let mut out = Vec::new();
        for (f, &signature) in POCKET_SIGNATURES.iter().enumerate().take(spec.families) {
            for k in 0..count {
                let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
                let n = rng.random_range(spec.pocket_atoms[0]..=spec.pocket_atoms[1]);
                let graph = signed_pocket(&mut rng, n, signature)?;
                out.push(Labeled { id: format!("{tag}-pocket-{f}-{k:04}"), graph, label: f });
            }
        }
        Ok(out)
    };
    let train_pockets = pockets(spec.train_pockets_per_family, "train", &mut master)?;
    let test_pockets = pockets(spec.test_pockets_per_family, "test", &mut master)?;
    let ligands = |count: usize, tag: &str, master: &mut ChaCha8Rng| -> Result<Vec<Labeled>, TaskError> {
        let mut out = Vec::new();
        for (f, &marker) in LIGAND_MARKERS.iter().enumerate().take(spec.families) {
            for k in 0..count {
                let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
                let n = rng.random_range(spec.ligand_atoms[0]..=spec.ligand_atoms[1]);
                let graph = marked_ligand(&mut rng, n, marker)?;
                out.push(Labeled { id: format!("{tag}-ligand-{f}-{k:05}"), graph, label: f });
            }
        }
        Ok(out)
    };
    let train_ligands = ligands(spec.train_ligands_per_family, "train", &mut master)?;
    let test_ligands = ligands(spec.test_ligands_per_family(), "test", &mut master)?;
    Ok(RetrievalData { spec: spec.clone(), train_pockets, train_ligands, test_pockets, test_ligands })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySpec {
    pub molecules: usize,
    pub ligand_atoms: [usize; 2],
    /// Molecules whose score lies within this distance of the median are dropped.
    pub margin: f64,
}

impl Default for ClassifySpec {
    fn default() -> Self {
        Self { molecules: 320, ligand_atoms: [6, 20], margin: 0.5 }
    }
}

const CLASSIFY_ELEMENTS: [u8; 6] = [6, 7, 8, 9, 16, 17];

/// `#N + #O − 0.35·#atoms`.
pub fn classification_score(g: &MolecularGraph) -> f64 {
    let polar = g.atoms.iter().filter(|a| a.element == 7 || a.element == 8).count();
    polar as f64 - 0.35 * g.n_atoms() as f64
}

/// Molecules labeled by whether their score exceeds the median, with the band
/// around the median removed so the classes are separable.
pub fn classify_generate(seed: u64, spec: &ClassifySpec) -> Result<Vec<Labeled>, TaskError> {
    if spec.molecules < 4 || spec.ligand_atoms[0] < 2 || spec.ligand_atoms[0] > spec.ligand_atoms[1] {
        return Err(TaskError::Config("classification data needs 4+ molecules and a valid size range".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::new();
    loop {
        // oversample so the margin band can be discarded
        for _ in 0..spec.molecules.max(graphs.len()) {
            let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
            let n = rng.random_range(spec.ligand_atoms[0]..=spec.ligand_atoms[1]);
            graphs.push(random_molecule(&mut rng, n, &CLASSIFY_ELEMENTS)?);
        }
        let mut scores: Vec<f64> = graphs.iter().map(classification_score).collect();
        scores.sort_by(f64::total_cmp);
        let median = scores[scores.len() / 2];
        let kept: Vec<Labeled> = graphs
            .iter()
            .filter(|g| (classification_score(g) - median).abs() >= spec.margin)
            .take(spec.molecules)
            .enumerate()
            .map(|(i, g)| Labeled {
                id: format!("mol-{i:05}"),
                graph: g.clone(),
                label: (classification_score(g) > median) as usize,
            })
            .collect();
        if kept.len() == spec.molecules {
            return Ok(kept);
        }
    }
}
