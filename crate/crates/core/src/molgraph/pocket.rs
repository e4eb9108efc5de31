use super::{dist, Atom, Bond, Domain, GraphError, MolecularGraph};

pub const DEFAULT_POCKET_CUTOFF: f64 = 5.0;

/// Keeps protein atoms whose minimum distance to any ligand atom is `<= cutoff`.
///
/// The comparison is inclusive. Bonds survive only when both ends survive;
/// indices are remapped densely in original order.
pub fn extract_pocket(
    protein: &MolecularGraph,
    ligand: &MolecularGraph,
    cutoff: f64,
) -> Result<MolecularGraph, GraphError> {
    if !cutoff.is_finite() || cutoff <= 0.0 {
        return Err(GraphError::InfeasibleSpec(format!("pocket cutoff must be positive, got {cutoff}")));
    }
    let lig = ligand.coords().ok_or(GraphError::MissingCoords("ligand for pocket extraction"))?;
    let prot = protein.coords().ok_or(GraphError::MissingCoords("protein for pocket extraction"))?;
    let mut remap = vec![usize::MAX; prot.len()];
    let mut atoms: Vec<Atom> = Vec::new();
    for (i, &p) in prot.iter().enumerate() {
        let min = lig.iter().map(|&l| dist(p, l)).fold(f64::INFINITY, f64::min);
        if min <= cutoff {
            remap[i] = atoms.len();
            atoms.push(protein.atoms[i]);
        }
    }
    if atoms.is_empty() {
        return Err(GraphError::EmptyPocket(cutoff));
    }
    let bonds = protein
        .bonds
        .iter()
        .filter(|b| remap[b.i] != usize::MAX && remap[b.j] != usize::MAX)
        .map(|b| Bond { i: remap[b.i], j: remap[b.j], order: b.order })
        .collect();
    MolecularGraph::new(atoms, bonds, Domain::Pocket)
}
