//! Structural encodings: shortest-path buckets, edge paths, degrees, distances, and
//! pair-domain classes over the token layout of a sample.

use serde::Serialize;

use crate::molgraph::{hop_distances, BondOrder, GraphError, MolecularGraph};

pub const DEFAULT_D_MAX: usize = 20;
pub const DEFAULT_DEGREE_CAP: usize = 16;

/// Bucket for pairs with no connecting path.
pub fn unreachable_bucket(d_max: usize) -> usize {
    d_max + 1
}

/// Bucket for pairs involving a virtual node.
pub fn virtual_bucket(d_max: usize) -> usize {
    d_max + 2
}

/// Number of SPD buckets including the unreachable and virtual ones.
pub fn spd_buckets(d_max: usize) -> usize {
    d_max + 3
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairDomainClass {
    IntraMol,
    IntraProt,
    Inter,
    Virtual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSlot {
    MolVirtual,
    Ligand(usize),
    PocketVirtual,
    Pocket(usize),
}

/// Token order: `[M_VNode]`, ligand atoms, `[P_VNode]`, pocket atoms. A virtual
/// node is present exactly when its entity has atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TokenLayout {
    pub ligand: usize,
    pub pocket: usize,
}

impl TokenLayout {
    pub fn new(ligand: usize, pocket: usize) -> Self {
        Self { ligand, pocket }
    }

    pub fn has_mol(&self) -> bool {
        self.ligand > 0
    }

    pub fn has_pocket(&self) -> bool {
        self.pocket > 0
    }

    pub fn len(&self) -> usize {
        self.ligand + self.has_mol() as usize + self.pocket + self.has_pocket() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mol_vnode(&self) -> Option<usize> {
        self.has_mol().then_some(0)
    }

    pub fn pocket_vnode(&self) -> Option<usize> {
        self.has_pocket().then_some(self.ligand + self.has_mol() as usize)
    }

    pub fn ligand_token(&self, i: usize) -> usize {
        1 + i
    }

    pub fn pocket_token(&self, i: usize) -> usize {
        self.pocket_vnode().expect("layout has a pocket") + 1 + i
    }

    pub fn slots(&self) -> Vec<TokenSlot> {
        let mut out = Vec::with_capacity(self.len());
        if self.has_mol() {
            out.push(TokenSlot::MolVirtual);
            out.extend((0..self.ligand).map(TokenSlot::Ligand));
        }
        if self.has_pocket() {
            out.push(TokenSlot::PocketVirtual);
            out.extend((0..self.pocket).map(TokenSlot::Pocket));
        }
        out
    }
}

/// Breadth-first hop counts bucketed: values above `d_max` clamp to `d_max`,
/// disconnected pairs map to [`unreachable_bucket`]. Row-major n×n.
pub fn spd_matrix(g: &MolecularGraph, d_max: usize) -> Vec<Vec<usize>> {
    hop_distances(g)
        .into_iter()
        .map(|row| row.into_iter().map(|d| d.map_or(unreachable_bucket(d_max), |d| d.min(d_max))).collect())
        .collect()
}

/// Bond-order indices along the lexicographically smallest shortest path for each
/// ordered pair; empty for the diagonal, unreachable pairs, and pairs beyond `d_max`.
pub fn edge_path_features(g: &MolecularGraph, d_max: usize) -> Vec<Vec<Vec<usize>>> {
    let n = g.n_atoms();
    let hops = hop_distances(g);
    let adj = g.adjacency();
    let mut out = vec![vec![Vec::new(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let Some(d) = hops[i][j] else { continue };
            if d == 0 || d > d_max {
                continue;
            }
            let mut path = Vec::with_capacity(d);
            let mut cur = i;
            while cur != j {
                let remaining = hops[cur][j].expect("on a shortest path");
                let &(next, order) = adj[cur]
                    .iter()
                    .find(|(v, _)| hops[*v][j] == Some(remaining - 1))
                    .expect("a shortest path continues");
                path.push(order.index());
                cur = next;
            }
            out[i][j] = path;
        }
    }
    out
}

/// Euclidean distance matrix, row-major n×n.
pub fn pair_distances(coords: &[[f64; 3]]) -> Vec<f64> {
    let n = coords.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = crate::molgraph::dist(coords[i], coords[j]);
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}

pub fn graph_distances(g: &MolecularGraph) -> Result<Vec<f64>, GraphError> {
    g.coords().map(|c| pair_distances(&c)).ok_or(GraphError::MissingCoords("distance matrix"))
}

/// Pair classes over a token layout, row-major.
pub fn pair_domain_classes(layout: &TokenLayout) -> Vec<PairDomainClass> {
    let slots = layout.slots();
    let n = slots.len();
    let mut out = Vec::with_capacity(n * n);
    for a in &slots {
        for b in &slots {
            out.push(match (a, b) {
                (TokenSlot::Ligand(_), TokenSlot::Ligand(_)) => PairDomainClass::IntraMol,
                (TokenSlot::Pocket(_), TokenSlot::Pocket(_)) => PairDomainClass::IntraProt,
                (TokenSlot::Ligand(_), TokenSlot::Pocket(_)) | (TokenSlot::Pocket(_), TokenSlot::Ligand(_)) => {
                    PairDomainClass::Inter
                }
                _ => PairDomainClass::Virtual,
            });
        }
    }
    out
}

/// Number of bonds on each atom, capped.
pub fn degrees(g: &MolecularGraph, cap: usize) -> Vec<usize> {
    g.degrees().into_iter().map(|d| d.min(cap)).collect()
}

/// All structural inputs for one sample, indexed by token position.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructuralEncoding {
    pub layout: TokenLayout,
    pub d_max: usize,
    pub degree_cap: usize,
    /// n×n bucket indices; virtual pairs use the virtual bucket, inter pairs the unreachable one.
    pub spd: Vec<usize>,
    /// n×n bond-order index paths; empty wherever no bonded path is encoded.
    pub edge_paths: Vec<Vec<usize>>,
    /// Capped degree per token; virtual nodes carry `degree_cap + 1`.
    pub degrees: Vec<usize>,
    /// n×n distances when every atom has coordinates; zero on virtual pairs.
    pub distances: Option<Vec<f64>>,
    pub pair_class: Vec<PairDomainClass>,
}

impl StructuralEncoding {
    pub fn n(&self) -> usize {
        self.layout.len()
    }

    /// Encodes a ligand, a pocket, or both as one token sequence.
    pub fn build(
        ligand: Option<&MolecularGraph>,
        pocket: Option<&MolecularGraph>,
        d_max: usize,
        degree_cap: usize,
    ) -> Self {
        let layout = TokenLayout::new(ligand.map_or(0, |g| g.n_atoms()), pocket.map_or(0, |g| g.n_atoms()));
        let n = layout.len();
        let vb = virtual_bucket(d_max);
        let mut spd = vec![unreachable_bucket(d_max); n * n];
        let mut edge_paths = vec![Vec::new(); n * n];
        let mut degs = vec![degree_cap + 1; n];
        let mut coords: Vec<Option<[f64; 3]>> = vec![None; n];
        let mut all_coords = true;
        let parts = [(ligand, layout.mol_vnode()), (pocket, layout.pocket_vnode())];
        for (g, vnode) in parts {
            let (Some(g), Some(v)) = (g, vnode) else { continue };
            let off = v + 1;
            let s = spd_matrix(g, d_max);
            let mut e = edge_path_features(g, d_max);
            for (i, row) in s.iter().enumerate() {
                for (j, &b) in row.iter().enumerate() {
                    spd[(off + i) * n + off + j] = b;
                    edge_paths[(off + i) * n + off + j] = std::mem::take(&mut e[i][j]);
                }
            }
            for (i, d) in degrees(g, degree_cap).into_iter().enumerate() {
                degs[off + i] = d;
            }
            all_coords &= g.has_coords();
            for (i, a) in g.atoms.iter().enumerate() {
                coords[off + i] = a.coords;
            }
        }
        let pair_class = pair_domain_classes(&layout);
        for i in 0..n {
            for j in 0..n {
                if pair_class[i * n + j] == PairDomainClass::Virtual {
                    spd[i * n + j] = if i == j { 0 } else { vb };
                }
            }
        }
        let distances = all_coords.then(|| {
            let mut d = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    if let (Some(a), Some(b)) = (coords[i], coords[j]) {
                        d[i * n + j] = crate::molgraph::dist(a, b);
                    }
                }
            }
            d
        });
        Self { layout, d_max, degree_cap, spd, edge_paths, degrees: degs, distances, pair_class }
    }

    /// Unit direction from token `j` to token `i` for every ordered pair, the zero
    /// vector for virtual tokens, identical positions, or separations below 1e-8.
    pub fn directions(ligand: Option<&MolecularGraph>, pocket: Option<&MolecularGraph>) -> Option<Vec<[f64; 3]>> {
        let mut coords: Vec<Option<[f64; 3]>> = Vec::new();
        for g in [ligand, pocket].into_iter().flatten() {
            coords.push(None);
            for a in &g.atoms {
                coords.push(Some(a.coords?));
            }
        }
        let n = coords.len();
        let mut out = vec![[0.0; 3]; n * n];
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (coords[i], coords[j]) {
                    let d = crate::molgraph::dist(a, b);
                    if d >= 1e-8 {
                        out[i * n + j] = [(a[0] - b[0]) / d, (a[1] - b[1]) / d, (a[2] - b[2]) / d];
                    }
                }
            }
        }
        Some(out)
    }
}

/// Bond-order index for the edge-path feature table.
pub fn bond_feature(order: BondOrder) -> usize {
    order.index()
}
