//! Deterministic synthetic molecules, pocket shells, and docked complexes.

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    dist, Atom, Bond, BondOrder, ComplexRecord, DatasetEntry, Domain, GraphError, MolecularGraph, DEFAULT_MAX_ATOMS,
};

pub const BOND_TARGET: f64 = 1.5;
pub const REPULSION_RADIUS: f64 = 2.0;
pub const RELAX_ITERS: usize = 200;
pub const CONTACT_RADIUS: f64 = 4.0;
/// Contacts per ligand atom mapped to the top of the affinity range.
pub const RATIO_CAP: f64 = 2.0;
pub const AFFINITY_MIN: f64 = 2.0;
pub const AFFINITY_MAX: f64 = 11.0;
pub const MIN_GAP: (f64, f64) = (2.6, 4.4);

const RELAX_STEP: f64 = 0.2;
const MAX_MOVE: f64 = 0.3;
const MAX_RETRIES: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub molecules: usize,
    pub pockets: usize,
    pub complexes: usize,
    pub ligand_atoms: [usize; 2],
    pub pocket_atoms: [usize; 2],
    pub ligand_elements: Vec<u8>,
    pub pocket_elements: Vec<u8>,
    pub active_threshold: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            molecules: 64,
            pockets: 64,
            complexes: 64,
            ligand_atoms: [6, 20],
            pocket_atoms: [20, 60],
            ligand_elements: vec![6, 7, 8, 9, 16, 17],
            pocket_elements: vec![6, 7, 8, 16],
            active_threshold: 7.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::InfeasibleSpec(m));
        for (name, [lo, hi]) in [("ligand_atoms", self.ligand_atoms), ("pocket_atoms", self.pocket_atoms)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is empty"));
            }
            if hi > DEFAULT_MAX_ATOMS {
                return bad(format!("{name} upper bound {hi} exceeds {DEFAULT_MAX_ATOMS}"));
            }
        }
        for (name, elems, hi) in [
            ("ligand_elements", &self.ligand_elements, self.ligand_atoms[1]),
            ("pocket_elements", &self.pocket_elements, self.pocket_atoms[1]),
        ] {
            if elems.is_empty() {
                return bad(format!("{name} is empty"));
            }
            if let Some(z) = elems.iter().find(|&&z| z == 0 || z > super::MAX_ELEMENT) {
                return bad(format!("{name} contains unknown element {z}"));
            }
            let max_val = elems.iter().map(|&z| valence(z)).max().unwrap_or(0);
            if hi > 2 && max_val < 2 {
                return bad(format!("{name} has only monovalent elements, cannot build {hi}-atom graphs"));
            }
        }
        if !self.active_threshold.is_finite() {
            return bad("active_threshold must be finite".into());
        }
        Ok(())
    }
}

/// Typical valence used to cap the degree of an element.
pub fn valence(z: u8) -> usize {
    match z {
        1 | 9 | 17 | 35 | 53 => 1,
        8 | 16 | 34 => 2,
        5 | 7 | 15 => 3,
        _ => 4,
    }
}

fn element_weight(z: u8) -> f64 {
    if z == 6 {
        6.0
    } else {
        1.0
    }
}

fn pick_element<R: Rng>(rng: &mut R, elems: &[u8], degree: usize) -> u8 {
    let ok: Vec<u8> = elems.iter().copied().filter(|&z| valence(z) >= degree).collect();
    let pool = if ok.is_empty() { elems.to_vec() } else { ok };
    let total: f64 = pool.iter().map(|&z| element_weight(z)).sum();
    let mut u = rng.random::<f64>() * total;
    for &z in &pool {
        u -= element_weight(z);
        if u <= 0.0 {
            return z;
        }
    }
    *pool.last().expect("non-empty element pool")
}

/// Uniformly distributed direction on the unit sphere.
pub fn unit_vector<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn add(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Best of several random placements at `BOND_TARGET` from `anchor`, keeping clear of `pos`.
fn place_near<R: Rng>(rng: &mut R, anchor: [f64; 3], pos: &[[f64; 3]], project: Option<f64>) -> [f64; 3] {
    let mut best = anchor;
    let mut best_score = f64::NEG_INFINITY;
    for _ in 0..12 {
        let mut p = add(anchor, unit_vector(rng), BOND_TARGET);
        if let Some(r) = project {
            let n = norm(p).max(1e-9);
            p = [p[0] * r / n, p[1] * r / n, p[2] * r / n];
        }
        let score = pos.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min);
        if score > best_score {
            best_score = score;
            best = p;
        }
    }
    best
}

/// Spring relaxation: bonded pairs pulled to `BOND_TARGET`, close non-bonded pairs pushed
/// out to `REPULSION_RADIUS`, optionally every atom pulled toward a sphere of radius `shell`.
pub fn relax(pos: &mut [[f64; 3]], bonds: &[(usize, usize)], shell: Option<f64>) {
    let n = pos.len();
    let mut bonded = vec![false; n * n];
    for &(i, j) in bonds {
        bonded[i * n + j] = true;
        bonded[j * n + i] = true;
    }
    let mut force = vec![[0.0; 3]; n];
    for _ in 0..RELAX_ITERS {
        force.iter_mut().for_each(|f| *f = [0.0; 3]);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dist(pos[i], pos[j]);
                let mag = if bonded[i * n + j] {
                    d - BOND_TARGET
                } else if d < REPULSION_RADIUS {
                    d - REPULSION_RADIUS
                } else {
                    continue;
                };
                let u = if d > 1e-9 {
                    [(pos[j][0] - pos[i][0]) / d, (pos[j][1] - pos[i][1]) / d, (pos[j][2] - pos[i][2]) / d]
                } else {
                    [1.0, 0.0, 0.0]
                };
                force[i] = add(force[i], u, mag);
                force[j] = add(force[j], u, -mag);
            }
        }
        if let Some(r) = shell {
            for (f, p) in force.iter_mut().zip(pos.iter()) {
                let d = norm(*p).max(1e-9);
                *f = add(*f, *p, -0.5 * (d - r) / d);
            }
        }
        for (p, f) in pos.iter_mut().zip(&force) {
            let step = RELAX_STEP * norm(*f);
            let s = if step > MAX_MOVE { MAX_MOVE / step } else { 1.0 };
            *p = add(*p, *f, RELAX_STEP * s);
        }
    }
}

fn hops_from(adj: &[Vec<usize>], src: usize) -> Vec<usize> {
    let mut d = vec![usize::MAX; adj.len()];
    d[src] = 0;
    let mut queue = std::collections::VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if d[v] == usize::MAX {
                d[v] = d[u] + 1;
                queue.push_back(v);
            }
        }
    }
    d
}

fn bonds_ok(pos: &[[f64; 3]], bonds: &[(usize, usize)]) -> bool {
    bonds.iter().all(|&(i, j)| (1.25..=1.75).contains(&dist(pos[i], pos[j])))
}

fn assign_orders<R: Rng>(rng: &mut R, elements: &[u8], bonds: &[(usize, usize)]) -> Vec<Bond> {
    let mut used = vec![0usize; elements.len()];
    for &(i, j) in bonds {
        used[i] += 1;
        used[j] += 1;
    }
    bonds
        .iter()
        .map(|&(i, j)| {
            let spare = |k: usize| valence(elements[k]).saturating_sub(used[k]);
            let order = if spare(i) >= 1 && spare(j) >= 1 && rng.random::<f64>() < 0.2 {
                used[i] += 1;
                used[j] += 1;
                BondOrder::Double
            } else {
                BondOrder::Single
            };
            Bond { i, j, order }
        })
        .collect()
}

fn try_molecule<R: Rng>(rng: &mut R, n: usize, elems: &[u8]) -> (Vec<[f64; 3]>, Vec<(usize, usize)>) {
    let max_deg = elems.iter().map(|&z| valence(z)).max().unwrap_or(1).min(4);
    let mut pos = vec![[0.0; 3]];
    let mut deg = vec![0usize; n];
    let mut adj = vec![Vec::new(); n];
    let mut bonds = Vec::with_capacity(n + 1);
    for k in 1..n {
        let open: Vec<usize> = (0..k).filter(|&p| deg[p] < max_deg).collect();
        let parent = *open.choose(rng).expect("tree always has an open slot");
        let p = place_near(rng, pos[parent], &pos, None);
        pos.push(p);
        deg[parent] += 1;
        deg[k] += 1;
        adj[parent].push(k);
        adj[k].push(parent);
        bonds.push((parent, k));
    }
    let rings = rng.random_range(0..=2usize);
    for _ in 0..rings {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if deg[i] >= max_deg {
                continue;
            }
            let h = hops_from(&adj, i);
            for j in (i + 1)..n {
                if deg[j] < max_deg && (h[j] == 4 || h[j] == 5) {
                    let d = dist(pos[i], pos[j]);
                    if best.is_none_or(|b| d < b.0) {
                        best = Some((d, i, j));
                    }
                }
            }
        }
        if let Some((d, i, j)) = best {
            if d < 4.5 {
                deg[i] += 1;
                deg[j] += 1;
                adj[i].push(j);
                adj[j].push(i);
                bonds.push((i, j));
            }
        }
    }
    relax(&mut pos, &bonds, None);
    (pos, bonds)
}

fn centered(mut pos: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
    let n = pos.len() as f64;
    let c = pos.iter().fold([0.0; 3], |a, p| add(a, *p, 1.0 / n));
    for p in pos.iter_mut() {
        *p = add(*p, c, -1.0);
    }
    pos
}

/// Random connected molecule: a tree of degree at most 4 with up to two
/// ring closures, relaxed and centered at the origin.
pub fn random_molecule<R: Rng>(rng: &mut R, n: usize, elems: &[u8]) -> Result<MolecularGraph, GraphError> {
    if n == 0 || elems.is_empty() {
        return Err(GraphError::InfeasibleSpec("molecule needs atoms and elements".into()));
    }
    let (mut pos, mut bonds) = try_molecule(rng, n, elems);
    for _ in 0..MAX_RETRIES {
        if bonds_ok(&pos, &bonds) {
            break;
        }
        (pos, bonds) = try_molecule(rng, n, elems);
    }
    if !bonds_ok(&pos, &bonds) {
        return Err(GraphError::InfeasibleSpec(format!("could not relax a {n}-atom molecule")));
    }
    let mut deg = vec![0; n];
    for &(i, j) in &bonds {
        deg[i] += 1;
        deg[j] += 1;
    }
    let elements: Vec<u8> = deg.iter().map(|&d| pick_element(rng, elems, d)).collect();
    let orders = assign_orders(rng, &elements, &bonds);
    let atoms = elements.iter().zip(centered(pos)).map(|(&z, c)| Atom { element: z, coords: Some(c) }).collect();
    MolecularGraph::new(atoms, orders, Domain::Molecule)
}

/// Surface area per pocket atom when sizing the spherical cap.
const AREA_PER_ATOM: f64 = 5.0;

/// Uniform point on the spherical cap of radius `r` around unit `axis` with `cos(angle) >= cos_min`.
fn cap_point<R: Rng>(rng: &mut R, axis: [f64; 3], r: f64, cos_min: f64) -> [f64; 3] {
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cross =
        |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let e1 = {
        let c = cross(axis, helper);
        let n = norm(c);
        [c[0] / n, c[1] / n, c[2] / n]
    };
    let e2 = cross(axis, e1);
    let z: f64 = rng.random_range(cos_min..=1.0);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    let p = add([axis[0] * z, axis[1] * z, axis[2] * z], e1, s * phi.cos());
    let p = add(p, e2, s * phi.sin());
    [p[0] * r, p[1] * r, p[2] * r]
}

/// Pocket-like shell: short bonded chains on a spherical cap of radius `radius` around the
/// origin, centered on the unit `axis`, with cap area proportional to the atom count.
pub fn random_pocket<R: Rng>(
    rng: &mut R,
    n: usize,
    radius: f64,
    axis: [f64; 3],
    elems: &[u8],
) -> Result<MolecularGraph, GraphError> {
    if n == 0 || elems.is_empty() || radius.is_nan() || radius <= 0.0 {
        return Err(GraphError::InfeasibleSpec("pocket needs atoms, elements and a positive radius".into()));
    }
    let cos_min = (1.0 - AREA_PER_ATOM * n as f64 / (std::f64::consts::TAU * radius * radius)).max(-1.0);
    let mut pos: Vec<[f64; 3]> = Vec::with_capacity(n);
    let mut bonds = Vec::new();
    while pos.len() < n {
        let len = rng.random_range(3..=8usize).min(n - pos.len());
        let score = |p: &[f64; 3], pos: &[[f64; 3]]| pos.iter().map(|&q| dist(*p, q)).fold(f64::INFINITY, f64::min);
        let mut start = cap_point(rng, axis, radius, cos_min);
        for _ in 0..11 {
            let c = cap_point(rng, axis, radius, cos_min);
            if score(&c, &pos) > score(&start, &pos) {
                start = c;
            }
        }
        pos.push(start);
        for _ in 1..len {
            let prev = *pos.last().expect("chain has a start");
            let p = place_near(rng, prev, &pos, Some(radius));
            bonds.push((pos.len() - 1, pos.len()));
            pos.push(p);
        }
    }
    relax(&mut pos, &bonds, Some(radius));
    let mut deg = vec![0; n];
    for &(i, j) in &bonds {
        deg[i] += 1;
        deg[j] += 1;
    }
    let elements: Vec<u8> = deg.iter().map(|&d| pick_element(rng, elems, d)).collect();
    let orders = assign_orders(rng, &elements, &bonds);
    let atoms = elements.iter().zip(pos).map(|(&z, c)| Atom { element: z, coords: Some(c) }).collect();
    MolecularGraph::new(atoms, orders, Domain::Pocket)
}

fn min_pair_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().flat_map(|&p| b.iter().map(move |&q| dist(p, q))).fold(f64::INFINITY, f64::min)
}

/// Ligand-pocket atom pairs within `CONTACT_RADIUS`, per ligand atom.
pub fn contact_ratio(ligand: &[[f64; 3]], pocket: &[[f64; 3]]) -> f64 {
    let contacts =
        ligand.iter().map(|&p| pocket.iter().filter(|&&q| dist(p, q) <= CONTACT_RADIUS).count()).sum::<usize>();
    contacts as f64 / ligand.len() as f64
}

pub fn affinity_from_ratio(ratio: f64) -> f64 {
    AFFINITY_MIN + (AFFINITY_MAX - AFFINITY_MIN) * (ratio / RATIO_CAP).min(1.0)
}

/// Builds a pocket cap around a centered ligand, then slides the ligand toward the cap
/// center until the closest ligand-pocket distance equals a gap drawn from `MIN_GAP`.
pub fn dock<R: Rng>(
    rng: &mut R,
    ligand: MolecularGraph,
    pocket_atoms: usize,
    pocket_elems: &[u8],
    threshold: f64,
) -> Result<ComplexRecord, GraphError> {
    let lig = ligand.coords().ok_or(GraphError::MissingCoords("ligand to dock"))?;
    let extent = lig.iter().map(|&p| norm(p)).fold(0.0, f64::max);
    let radius = extent + 4.5 + rng.random_range(0.0..1.5);
    let dir = unit_vector(rng);
    let pocket = random_pocket(rng, pocket_atoms, radius, dir, pocket_elems)?;
    let pk = pocket.coords().expect("pocket has coordinates");
    let gap = rng.random_range(MIN_GAP.0..MIN_GAP.1);
    let shifted = |s: f64| lig.iter().map(|&p| add(p, dir, s)).collect::<Vec<_>>();
    let gap_at = |s: f64| min_pair_distance(&shifted(s), &pk);
    let limit = radius + 2.0 * extent + MIN_GAP.1;
    let shift = if gap_at(0.0) <= gap {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, radius);
        while hi < limit && gap_at(hi) > gap {
            hi += 1.0;
        }
        if gap_at(hi) > gap {
            // a sparse cap can let the ligand pass without reaching the gap; stop at the closest approach
            let steps = 400;
            let grid = (0..=steps).map(|k| limit * k as f64 / steps as f64);
            grid.min_by(|&a, &b| gap_at(a).total_cmp(&gap_at(b))).expect("grid is non-empty")
        } else {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if gap_at(mid) > gap {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    };
    let placed = shifted(shift);
    let affinity = affinity_from_ratio(contact_ratio(&placed, &pk));
    let atoms = ligand.atoms.iter().zip(&placed).map(|(a, &c)| Atom { element: a.element, coords: Some(c) }).collect();
    let ligand = MolecularGraph { atoms, ..ligand };
    ComplexRecord::new(ligand, pocket, Some(affinity), Some(affinity > threshold))
}

/// Molecules, then pockets, then complexes; each entry draws from its own sub-seed.
pub fn synth_generate(seed: u64, spec: &SynthSpec) -> Result<Vec<DatasetEntry>, GraphError> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.molecules + spec.pockets + spec.complexes);
    let [llo, lhi] = spec.ligand_atoms;
    let [plo, phi] = spec.pocket_atoms;
    for k in 0..spec.molecules {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let n = rng.random_range(llo..=lhi);
        out.push(DatasetEntry::molecule(format!("mol-{k:05}"), random_molecule(&mut rng, n, &spec.ligand_elements)?));
    }
    for k in 0..spec.pockets {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let n = rng.random_range(plo..=phi);
        let radius = 6.5 + rng.random_range(0.0..2.0);
        let axis = unit_vector(&mut rng);
        let g = random_pocket(&mut rng, n, radius, axis, &spec.pocket_elements)?;
        out.push(DatasetEntry::pocket(format!("pocket-{k:05}"), g));
    }
    for k in 0..spec.complexes {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let n = rng.random_range(llo..=lhi);
        let lig = random_molecule(&mut rng, n, &spec.ligand_elements)?;
        let np = rng.random_range(plo..=phi);
        let c = dock(&mut rng, lig, np, &spec.pocket_elements, spec.active_threshold)?;
        out.push(DatasetEntry::complex(format!("complex-{k:05}"), c));
    }
    Ok(out)
}
