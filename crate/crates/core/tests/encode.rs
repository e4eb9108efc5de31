#![allow(clippy::identity_op, clippy::erasing_op)]

use bit_core::encode::{
    degrees, edge_path_features, pair_distances, spd_matrix, unreachable_bucket, virtual_bucket, PairDomainClass,
    StructuralEncoding,
};
use bit_core::molgraph::{Atom, Bond, BondOrder, Domain, MolecularGraph};
use proptest::prelude::*;

const ORDERS: [BondOrder; 4] = [BondOrder::Single, BondOrder::Double, BondOrder::Triple, BondOrder::Aromatic];

fn graph_strategy() -> impl Strategy<Value = MolecularGraph> {
    (1usize..=12).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n, 0usize..4), 0..20))).prop_map(
        |(n, raw)| {
            let mut seen = std::collections::HashSet::new();
            let bonds = raw
                .into_iter()
                .filter(|&(i, j, _)| i != j && seen.insert((i.min(j), i.max(j))))
                .map(|(i, j, o)| Bond { i, j, order: ORDERS[o] })
                .collect();
            MolecularGraph::new(vec![Atom { element: 6, coords: None }; n], bonds, Domain::Molecule).unwrap()
        },
    )
}

fn floyd_warshall(g: &MolecularGraph) -> Vec<Vec<Option<usize>>> {
    let n = g.n_atoms();
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for b in &g.bonds {
        d[b.i][b.j] = Some(1);
        d[b.j][b.i] = Some(1);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

proptest! {
    #[test]
    fn spd_matches_floyd_warshall(g in graph_strategy(), d_max in 1usize..6) {
        let spd = spd_matrix(&g, d_max);
        let fw = floyd_warshall(&g);
        let edges = edge_path_features(&g, d_max);
        let bond_order = |i: usize, j: usize| g.bonds.iter().find(|b| (b.i, b.j) == (i, j) || (b.i, b.j) == (j, i)).map(|b| b.order.index());
        let n = g.n_atoms();
        for i in 0..n {
            prop_assert_eq!(spd[i][i], 0);
            for j in 0..n {
                prop_assert_eq!(spd[i][j], spd[j][i]);
                match fw[i][j] {
                    None => {
                        prop_assert_eq!(spd[i][j], unreachable_bucket(d_max));
                        prop_assert!(edges[i][j].is_empty());
                    }
                    Some(d) if d <= d_max => {
                        prop_assert_eq!(spd[i][j], d);
                        prop_assert_eq!(edges[i][j].len(), d);
                    }
                    Some(_) => {
                        prop_assert_eq!(spd[i][j], d_max);
                        prop_assert!(edges[i][j].is_empty());
                    }
                }
            }
        }
        // every single-bond path is its own bond order
        for b in &g.bonds {
            prop_assert_eq!(edges[b.i][b.j].clone(), vec![bond_order(b.i, b.j).unwrap()]);
        }
        let deg = degrees(&g, 2);
        for (i, &d) in deg.iter().enumerate() {
            let incident = g.bonds.iter().filter(|b| b.i == i || b.j == i).count();
            prop_assert_eq!(d, incident.min(2));
        }
    }

    #[test]
    fn distances_are_a_metric(pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..12)) {
        let d = pair_distances(&pts);
        let n = pts.len();
        for i in 0..n {
            prop_assert_eq!(d[i * n + i], 0.0);
            for j in 0..n {
                prop_assert_eq!(d[i * n + j], d[j * n + i]);
                for k in 0..n {
                    prop_assert!(d[i * n + j] <= d[i * n + k] + d[k * n + j] + 1e-6);
                }
            }
        }
    }
}

/// The 24 proper rotations of the cube as signed axis permutations.
fn axis_rotations() -> Vec<[[i64; 3]; 3]> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::new();
    for p in perms {
        for signs in 0..8 {
            let mut m = [[0i64; 3]; 3];
            for r in 0..3 {
                m[r][p[r]] = if signs >> r & 1 == 1 { -1 } else { 1 };
            }
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            if det == 1 {
                out.push(m);
            }
        }
    }
    out
}

#[test]
fn distances_invariant_under_axis_rotations() {
    let pts: Vec<[f64; 3]> =
        vec![[0.0, 0.0, 0.0], [3.0, 4.0, 0.0], [-2.0, 1.0, 5.0], [7.0, -3.0, 2.0], [1.0, 1.0, 1.0]];
    let base = pair_distances(&pts);
    let rots = axis_rotations();
    assert_eq!(rots.len(), 24);
    for m in rots {
        let moved: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| std::array::from_fn(|r| (0..3).map(|c| m[r][c] as f64 * p[c]).sum::<f64>() + 2.0))
            .collect();
        assert_eq!(pair_distances(&moved), base);
    }
    assert_eq!(base[1], 5.0);
}

#[test]
fn distances_invariant_under_random_rigid_motion() {
    let pts: Vec<[f64; 3]> = vec![[0.1, 0.2, 0.3], [1.5, -0.4, 2.2], [-3.3, 0.7, 1.1], [2.0, 2.0, -2.0]];
    let base = pair_distances(&pts);
    let (a, b) = (0.7f64, -1.3f64);
    let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let rx = [[1.0, 0.0, 0.0], [0.0, b.cos(), -b.sin()], [0.0, b.sin(), b.cos()]];
    let moved: Vec<[f64; 3]> = pts
        .iter()
        .map(|p| {
            let q: [f64; 3] = std::array::from_fn(|r| (0..3).map(|c| rz[r][c] * p[c]).sum());
            std::array::from_fn(|r| (0..3).map(|c| rx[r][c] * q[c]).sum::<f64>() + [4.0, -9.0, 0.5][r])
        })
        .collect();
    let d = pair_distances(&moved);
    for (x, y) in d.iter().zip(&base) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn complex_encoding_layout() {
    let at = |x: f64| Atom { element: 6, coords: Some([x, 0.0, 0.0]) };
    let lig = MolecularGraph::new(
        vec![at(0.0), at(1.5)],
        vec![Bond { i: 0, j: 1, order: BondOrder::Double }],
        Domain::Molecule,
    )
    .unwrap();
    let poc = MolecularGraph::new(
        vec![at(5.0), at(6.5)],
        vec![Bond { i: 0, j: 1, order: BondOrder::Single }],
        Domain::Pocket,
    )
    .unwrap();
    let e = StructuralEncoding::build(Some(&lig), Some(&poc), 20, 16);
    let n = e.n();
    assert_eq!(n, 6);
    let inter = e.pair_class.iter().filter(|&&c| c == PairDomainClass::Inter).count();
    assert_eq!(inter, 8);
    assert_eq!(e.spd[1 * n + 2], 1);
    assert_eq!(e.spd[1 * n + 4], unreachable_bucket(20));
    assert_eq!(e.spd[0 * n + 1], virtual_bucket(20));
    assert_eq!(e.spd[3 * n + 3], 0);
    assert_eq!(e.degrees, vec![17, 1, 1, 17, 1, 1]);
    let d = e.distances.unwrap();
    assert_eq!(d[1 * n + 4], 5.0);
    assert_eq!(d[0 * n + 1], 0.0);
    assert!(StructuralEncoding::build(Some(&lig.without_coords()), Some(&poc), 20, 16).distances.is_none());
}

mod encode_unit {
    use bit_core::encode::*;
    use bit_core::molgraph::{Atom, Bond, BondOrder, Domain, MolecularGraph};

    fn graph(n: usize, bonds: &[(usize, usize, BondOrder)]) -> MolecularGraph {
        MolecularGraph::new(
            vec![Atom { element: 6, coords: None }; n],
            bonds.iter().map(|&(i, j, order)| Bond { i, j, order }).collect(),
            Domain::Molecule,
        )
        .unwrap()
    }

    use bit_core::molgraph::BondOrder::*;

    #[test]
    fn spd_examples() {
        let tri = graph(3, &[(0, 1, Single), (1, 2, Single), (0, 2, Single)]);
        let s = spd_matrix(&tri, 20);
        assert!((0..3).all(|i| (0..3).all(|j| s[i][j] == usize::from(i != j))));
        let path = graph(3, &[(0, 1, Single), (1, 2, Single)]);
        assert_eq!(spd_matrix(&path, 20)[0][2], 2);
        assert_eq!(spd_matrix(&path, 1)[0][2], 1);
        let two = graph(4, &[(0, 1, Single), (2, 3, Single)]);
        assert_eq!(spd_matrix(&two, 20)[0][3], unreachable_bucket(20));
    }

    #[test]
    fn edge_path_examples() {
        let g = graph(3, &[(0, 1, Double), (1, 2, Single)]);
        let e = edge_path_features(&g, 20);
        assert_eq!(e[0][1], vec![Double.index()]);
        assert_eq!(e[1][2], vec![Single.index()]);
        assert_eq!(e[0][2], vec![Double.index(), Single.index()]);
        assert_eq!(e[2][0], vec![Single.index(), Double.index()]);
        assert!(edge_path_features(&g, 1)[0][2].is_empty());
    }

    #[test]
    fn four_cycle_takes_smaller_intermediate() {
        // 0-1-2-3-0: paths 0→2 via 1 (double, triple) or via 3 (single, aromatic)
        let g = graph(4, &[(0, 1, Double), (1, 2, Triple), (2, 3, Aromatic), (3, 0, Single)]);
        let e = edge_path_features(&g, 20);
        assert_eq!(e[0][2], vec![Double.index(), Triple.index()]);
        assert_eq!(e[2][0], vec![Triple.index(), Double.index()]);
        // 1→3 via 0 (double, single) beats via 2
        assert_eq!(e[1][3], vec![Double.index(), Single.index()]);
    }

    #[test]
    fn distances_and_classes() {
        let d = pair_distances(&[[0.0, 0.0, 0.0], [3.0, 4.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(d[1], 5.0);
        assert_eq!(d[2], 0.0);
        let layout = TokenLayout::new(2, 2);
        let c = pair_domain_classes(&layout);
        assert_eq!(c.iter().filter(|&&x| x == PairDomainClass::Inter).count(), 8);
        let n = layout.len();
        assert!((0..n).all(|i| (0..n).all(|j| c[i * n + j] == c[j * n + i])));
        let m = pair_domain_classes(&TokenLayout::new(3, 0));
        assert_eq!(m.iter().filter(|&&x| x == PairDomainClass::IntraMol).count(), 9);
        assert_eq!(m.iter().filter(|&&x| x == PairDomainClass::Virtual).count(), 7);
    }

    #[test]
    fn layout_positions() {
        let l = TokenLayout::new(3, 2);
        assert_eq!(l.len(), 7);
        assert_eq!(l.mol_vnode(), Some(0));
        assert_eq!(l.pocket_vnode(), Some(4));
        assert_eq!(l.pocket_token(1), 6);
        let p = TokenLayout::new(0, 2);
        assert_eq!(p.pocket_vnode(), Some(0));
        assert_eq!(p.mol_vnode(), None);
    }
}
