use std::collections::{BTreeMap, VecDeque};

use serde::{Serialize, Serializer};

use super::{DatasetEntry, Domain, MolecularGraph, Payload};

/// Shortest-path histogram key; unreachable pairs sort last and print as `"none"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpdKey {
    Hops(usize),
    Unreachable,
}

impl Serialize for SpdKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SpdKey::Hops(h) => s.serialize_str(&h.to_string()),
            SpdKey::Unreachable => s.serialize_str("none"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DomainStats {
    pub graphs: usize,
    pub spd: BTreeMap<SpdKey, u64>,
    pub degree: BTreeMap<usize, u64>,
}

pub type StatsReport = BTreeMap<Domain, DomainStats>;

/// Breadth-first hop counts from every atom; `None` when unreachable.
pub fn hop_distances(g: &MolecularGraph) -> Vec<Vec<Option<usize>>> {
    let adj = g.adjacency();
    let n = g.n_atoms();
    let mut out = vec![vec![None; n]; n];
    let mut queue = VecDeque::new();
    for (src, row) in out.iter_mut().enumerate() {
        row[src] = Some(0);
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = row[u].expect("queued nodes have a distance");
            for &(v, _) in &adj[u] {
                if row[v].is_none() {
                    row[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
    }
    out
}

fn accumulate(stats: &mut DomainStats, g: &MolecularGraph) {
    stats.graphs += 1;
    let hops = hop_distances(g);
    for (i, row) in hops.iter().enumerate() {
        for (j, d) in row.iter().enumerate() {
            if i == j {
                continue;
            }
            let key = d.map_or(SpdKey::Unreachable, SpdKey::Hops);
            *stats.spd.entry(key).or_default() += 1;
        }
    }
    for d in g.degrees() {
        *stats.degree.entry(d).or_default() += 1;
    }
}

/// Per-domain histograms of ordered-pair shortest paths and atom degrees.
/// Complex ligands count as molecules and complex pockets as pockets.
pub fn graph_stats(entries: &[DatasetEntry]) -> StatsReport {
    let mut report = StatsReport::new();
    for e in entries {
        match &e.payload {
            Payload::Molecule(g) => accumulate(report.entry(Domain::Molecule).or_default(), g),
            Payload::Pocket(g) => accumulate(report.entry(Domain::Pocket).or_default(), g),
            Payload::Complex(c) => {
                accumulate(report.entry(Domain::Molecule).or_default(), &c.ligand);
                accumulate(report.entry(Domain::Pocket).or_default(), &c.pocket);
            }
        }
    }
    report
}
