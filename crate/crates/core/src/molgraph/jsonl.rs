use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Atom, Bond, BondOrder, ComplexRecord, DatasetEntry, Domain, GraphError, MolecularGraph, Payload, MAX_ELEMENT,
};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: malformed JSON: {msg}")]
    Json { line: usize, msg: String },
    #[error("line {line}: unknown kind `{kind}`")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line}: {source}")]
    Graph { line: usize, source: GraphError },
}

impl ParseError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::Io { .. } => None,
            ParseError::Json { line, .. } | ParseError::UnknownKind { line, .. } | ParseError::Graph { line, .. } => {
                Some(*line)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawAtom {
    z: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xyz: Option<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct RawGraph {
    atoms: Vec<RawAtom>,
    #[serde(default)]
    bonds: Vec<(usize, usize, u32)>,
}

#[derive(Deserialize)]
struct RawSingle {
    id: String,
    #[serde(flatten)]
    graph: RawGraph,
}

#[derive(Deserialize)]
struct RawComplex {
    id: String,
    ligand: RawGraph,
    pocket: RawGraph,
    #[serde(default)]
    affinity: Option<f64>,
    #[serde(default)]
    active: Option<bool>,
}

#[derive(Serialize)]
struct OutSingle<'a> {
    kind: &'static str,
    id: &'a str,
    atoms: Vec<RawAtom>,
    bonds: Vec<(usize, usize, u32)>,
}

#[derive(Serialize)]
struct OutComplex<'a> {
    kind: &'static str,
    id: &'a str,
    ligand: RawGraph,
    pocket: RawGraph,
    #[serde(skip_serializing_if = "Option::is_none")]
    affinity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    active: Option<bool>,
}

fn to_graph(raw: RawGraph, domain: Domain) -> Result<MolecularGraph, GraphError> {
    let mut atoms = Vec::with_capacity(raw.atoms.len());
    for a in raw.atoms {
        if a.z == 0 || a.z > MAX_ELEMENT as u32 {
            return Err(GraphError::UnknownElement(a.z));
        }
        atoms.push(Atom { element: a.z as u8, coords: a.xyz });
    }
    let n = atoms.len();
    let mut bonds = Vec::with_capacity(raw.bonds.len());
    for (i, j, order) in raw.bonds {
        if i >= n || j >= n {
            return Err(GraphError::BondOutOfRange(i, j, n));
        }
        bonds.push(Bond { i, j, order: BondOrder::from_code(order)? });
    }
    MolecularGraph::new(atoms, bonds, domain)
}

fn from_graph(g: &MolecularGraph) -> RawGraph {
    RawGraph {
        atoms: g.atoms.iter().map(|a| RawAtom { z: a.element as u32, xyz: a.coords }).collect(),
        bonds: g.bonds.iter().map(|b| (b.i, b.j, b.order.code())).collect(),
    }
}

fn parse_line(line: usize, text: &str) -> Result<DatasetEntry, ParseError> {
    let json_err = |e: serde_json::Error| ParseError::Json { line, msg: e.to_string() };
    let graph_err = |source| ParseError::Graph { line, source };
    let value: serde_json::Value = serde_json::from_str(text).map_err(json_err)?;
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| ParseError::Json { line, msg: "missing string field `kind`".into() })?
        .to_string();
    match kind.as_str() {
        "molecule" | "pocket" => {
            let raw: RawSingle = serde_json::from_value(value).map_err(json_err)?;
            let domain = if kind == "molecule" { Domain::Molecule } else { Domain::Pocket };
            let g = to_graph(raw.graph, domain).map_err(graph_err)?;
            let payload = if kind == "molecule" { Payload::Molecule(g) } else { Payload::Pocket(g) };
            Ok(DatasetEntry { id: raw.id, payload })
        }
        "complex" => {
            let raw: RawComplex = serde_json::from_value(value).map_err(json_err)?;
            let ligand = to_graph(raw.ligand, Domain::Molecule).map_err(graph_err)?;
            let pocket = to_graph(raw.pocket, Domain::Pocket).map_err(graph_err)?;
            let c = ComplexRecord::new(ligand, pocket, raw.affinity, raw.active).map_err(graph_err)?;
            Ok(DatasetEntry { id: raw.id, payload: Payload::Complex(c) })
        }
        _ => Err(ParseError::UnknownKind { line, kind }),
    }
}

/// Parses JSONL text; blank lines are skipped, line numbers are 1-based.
pub fn parse_jsonl_str(text: &str) -> Result<Vec<DatasetEntry>, ParseError> {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| parse_line(i + 1, l)).collect()
}

pub fn parse_jsonl(path: impl AsRef<Path>) -> Result<Vec<DatasetEntry>, ParseError> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|source| ParseError::Io { path: path.display().to_string(), source })?;
    parse_jsonl_str(&text)
}

/// One-line JSON for an entry, without the trailing newline.
pub fn entry_to_json(entry: &DatasetEntry) -> String {
    let out = match &entry.payload {
        Payload::Molecule(g) | Payload::Pocket(g) => {
            let kind = if matches!(entry.payload, Payload::Molecule(_)) { "molecule" } else { "pocket" };
            let raw = from_graph(g);
            serde_json::to_string(&OutSingle { kind, id: &entry.id, atoms: raw.atoms, bonds: raw.bonds })
        }
        Payload::Complex(c) => serde_json::to_string(&OutComplex {
            kind: "complex",
            id: &entry.id,
            ligand: from_graph(&c.ligand),
            pocket: from_graph(&c.pocket),
            affinity: c.affinity,
            active: c.active,
        }),
    };
    out.expect("dataset entries serialize")
}

pub fn write_jsonl<W: Write>(mut w: W, entries: &[DatasetEntry]) -> std::io::Result<()> {
    for e in entries {
        w.write_all(entry_to_json(e).as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
