#![allow(dead_code)]

use bit_core::molgraph::{Atom, MolecularGraph};
use rand::Rng;

/// Position of every item in the descending order, ties by input index, by counting.
pub fn positions(scores: &[f64]) -> Vec<usize> {
    (0..scores.len())
        .map(|i| (0..scores.len()).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count())
        .collect()
}

pub fn ef_oracle(scores: &[f64], labels: &[bool], alpha: f64) -> f64 {
    let top = (alpha * scores.len() as f64).ceil() as usize;
    let pos = positions(scores);
    let hits = (0..scores.len()).filter(|&i| labels[i] && pos[i] < top).count();
    let p = labels.iter().filter(|&&l| l).count();
    hits as f64 / (p as f64 * alpha)
}

pub fn re_oracle(scores: &[f64], labels: &[bool], x: f64) -> f64 {
    let n = scores.len();
    let p = labels.iter().filter(|&&l| l).count();
    let target = ((x * (n - p) as f64).ceil() as usize).max(1);
    let pos = positions(scores);
    for cut in 1..=n {
        let fp = (0..n).filter(|&i| !labels[i] && pos[i] < cut).count();
        if fp == target {
            let tp = (0..n).filter(|&i| labels[i] && pos[i] < cut).count();
            return (tp * n) as f64 / (p * fp) as f64;
        }
    }
    unreachable!("negatives exist")
}

pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

pub fn rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn apply(r: &[[f64; 3]; 3], t: [f64; 3], p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i])
}

pub fn moved(g: &MolecularGraph, r: &[[f64; 3]; 3], t: [f64; 3]) -> MolecularGraph {
    let atoms = g.atoms.iter().map(|a| Atom { element: a.element, coords: a.coords.map(|c| apply(r, t, c)) }).collect();
    MolecularGraph { atoms, ..g.clone() }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
