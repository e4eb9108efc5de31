use serde::Serialize;

use super::finetune::{embed, predict_proba, score_matrix};
use super::metrics::ranking;
use super::TaskError;
use crate::model::{BitConfig, EncodeMode};
use crate::molgraph::MolecularGraph;
use crate::numcore::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScreenCandidate {
    pub id: String,
    pub stage1_score: f64,
    pub stage2_prob: f64,
    pub rank: usize,
}

/// Library indices kept by stage 1: the union of each pocket's top `k1`, ordered by
/// best score over pockets (ties by library order). Returns indices and their best scores.
pub fn coarse_stage(scores: &[Vec<f64>], k1: usize) -> (Vec<usize>, Vec<f64>) {
    let n = scores.first().map_or(0, Vec::len);
    let mut keep = vec![false; n];
    for row in scores {
        for &i in ranking(row).iter().take(k1) {
            keep[i] = true;
        }
    }
    let best: Vec<f64> = (0..n).map(|j| scores.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut kept: Vec<usize> = (0..n).filter(|&j| keep[j]).collect();
    kept.sort_by(|&a, &b| best[b].total_cmp(&best[a]));
    let s = kept.iter().map(|&j| best[j]).collect();
    (kept, s)
}

/// Greedy max-min selection of `m` items from `order` (best first): the first item is
/// `order[0]`, each next one maximizes its minimum Euclidean distance to those chosen,
/// ties going to the better-ranked item. Returns positions into `order`, ascending.
pub fn max_min_diverse(order: &[usize], emb: &[Vec<f64>], m: usize) -> Vec<usize> {
    if order.is_empty() || m == 0 {
        return Vec::new();
    }
    let d = |a: usize, b: usize| emb[a].iter().zip(&emb[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut chosen = vec![0usize];
    let mut min_d: Vec<f64> = order.iter().map(|&j| d(j, order[0])).collect();
    while chosen.len() < m.min(order.len()) {
        let mut best: Option<usize> = None;
        for p in 0..order.len() {
            if chosen.contains(&p) {
                continue;
            }
            if best.is_none_or(|b| min_d[p] > min_d[b]) {
                best = Some(p);
            }
        }
        let b = best.expect("unchosen item exists");
        chosen.push(b);
        for (p, md) in min_d.iter_mut().enumerate() {
            *md = md.min(d(order[p], order[b]));
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Coarse-to-fine screening: dual-encoder dot products keep each pocket's top `k1`
/// ligands, the unimodal classifier re-ranks the survivors, and greedy max-min
/// selection in ligand embedding space keeps `m` of them. `dual` holds the fine-tuned
/// retrieval weights and `classifier` the fine-tuned activity classifier.
pub fn pipeline_screen(
    dual: &ParamStore,
    classifier: &ParamStore,
    model: &BitConfig,
    pockets: &[&MolecularGraph],
    library: &[(String, MolecularGraph)],
    k1: usize,
    m: usize,
) -> Result<Vec<ScreenCandidate>, TaskError> {
    if m == 0 || k1 < m {
        return Err(TaskError::Config(format!("need k1 >= m >= 1, got k1 = {k1}, m = {m}")));
    }
    if library.is_empty() || pockets.is_empty() {
        return Err(TaskError::EmptySplit("screening needs pockets and a library".into()));
    }
    let lig: Vec<&MolecularGraph> = library.iter().map(|(_, g)| g).collect();
    let le = embed(dual, model, &lig, EncodeMode::DualLigand)?;
    let pe = embed(dual, model, pockets, EncodeMode::DualPocket)?;
    let (kept, s1) = coarse_stage(&score_matrix(&pe, &le), k1);
    let survivors: Vec<&MolecularGraph> = kept.iter().map(|&j| &library[j].1).collect();
    let probs = predict_proba(classifier, model, &survivors)?;
    let order2 = ranking(&probs);
    let order: Vec<usize> = order2.iter().map(|&p| kept[p]).collect();
    let picked = max_min_diverse(&order, &le, m);
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(rank, p)| {
            let q = order2[p];
            ScreenCandidate {
                id: library[kept[q]].0.clone(),
                stage1_score: s1[q],
                stage2_prob: probs[q],
                rank: rank + 1,
            }
        })
        .collect())
}
