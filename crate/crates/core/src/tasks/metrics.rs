use std::collections::BTreeMap;

use serde::Serialize;

use super::TaskError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub sd: f64,
    pub r: f64,
}

/// RMSE, MAE, Pearson R, and SD of `y` around the least-squares line `a + b·ŷ`.
pub fn regression_metrics(pred: &[f64], labels: &[f64]) -> Result<RegressionMetrics, TaskError> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(TaskError::Metric(format!("need equal non-zero lengths, got {} and {}", pred.len(), labels.len())));
    }
    if pred.len() < 3 {
        return Err(TaskError::Metric("SD needs at least 3 points".into()));
    }
    let n = pred.len() as f64;
    let rmse = (pred.iter().zip(labels).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n).sqrt();
    let mae = pred.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
    let mp = pred.iter().sum::<f64>() / n;
    let my = labels.iter().sum::<f64>() / n;
    let sxy: f64 = pred.iter().zip(labels).map(|(p, y)| (p - mp) * (y - my)).sum();
    let sxx: f64 = pred.iter().map(|p| (p - mp).powi(2)).sum();
    let syy: f64 = labels.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(TaskError::ConstantPredictions);
    }
    if syy == 0.0 {
        return Err(TaskError::Metric("constant labels leave R undefined".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let b = sxy / sxx;
    let a = my - b * mp;
    let ss: f64 = pred.iter().zip(labels).map(|(p, y)| (y - (a + b * p)).powi(2)).sum();
    let sd = (ss / (n - 1.0)).sqrt();
    Ok(RegressionMetrics { rmse, mae, sd, r })
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), TaskError> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(TaskError::Metric(format!(
            "need equal non-zero lengths, got {} and {}",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(TaskError::Metric("non-finite score".into()));
    }
    let p = labels.iter().filter(|&&l| l).count();
    Ok((p, labels.len() - p))
}

/// Indices sorted by descending score; ties keep input order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Mann–Whitney AUC: share of (active, decoy) pairs ranked correctly, ties counted ½.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64, TaskError> {
    let (p, n) = check_binary(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(TaskError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // doubled counts keep the tie halves integral
    let mut twice_wins: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let pos = idx[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        let neg = (j - i) as u128 - pos;
        twice_wins += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        i = j;
    }
    Ok(twice_wins as f64 / (2 * p as u128 * n as u128) as f64)
}

/// `EF_α = NTB_α / (NTB_t · α)` with a top set of `ceil(α·n)` compounds.
pub fn enrichment_factor(scores: &[f64], labels: &[bool], alpha: f64) -> Result<f64, TaskError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TaskError::Metric(format!("fraction must be in (0, 1), got {alpha}")));
    }
    let (p, _) = check_binary(scores, labels)?;
    if p == 0 {
        return Err(TaskError::NoBinders);
    }
    let top = ((alpha * scores.len() as f64).ceil() as usize).min(scores.len());
    let hits = ranking(scores)[..top].iter().filter(|&&i| labels[i]).count();
    Ok(hits as f64 / (p as f64 * alpha))
}

/// `RE(x) = TP·n / (P·FP_x)`, cut where the false-positive count first reaches `ceil(x·negatives)`.
pub fn roc_enrichment(scores: &[f64], labels: &[bool], fpr: f64) -> Result<f64, TaskError> {
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(TaskError::Metric(format!("false-positive rate must be in (0, 1), got {fpr}")));
    }
    let (p, n) = check_binary(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(TaskError::SingleClass);
    }
    let target = ((fpr * n as f64).ceil() as usize).max(1);
    let (mut tp, mut fp) = (0usize, 0usize);
    for i in ranking(scores) {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
            if fp == target {
                break;
            }
        }
    }
    Ok((tp * scores.len()) as f64 / (p * fp) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScreeningMetrics {
    pub auc: f64,
    pub ef: BTreeMap<String, f64>,
    pub re: BTreeMap<String, f64>,
}

pub const EF_FRACTIONS: [f64; 3] = [0.005, 0.01, 0.05];
pub const RE_FRACTIONS: [f64; 4] = [0.005, 0.01, 0.02, 0.05];

pub fn fraction_key(f: f64) -> String {
    format!("{}%", f * 100.0)
}

pub fn screening_metrics(scores: &[f64], labels: &[bool]) -> Result<ScreeningMetrics, TaskError> {
    let auc = auc_roc(scores, labels)?;
    let mut ef = BTreeMap::new();
    for a in EF_FRACTIONS {
        ef.insert(fraction_key(a), enrichment_factor(scores, labels, a)?);
    }
    let mut re = BTreeMap::new();
    for x in RE_FRACTIONS {
        re.insert(fraction_key(x), roc_enrichment(scores, labels, x)?);
    }
    Ok(ScreeningMetrics { auc, ef, re })
}

/// `−log(exp(s⁺/τ) / Σ exp(s/τ))` over the positive and every decoy.
pub fn infonce_loss(query: &[f64], positive: &[f64], decoys: &[Vec<f64>], tau: f64) -> Result<f64, TaskError> {
    if tau <= 0.0 {
        return Err(TaskError::ZeroTemperature);
    }
    if decoys.is_empty() {
        return Err(TaskError::Metric("InfoNCE needs at least one decoy".into()));
    }
    let dot = |v: &[f64]| -> Result<f64, TaskError> {
        if v.len() != query.len() {
            return Err(TaskError::Metric("vector lengths differ".into()));
        }
        Ok(query.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / tau)
    };
    let mut logits = vec![dot(positive)?];
    for d in decoys {
        logits.push(dot(d)?);
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    Ok(lse - logits[0])
}
