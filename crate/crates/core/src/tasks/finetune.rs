use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{Labeled, RetrievalData};
use super::metrics::{regression_metrics, screening_metrics, RegressionMetrics, ScreeningMetrics};
use super::TaskError;
use crate::model::{
    add_task_heads, affinity_head, classify_head, forward_encode, BitConfig, EncodeMode, Sample, TaskHead,
};
use crate::molgraph::{ComplexRecord, MolecularGraph};
use crate::numcore::{adamw_step, lr_at_step, AdamW, Array, Grads, OptState, Param, ParamStore, Tape};

/// Fine-tuning schedule: AdamW with linear warm-up then linear decay, clipped gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub clip: f64,
    pub optimizer: AdamW,
    /// Share of the data held out for evaluation.
    pub test_fraction: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            peak_lr: 5e-4,
            warmup_ratio: 0.06,
            clip: 5.0,
            optimizer: AdamW::default(),
            test_fraction: 0.2,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TaskError::Config("epochs and batch_size must be positive".into()));
        }
        if self.peak_lr.is_nan()
            || self.peak_lr <= 0.0
            || !(0.0..1.0).contains(&self.warmup_ratio)
            || self.clip.is_nan()
            || self.clip <= 0.0
        {
            return Err(TaskError::Config("peak_lr and clip must be positive, warmup_ratio in [0, 1)".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(TaskError::Config("test_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Seeded random split into (train, test) index sets; test gets `round(fraction·n)` items.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((test_fraction * n as f64).round() as usize).min(n);
    let test = idx.split_off(n - n_test);
    (idx, test)
}

fn chunked_epoch(train: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = train.to_vec();
    order.shuffle(rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Runs the optimizer over precomputed epoch batches; returns the mean training loss per epoch.
fn fit<F>(
    params: &mut ParamStore,
    sched: &Schedule,
    epochs: Vec<Vec<Vec<usize>>>,
    rng: &mut ChaCha8Rng,
    mut loss: F,
) -> Result<Vec<f64>, TaskError>
where
    F: FnMut(&ParamStore, &[usize], &mut ChaCha8Rng) -> Result<(f64, Grads), TaskError>,
{
    let total: usize = epochs.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(TaskError::EmptySplit("training".into()));
    }
    let total = total as u64;
    let warmup = ((sched.warmup_ratio * total as f64).round() as u64).min(total - 1);
    let mut opt = OptState::default();
    let mut step = 0u64;
    let mut history = Vec::with_capacity(epochs.len());
    for batches in epochs {
        let mut sum = 0.0;
        let n = batches.len();
        for b in batches {
            let (l, mut g) = loss(params, &b, rng)?;
            sum += l;
            g.clip_global_norm(sched.clip);
            let lr = lr_at_step((step + 1).min(total), warmup, total, sched.peak_lr)?;
            adamw_step(params, &g, &mut opt, &sched.optimizer, lr)?;
            step += 1;
        }
        history.push(sum / n as f64);
    }
    Ok(history)
}

/// Mean of per-item losses with per-item tapes evaluated in parallel and summed in order.
fn mean_loss<T, F>(params: &ParamStore, items: &[T], seeds: &[u64], f: F) -> Result<(f64, Grads), TaskError>
where
    T: Sync,
    F: Fn(&mut Tape, &T, &mut ChaCha8Rng) -> Result<crate::numcore::Var, TaskError> + Sync,
{
    let w = 1.0 / items.len() as f64;
    let per: Vec<Result<(f64, Grads), TaskError>> = items
        .par_iter()
        .zip(seeds)
        .map(|(it, &seed)| {
            let mut tape = Tape::new(params);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = f(&mut tape, it, &mut rng)?;
            let l = tape.scale(l, w);
            let g = tape.backward(l)?;
            Ok((tape.scalar(l), tape.param_grads(&g)))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = Grads::new();
    for r in per {
        let (l, g) = r?;
        total += l;
        grads.accumulate(&g);
    }
    Ok((total, grads))
}

fn seeds(rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
    (0..n).map(|_| rng.next_u64()).collect()
}

const AFFINITY_NORM: &str = "head.affinity.norm";

/// Fusion forward pass over a complex with the regression head, in standardized units.
fn affinity_raw(
    tape: &mut Tape,
    model: &BitConfig,
    c: &ComplexRecord,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<crate::numcore::Var, TaskError> {
    let s = Sample::complex(model, &c.ligand, &c.pocket, true, c.ligand.has_coords() && c.pocket.has_coords())?;
    let (pooled, _) = forward_encode(tape, model, &s, EncodeMode::Fusion, rng)?;
    Ok(affinity_head(tape, pooled)?)
}

/// Predicted affinities in label units.
pub fn predict_affinity(
    params: &ParamStore,
    model: &BitConfig,
    complexes: &[&ComplexRecord],
) -> Result<Vec<f64>, TaskError> {
    let norm = params.get(AFFINITY_NORM).ok_or_else(|| TaskError::Config("affinity head is not fitted".into()))?;
    let (mu, sd) = (norm.data()[0], norm.data()[1]);
    complexes
        .par_iter()
        .map(|c| {
            let mut tape = Tape::new(params);
            let y = affinity_raw(&mut tape, model, c, None)?;
            Ok(mu + sd * tape.scalar(y))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AffinityReport {
    pub train_losses: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: RegressionMetrics,
}

/// Fits the fusion encoder and regression head on labeled complexes; metrics on the held-out split.
pub fn affinity_finetune(
    params: &mut ParamStore,
    model: &BitConfig,
    data: &[ComplexRecord],
    sched: &Schedule,
    seed: u64,
) -> Result<AffinityReport, TaskError> {
    sched.validate()?;
    let labeled: Vec<(&ComplexRecord, f64)> = data.iter().filter_map(|c| c.affinity.map(|y| (c, y))).collect();
    let (train, test) = split_indices(labeled.len(), sched.test_fraction, seed);
    if train.len() < 2 || test.len() < 3 {
        return Err(TaskError::EmptySplit(format!("{} labeled complexes are too few to split", labeled.len())));
    }
    add_task_heads(params, model, TaskHead::Affinity, seed ^ 0xAF);
    let ys: Vec<f64> = train.iter().map(|&i| labeled[i].1).collect();
    let mu = ys.iter().sum::<f64>() / ys.len() as f64;
    let sd = (ys.iter().map(|y| (y - mu).powi(2)).sum::<f64>() / ys.len() as f64).sqrt().max(1e-6);
    params.insert_param(AFFINITY_NORM, Param { value: Array::new(vec![2], vec![mu, sd])?, trainable: false });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epochs: Vec<_> = (0..sched.epochs).map(|_| chunked_epoch(&train, sched.batch_size, &mut rng)).collect();
    let train_losses = fit(params, sched, epochs, &mut rng, |p, batch, rng| {
        let items: Vec<(&ComplexRecord, f64)> =
            batch.iter().map(|&i| (labeled[i].0, (labeled[i].1 - mu) / sd)).collect();
        let sd_seeds = seeds(rng, items.len());
        mean_loss(p, &items, &sd_seeds, |tape, (c, y), r| {
            let out = affinity_raw(tape, model, c, Some(r))?;
            let se = tape.mean_sq_rows(out, vec![*y].into());
            Ok(se)
        })
    })?;
    let test_c: Vec<&ComplexRecord> = test.iter().map(|&i| labeled[i].0).collect();
    let pred = predict_affinity(params, model, &test_c)?;
    let labels: Vec<f64> = test.iter().map(|&i| labeled[i].1).collect();
    let metrics = regression_metrics(&pred, &labels)?;
    Ok(AffinityReport { train_losses, n_train: train.len(), n_test: test.len(), metrics })
}

/// Held-out metrics of a fitted affinity model on the split that `affinity_finetune`
/// used for the same data, test fraction, and seed.
pub fn evaluate_affinity(
    params: &ParamStore,
    model: &BitConfig,
    data: &[ComplexRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<RegressionMetrics, TaskError> {
    let labeled: Vec<(&ComplexRecord, f64)> = data.iter().filter_map(|c| c.affinity.map(|y| (c, y))).collect();
    let (_, test) = split_indices(labeled.len(), test_fraction, seed);
    if test.len() < 3 {
        return Err(TaskError::EmptySplit("held-out affinity split".into()));
    }
    let test_c: Vec<&ComplexRecord> = test.iter().map(|&i| labeled[i].0).collect();
    let pred = predict_affinity(params, model, &test_c)?;
    let labels: Vec<f64> = test.iter().map(|&i| labeled[i].1).collect();
    regression_metrics(&pred, &labels)
}

fn classify_logit(
    tape: &mut Tape,
    model: &BitConfig,
    g: &MolecularGraph,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<crate::numcore::Var, TaskError> {
    let s = Sample::molecule(model, g, true, false)?;
    let (pooled, _) = forward_encode(tape, model, &s, EncodeMode::Unimodal, rng)?;
    Ok(classify_head(tape, pooled)?)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Classifier probabilities from the unimodal 2D encoding.
pub fn predict_proba(params: &ParamStore, model: &BitConfig, mols: &[&MolecularGraph]) -> Result<Vec<f64>, TaskError> {
    mols.par_iter()
        .map(|g| {
            let mut tape = Tape::new(params);
            let l = classify_logit(&mut tape, model, g, None)?;
            Ok(sigmoid(tape.scalar(l)))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassifyReport {
    pub train_losses: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub auc: f64,
}

/// Binary classifier on the unimodal encoding. With `shuffle_labels` the training labels
/// are permuted first, giving a null control evaluated against the true labels.
pub fn classify_finetune(
    params: &mut ParamStore,
    model: &BitConfig,
    data: &[Labeled],
    sched: &Schedule,
    seed: u64,
    shuffle_labels: bool,
) -> Result<ClassifyReport, TaskError> {
    sched.validate()?;
    if data.iter().any(|d| d.label > 1) {
        return Err(TaskError::Config("classification labels must be 0 or 1".into()));
    }
    let (train, test) = split_indices(data.len(), sched.test_fraction, seed);
    let mut train_labels: Vec<f64> = train.iter().map(|&i| data[i].label as f64).collect();
    if train_labels.iter().all(|&l| l == train_labels[0]) {
        return Err(TaskError::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if shuffle_labels {
        train_labels.shuffle(&mut rng);
    }
    add_task_heads(params, model, TaskHead::Classify, seed ^ 0xC1);
    let pos: Vec<usize> = (0..train.len()).collect();
    let epochs: Vec<_> = (0..sched.epochs).map(|_| chunked_epoch(&pos, sched.batch_size, &mut rng)).collect();
    let train_losses = fit(params, sched, epochs, &mut rng, |p, batch, rng| {
        let items: Vec<(&MolecularGraph, f64)> =
            batch.iter().map(|&k| (&data[train[k]].graph, train_labels[k])).collect();
        let s = seeds(rng, items.len());
        mean_loss(p, &items, &s, |tape, (g, y), r| {
            let logit = classify_logit(tape, model, g, Some(r))?;
            Ok(tape.bce_logits(logit, vec![*y].into()))
        })
    })?;
    let auc = classify_auc(params, model, data, &test)?;
    Ok(ClassifyReport { train_losses, n_train: train.len(), n_test: test.len(), auc })
}

fn classify_auc(params: &ParamStore, model: &BitConfig, data: &[Labeled], test: &[usize]) -> Result<f64, TaskError> {
    let mols: Vec<&MolecularGraph> = test.iter().map(|&i| &data[i].graph).collect();
    let probs = predict_proba(params, model, &mols)?;
    let labels: Vec<bool> = test.iter().map(|&i| data[i].label == 1).collect();
    super::metrics::auc_roc(&probs, &labels)
}

/// Held-out AUC of a fitted classifier on the split `classify_finetune` used.
pub fn evaluate_classify(
    params: &ParamStore,
    model: &BitConfig,
    data: &[Labeled],
    test_fraction: f64,
    seed: u64,
) -> Result<f64, TaskError> {
    let (_, test) = split_indices(data.len(), test_fraction, seed);
    classify_auc(params, model, data, &test)
}

/// Held-out AUCs of classifiers trained on permuted labels, one per permutation.
#[derive(Clone, Debug, Serialize)]
pub struct NullControl {
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
}

/// Label-shuffled control averaged over `permutations` independent runs from the same
/// initial weights; run `k` uses seed `seed + k` for its split, permutation, and head.
pub fn classify_null_control(
    params: &ParamStore,
    model: &BitConfig,
    data: &[Labeled],
    sched: &Schedule,
    seed: u64,
    permutations: usize,
) -> Result<NullControl, TaskError> {
    if permutations == 0 {
        return Err(TaskError::Config("null control needs at least one permutation".into()));
    }
    let aucs = (0..permutations as u64)
        .map(|k| {
            let mut p = params.clone();
            Ok(classify_finetune(&mut p, model, data, sched, seed.wrapping_add(k), true)?.auc)
        })
        .collect::<Result<Vec<f64>, TaskError>>()?;
    let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
    Ok(NullControl { aucs, mean_auc })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub schedule: Schedule,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Decoys per active, shared by the pockets of a batch.
    pub decoys: usize,
    /// Permute training ligand labels before fitting (null control).
    pub shuffle_labels: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule { epochs: 24, batch_size: 8, peak_lr: 3e-4, ..Schedule::default() },
            tau: 0.07,
            decoys: 64,
            shuffle_labels: false,
        }
    }
}

pub fn pocket_sample(model: &BitConfig, g: &MolecularGraph) -> Result<Sample, TaskError> {
    Ok(Sample::pocket(model, g, true, g.has_coords())?)
}

pub fn ligand_sample(model: &BitConfig, g: &MolecularGraph) -> Result<Sample, TaskError> {
    Ok(Sample::molecule(model, g, true, false)?)
}

/// Unit-norm retrieval embeddings for pockets (3D when available) or ligands (2D).
pub fn embed(
    params: &ParamStore,
    model: &BitConfig,
    graphs: &[&MolecularGraph],
    mode: EncodeMode,
) -> Result<Vec<Vec<f64>>, TaskError> {
    graphs
        .par_iter()
        .map(|g| {
            let s = match mode {
                EncodeMode::DualPocket => pocket_sample(model, g)?,
                EncodeMode::DualLigand => ligand_sample(model, g)?,
                _ => return Err(TaskError::Config("embeddings come from the dual modes".into())),
            };
            let mut tape = Tape::new(params);
            let (v, _) = forward_encode(&mut tape, model, &s, mode, None)?;
            Ok(tape.value(v).to_vec())
        })
        .collect()
}

/// `scores[i][j] = a_i · b_j`.
pub fn score_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().map(|x| b.iter().map(|y| x.iter().zip(y).map(|(p, q)| p * q).sum()).collect()).collect()
}

/// Batch InfoNCE: every pocket scores its own positive against the shared decoys.
fn retrieval_batch_loss(
    params: &ParamStore,
    model: &BitConfig,
    pockets: &[&MolecularGraph],
    positives: &[&MolecularGraph],
    decoys: &[&MolecularGraph],
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Grads), TaskError> {
    let mut tape = Tape::new(params);
    let mut stack = |tape: &mut Tape, graphs: &[&MolecularGraph], mode| -> Result<crate::numcore::Var, TaskError> {
        let mut acc: Option<crate::numcore::Var> = None;
        for g in graphs {
            let s = if mode == EncodeMode::DualPocket { pocket_sample(model, g)? } else { ligand_sample(model, g)? };
            let (v, _) = forward_encode(tape, model, &s, mode, Some(rng))?;
            acc = Some(match acc {
                Some(a) => tape.concat_rows(a, v),
                None => v,
            });
        }
        acc.ok_or_else(|| TaskError::EmptySplit("retrieval batch".into()))
    };
    let p = stack(&mut tape, pockets, EncodeMode::DualPocket)?;
    let pos = stack(&mut tape, positives, EncodeMode::DualLigand)?;
    let dec = stack(&mut tape, decoys, EncodeMode::DualLigand)?;
    let b = pockets.len();
    // row i of the positive scores is p_i · pos_i
    let all_pos = tape.matmul_bt(p, pos);
    let diag: Vec<f64> = (0..b * b).map(|k| if k / b == k % b { 1.0 } else { 0.0 }).collect();
    let own = tape.mul_const(all_pos, diag.into());
    let ones = tape.constant(crate::numcore::Mat::new(b, 1, vec![1.0; b]));
    let s_pos = tape.matmul(own, ones);
    let s_dec = tape.matmul_bt(p, dec);
    let d = decoys.len();
    // logits row i: [s⁺_i, decoys...] built as [s_pos | s_dec] via a column-embedding product
    let e0: Vec<f64> = (0..d + 1).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect();
    let e0 = tape.constant(crate::numcore::Mat::new(1, d + 1, e0));
    let shift: Vec<f64> = (0..d * (d + 1)).map(|k| if k % (d + 1) == k / (d + 1) + 1 { 1.0 } else { 0.0 }).collect();
    let shift = tape.constant(crate::numcore::Mat::new(d, d + 1, shift));
    let a = tape.matmul(s_pos, e0);
    let c = tape.matmul(s_dec, shift);
    let logits = tape.add(a, c);
    let logits = tape.scale(logits, 1.0 / tau);
    let loss = tape.cross_entropy(logits, vec![0usize; b].into());
    let g = tape.backward(loss)?;
    Ok((tape.scalar(loss), tape.param_grads(&g)))
}

#[derive(Clone, Debug, Serialize)]
pub struct RetrievalReport {
    pub train_losses: Vec<f64>,
    pub n_train_pockets: usize,
    pub n_test_pockets: usize,
    /// Per-pocket metrics averaged over held-out pockets.
    pub metrics: ScreeningMetrics,
}

/// Held-out screening: each test pocket ranks its family's pool by dot product.
pub fn evaluate_retrieval(
    params: &ParamStore,
    model: &BitConfig,
    data: &RetrievalData,
) -> Result<ScreeningMetrics, TaskError> {
    let lig: Vec<&MolecularGraph> = data.test_ligands.iter().map(|l| &l.graph).collect();
    let poc: Vec<&MolecularGraph> = data.test_pockets.iter().map(|p| &p.graph).collect();
    let le = embed(params, model, &lig, EncodeMode::DualLigand)?;
    let pe = embed(params, model, &poc, EncodeMode::DualPocket)?;
    let scores = score_matrix(&pe, &le);
    let mut per = Vec::new();
    for (p, row) in data.test_pockets.iter().zip(&scores) {
        let (idx, labels) = data.pool(p.label);
        let s: Vec<f64> = idx.iter().map(|&i| row[i]).collect();
        per.push(screening_metrics(&s, &labels)?);
    }
    let n = per.len() as f64;
    let mut mean = per[0].clone();
    mean.auc = per.iter().map(|m| m.auc).sum::<f64>() / n;
    for (k, v) in mean.ef.iter_mut() {
        *v = per.iter().map(|m| m.ef[k]).sum::<f64>() / n;
    }
    for (k, v) in mean.re.iter_mut() {
        *v = per.iter().map(|m| m.re[k]).sum::<f64>() / n;
    }
    Ok(mean)
}

/// Contrastive dual-encoder fine-tuning. Each batch holds pockets of one family, their
/// positives, and decoys drawn from ligands of the other families.
pub fn retrieval_finetune(
    params: &mut ParamStore,
    model: &BitConfig,
    data: &RetrievalData,
    cfg: &RetrievalConfig,
    seed: u64,
) -> Result<RetrievalReport, TaskError> {
    cfg.schedule.validate()?;
    if cfg.tau <= 0.0 {
        return Err(TaskError::ZeroTemperature);
    }
    if cfg.decoys == 0 {
        return Err(TaskError::Config("retrieval needs at least one decoy".into()));
    }
    add_task_heads(params, model, TaskHead::Retrieval, seed ^ 0x2E);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = data.train_ligands.iter().map(|l| l.label).collect();
    if cfg.shuffle_labels {
        labels.shuffle(&mut rng);
    }
    let families = data.spec.families;
    let by_family: Vec<Vec<usize>> =
        (0..families).map(|f| (0..labels.len()).filter(|&i| labels[i] == f).collect()).collect();
    let others: Vec<Vec<usize>> =
        (0..families).map(|f| (0..labels.len()).filter(|&i| labels[i] != f).collect()).collect();
    if by_family.iter().chain(&others).any(|v| v.is_empty()) {
        return Err(TaskError::EmptySplit("every family needs training ligands and decoys".into()));
    }
    let pockets_of: Vec<Vec<usize>> = (0..families)
        .map(|f| (0..data.train_pockets.len()).filter(|&i| data.train_pockets[i].label == f).collect())
        .collect();
    let mut epochs = Vec::new();
    for _ in 0..cfg.schedule.epochs {
        let mut batches = Vec::new();
        for members in &pockets_of {
            batches.extend(chunked_epoch(members, cfg.schedule.batch_size, &mut rng));
        }
        batches.shuffle(&mut rng);
        epochs.push(batches);
    }
    let train_losses = fit(params, &cfg.schedule, epochs, &mut rng, |p, batch, rng| {
        let fam = data.train_pockets[batch[0]].label;
        let pockets: Vec<&MolecularGraph> = batch.iter().map(|&i| &data.train_pockets[i].graph).collect();
        let positives: Vec<&MolecularGraph> = batch
            .iter()
            .map(|_| &data.train_ligands[by_family[fam][rng.random_range(0..by_family[fam].len())]].graph)
            .collect();
        let pool = &others[fam];
        let decoys: Vec<&MolecularGraph> = if pool.len() >= cfg.decoys {
            sample(rng, pool.len(), cfg.decoys).into_iter().map(|k| &data.train_ligands[pool[k]].graph).collect()
        } else {
            (0..cfg.decoys).map(|_| &data.train_ligands[pool[rng.random_range(0..pool.len())]].graph).collect()
        };
        retrieval_batch_loss(p, model, &pockets, &positives, &decoys, cfg.tau, rng)
    })?;
    let metrics = evaluate_retrieval(params, model, data)?;
    Ok(RetrievalReport {
        train_losses,
        n_train_pockets: data.train_pockets.len(),
        n_test_pockets: data.test_pockets.len(),
        metrics,
    })
}
