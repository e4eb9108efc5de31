//! Denoising pre-training: coordinate noise, atom masking, mixed-domain batches.

mod corrupt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corrupt::{
    corrupt_coords, mask_action, mask_count, mask_positions, sample_format, CorruptionConfig, FormatFlags, MaskAction,
};

use crate::model::{encode, noise_head, token_head, BitConfig, ModelError, Sample};
use crate::molgraph::{Atom, DatasetEntry, EntryKind, MolecularGraph, Payload};
use crate::numcore::{
    adamw_step, grad_check, lr_at_step, AdamW, GradCheckOptions, GradCheckReport, Grads, NumError, OptState,
    ParamStore, Tape,
};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("invalid pre-training config: {0}")]
    Config(String),
    #[error("no data: {0}")]
    Empty(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub corruption: CorruptionConfig,
    /// Weight of the token loss in `L = L_pos + λ·L_atom`.
    pub lambda: f64,
    pub molecules_per_batch: usize,
    pub pockets_per_batch: usize,
    pub complexes_per_batch: usize,
    pub steps: u64,
    pub warmup: u64,
    pub peak_lr: f64,
    pub clip: f64,
    pub optimizer: AdamW,
    pub include_molecules: bool,
    pub include_pockets: bool,
    pub include_complexes: bool,
    pub enable_token_loss: bool,
    pub enable_coord_loss: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            corruption: CorruptionConfig::default(),
            lambda: 0.2,
            molecules_per_batch: 8,
            pockets_per_batch: 8,
            complexes_per_batch: 8,
            steps: 2000,
            warmup: 120,
            peak_lr: 2e-4,
            clip: 5.0,
            optimizer: AdamW::default(),
            include_molecules: true,
            include_pockets: true,
            include_complexes: true,
            enable_token_loss: true,
            enable_coord_loss: true,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        self.corruption.validate()?;
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(PretrainError::Config("lambda must be >= 0".into()));
        }
        if self.warmup >= self.steps {
            return Err(PretrainError::Config(format!("warmup {} must be below steps {}", self.warmup, self.steps)));
        }
        if !self.enable_token_loss && !self.enable_coord_loss {
            return Err(PretrainError::Config(
                "at least one of the token and coordinate losses must be enabled".into(),
            ));
        }
        Ok(())
    }

    /// Per-kind batch counts after the include toggles.
    pub fn batch_counts(&self) -> [usize; 3] {
        [
            if self.include_molecules { self.molecules_per_batch } else { 0 },
            if self.include_pockets { self.pockets_per_batch } else { 0 },
            if self.include_complexes { self.complexes_per_batch } else { 0 },
        ]
    }
}

/// `(1/|V|) Σ‖ε̂ᵢ − εᵢ‖²` over corrupted atoms.
pub fn loss_pos(pred: &[[f64; 3]], eps: &[[f64; 3]]) -> Result<f64, PretrainError> {
    if pred.is_empty() || pred.len() != eps.len() {
        return Err(PretrainError::Empty("loss_pos needs one prediction per corrupted atom".into()));
    }
    let s: f64 = pred.iter().zip(eps).map(|(p, e)| (0..3).map(|k| (p[k] - e[k]).powi(2)).sum::<f64>()).sum();
    Ok(s / pred.len() as f64)
}

/// Mean softmax cross-entropy of logit rows against original ids.
pub fn loss_atom(logits: &[Vec<f64>], targets: &[usize]) -> Result<f64, PretrainError> {
    if logits.is_empty() || logits.len() != targets.len() {
        return Err(PretrainError::Empty("loss_atom needs one logit row per masked atom".into()));
    }
    let mut total = 0.0;
    for (row, &t) in logits.iter().zip(targets) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    Ok(total / logits.len() as f64)
}

pub fn combined_loss(l_pos: f64, l_atom: f64, lambda: f64) -> f64 {
    l_pos + lambda * l_atom
}

/// Entries split by kind.
#[derive(Clone, Debug, Default)]
pub struct PretrainData {
    pub molecules: Vec<MolecularGraph>,
    pub pockets: Vec<MolecularGraph>,
    pub complexes: Vec<(MolecularGraph, MolecularGraph)>,
}

impl PretrainData {
    pub fn from_entries(entries: &[DatasetEntry]) -> Self {
        let mut d = Self::default();
        for e in entries {
            match &e.payload {
                Payload::Molecule(g) => d.molecules.push(g.clone()),
                Payload::Pocket(g) => d.pockets.push(g.clone()),
                Payload::Complex(c) => d.complexes.push((c.ligand.clone(), c.pocket.clone())),
            }
        }
        d
    }

    fn len(&self, kind: EntryKind) -> usize {
        match kind {
            EntryKind::Molecule => self.molecules.len(),
            EntryKind::Pocket => self.pockets.len(),
            EntryKind::Complex => self.complexes.len(),
        }
    }
}

/// One corrupted, tokenized training instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub kind: EntryKind,
    pub sample: Sample,
    /// Token rows whose coordinates were perturbed.
    pub noise_rows: Vec<usize>,
    pub eps: Vec<[f64; 3]>,
    /// Token rows whose ids were replaced.
    pub mask_rows: Vec<usize>,
    pub mask_targets: Vec<usize>,
    pub dropout_seed: u64,
}

fn with_coords(g: &MolecularGraph, coords: &[[f64; 3]]) -> MolecularGraph {
    let atoms = g.atoms.iter().zip(coords).map(|(a, &c)| Atom { element: a.element, coords: Some(c) }).collect();
    MolecularGraph { atoms, bonds: g.bonds.clone(), domain: g.domain }
}

/// Samples a format, perturbs in-scope coordinates when 3D is active, and masks
/// in-scope atoms. In scope: every atom of a molecule or pocket, ligand atoms of a complex.
pub fn build_instance<R: Rng>(
    model: &BitConfig,
    cfg: &PretrainConfig,
    ligand: Option<&MolecularGraph>,
    pocket: Option<&MolecularGraph>,
    rng: &mut R,
) -> Result<Instance, PretrainError> {
    let kind = match (ligand, pocket) {
        (Some(_), Some(_)) => EntryKind::Complex,
        (Some(_), None) => EntryKind::Molecule,
        (None, Some(_)) => EntryKind::Pocket,
        (None, None) => return Err(PretrainError::Empty("instance without graphs".into())),
    };
    let mut flags = sample_format(kind, &cfg.corruption, rng)?;
    let has_coords = ligand.is_none_or(|g| g.has_coords()) && pocket.is_none_or(|g| g.has_coords());
    if !has_coords || !model.enable_3d {
        flags = FormatFlags { use_2d: true, use_3d: false };
    }
    let scope = if kind == EntryKind::Pocket { pocket } else { ligand }.expect("scope graph exists");
    let mut lig = ligand.cloned();
    let mut poc = pocket.cloned();
    let mut eps = Vec::new();
    let noisy = flags.use_3d && cfg.enable_coord_loss;
    if noisy {
        let coords = scope.coords().expect("3D active implies coordinates");
        let (moved, e) = corrupt_coords(&coords, cfg.corruption.sigma, rng);
        eps = e;
        let target = if kind == EntryKind::Pocket { &mut poc } else { &mut lig };
        *target = Some(with_coords(scope, &moved));
    }
    let mut sample = Sample::build(model, lig.as_ref(), poc.as_ref(), flags.use_2d, flags.use_3d)?;
    let scope_rows = if kind == EntryKind::Pocket { sample.pocket_rows() } else { sample.ligand_rows() };
    let noise_rows = if noisy { scope_rows.clone() } else { Vec::new() };
    let (mut mask_rows, mut mask_targets) = (Vec::new(), Vec::new());
    if cfg.enable_token_loss {
        for p in mask_positions(scope_rows.len(), cfg.corruption.mask_rate, rng) {
            let row = scope_rows[p];
            let original = sample.tokens[row];
            match mask_action(cfg.corruption.mask_split, model.atom_vocab, rng) {
                MaskAction::Mask => {
                    sample.mask_token(model, row);
                }
                MaskAction::Random(t) => sample.tokens[row] = t,
                MaskAction::Keep => {}
            }
            mask_rows.push(row);
            mask_targets.push(original);
        }
    }
    Ok(Instance { kind, sample, noise_rows, eps, mask_rows, mask_targets, dropout_seed: rng.next_u64() })
}

/// Batch-level loss components. `l_total` is accumulated independently of the parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BatchLoss {
    pub l_pos: f64,
    pub l_atom: f64,
    pub l_total: f64,
}

/// `L_pos` averages per-instance MSE over instances with corrupted coordinates;
/// `L_atom` averages per-instance mean cross-entropy over instances with masks.
pub fn batch_loss(
    params: &ParamStore,
    model: &BitConfig,
    lambda: f64,
    batch: &[Instance],
) -> Result<(BatchLoss, Grads), PretrainError> {
    let n_pos = batch.iter().filter(|i| !i.noise_rows.is_empty()).count();
    let n_atom = batch.iter().filter(|i| !i.mask_rows.is_empty()).count();
    if n_pos + n_atom == 0 {
        return Err(PretrainError::Empty("batch has no corrupted instance".into()));
    }
    let w_pos = if n_pos > 0 { 1.0 / n_pos as f64 } else { 0.0 };
    let w_atom = if n_atom > 0 { 1.0 / n_atom as f64 } else { 0.0 };
    let per: Vec<Result<(f64, f64, f64, Grads), PretrainError>> = batch
        .par_iter()
        .map(|inst| {
            let mut tape = Tape::new(params);
            let mut rng = ChaCha8Rng::seed_from_u64(inst.dropout_seed);
            let enc = encode(&mut tape, model, &inst.sample, Some(&mut rng))?;
            let (mut pos, mut atom) = (0.0, 0.0);
            let mut terms = Vec::new();
            if !inst.noise_rows.is_empty() {
                let pred = noise_head(&mut tape, &enc, &inst.sample, &inst.noise_rows)?;
                let target: Vec<f64> = inst.eps.iter().flatten().copied().collect();
                let mse = tape.mean_sq_rows(pred, target.into());
                pos = w_pos * tape.scalar(mse);
                terms.push(tape.scale(mse, w_pos));
            }
            if !inst.mask_rows.is_empty() {
                let logits = token_head(&mut tape, &enc, &inst.mask_rows)?;
                let ce = tape.cross_entropy(logits, inst.mask_targets.clone().into());
                atom = w_atom * tape.scalar(ce);
                terms.push(tape.scale(ce, lambda * w_atom));
            }
            let Some(total) = terms.into_iter().reduce(|a, b| tape.add(a, b)) else {
                return Ok((0.0, 0.0, 0.0, Grads::new()));
            };
            let value = tape.scalar(total);
            let g = tape.backward(total)?;
            Ok((pos, atom, value, tape.param_grads(&g)))
        })
        .collect();
    let mut grads = Grads::new();
    let mut loss = BatchLoss { l_pos: 0.0, l_atom: 0.0, l_total: 0.0 };
    for r in per {
        let (p, a, t, g) = r?;
        loss.l_pos += p;
        loss.l_atom += a;
        loss.l_total += t;
        grads.accumulate(&g);
    }
    Ok((loss, grads))
}

/// Parameters, optimizer moments, step counter and the master random stream.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: BitConfig,
    pub params: ParamStore,
    pub opt: OptState,
    pub step: u64,
    pub seed: u64,
    pub rng: ChaCha8Rng,
    pub config_digest: String,
}

impl TrainState {
    pub fn new(model: BitConfig, params: ParamStore, seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            model,
            params,
            opt: OptState::default(),
            step: 0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config_digest: config_digest.into(),
        }
    }
}

/// One JSONL line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub l_pos: f64,
    pub l_atom: f64,
    pub l_total: f64,
}

fn entry_seed(seed: u64, kind: EntryKind, index: usize) -> u64 {
    let tag = match kind {
        EntryKind::Molecule => 1u64,
        EntryKind::Pocket => 2,
        EntryKind::Complex => 3,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (tag << 56) ^ index as u64
}

/// Draws the configured number of molecules, pockets and complexes from the master stream.
pub fn assemble_batch(
    state: &mut TrainState,
    data: &PretrainData,
    cfg: &PretrainConfig,
) -> Result<Vec<Instance>, PretrainError> {
    let kinds = [EntryKind::Molecule, EntryKind::Pocket, EntryKind::Complex];
    let mut out = Vec::new();
    for (kind, count) in kinds.into_iter().zip(cfg.batch_counts()) {
        if count == 0 {
            continue;
        }
        let len = data.len(kind);
        if len == 0 {
            return Err(PretrainError::Empty(format!("{kind:?} stream is empty but {count} per batch requested")));
        }
        for _ in 0..count {
            let idx = state.rng.random_range(0..len);
            let sub = state.rng.next_u64();
            let seed = if cfg.corruption.fixed_per_entry { entry_seed(state.seed, kind, idx) } else { sub };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (l, p) = match kind {
                EntryKind::Molecule => (Some(&data.molecules[idx]), None),
                EntryKind::Pocket => (None, Some(&data.pockets[idx])),
                EntryKind::Complex => (Some(&data.complexes[idx].0), Some(&data.complexes[idx].1)),
            };
            out.push(build_instance(&state.model, cfg, l, p, &mut rng)?);
        }
    }
    Ok(out)
}

/// Assembles a batch, takes one clipped AdamW step, and returns the loss record.
pub fn pretrain_step(
    state: &mut TrainState,
    data: &PretrainData,
    cfg: &PretrainConfig,
) -> Result<LossRecord, PretrainError> {
    let batch = assemble_batch(state, data, cfg)?;
    let (loss, mut grads) = batch_loss(&state.params, &state.model, cfg.lambda, &batch)?;
    grads.clip_global_norm(cfg.clip);
    let lr = lr_at_step((state.step + 1).min(cfg.steps), cfg.warmup, cfg.steps, cfg.peak_lr)?;
    adamw_step(&mut state.params, &grads, &mut state.opt, &cfg.optimizer, lr)?;
    state.step += 1;
    Ok(LossRecord { step: state.step, lr, l_pos: loss.l_pos, l_atom: loss.l_atom, l_total: loss.l_total })
}

/// Runs `steps` pre-training steps, reporting each record to `on_step`.
pub fn run_pretrain(
    state: &mut TrainState,
    data: &PretrainData,
    cfg: &PretrainConfig,
    steps: u64,
    mut on_step: impl FnMut(&LossRecord) -> Result<(), PretrainError>,
) -> Result<Vec<LossRecord>, PretrainError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let rec = pretrain_step(state, data, cfg)?;
        on_step(&rec)?;
        out.push(rec);
    }
    Ok(out)
}

/// Finite-difference check of the full pre-training objective over a fixed batch.
pub fn grad_check_batch(
    params: &ParamStore,
    model: &BitConfig,
    lambda: f64,
    batch: &[Instance],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, PretrainError> {
    let loss_fn = |p: &ParamStore| {
        batch_loss(p, model, lambda, batch).map(|(l, g)| (l.l_total, g)).map_err(|e| match e {
            PretrainError::Num(n) => n,
            other => NumError::Empty(other.to_string()),
        })
    };
    Ok(grad_check(loss_fn, params, opts)?)
}
