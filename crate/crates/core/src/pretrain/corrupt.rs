use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PretrainError;
use crate::molgraph::EntryKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    /// Coordinate noise scale in Å.
    pub sigma: f64,
    pub mask_rate: f64,
    /// Format probabilities for single-domain entries: 2D only, 3D only, both.
    pub p_2d: f64,
    pub p_3d: f64,
    pub p_both: f64,
    /// 80/10/10 replacement of masked positions instead of pure `[MASK]`.
    pub mask_split: bool,
    /// Draw each entry's corruption from a seed tied to the entry, not the step,
    /// so an entry is corrupted identically every time it is visited.
    pub fixed_per_entry: bool,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            sigma: 0.2,
            mask_rate: 0.15,
            p_2d: 1.0 / 3.0,
            p_3d: 1.0 / 3.0,
            p_both: 1.0 / 3.0,
            mask_split: false,
            fixed_per_entry: false,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        let bad = |m: String| Err(PretrainError::Config(m));
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate must be in (0, 1), got {}", self.mask_rate));
        }
        let ps = [self.p_2d, self.p_3d, self.p_both];
        if ps.iter().any(|p| p.is_nan() || *p < 0.0) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("format probabilities {ps:?} must be non-negative and sum to 1"));
        }
        Ok(())
    }
}

/// Active structure channels for one instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FormatFlags {
    pub use_2d: bool,
    pub use_3d: bool,
}

/// Molecules and pockets draw one of {2D, 3D, 2D+3D}; complexes always use 3D and add
/// 2D with probability `p_both`.
pub fn sample_format<R: Rng>(
    kind: EntryKind,
    cfg: &CorruptionConfig,
    rng: &mut R,
) -> Result<FormatFlags, PretrainError> {
    cfg.validate()?;
    let u: f64 = rng.random();
    Ok(match kind {
        EntryKind::Complex => FormatFlags { use_2d: u < cfg.p_both, use_3d: true },
        EntryKind::Molecule | EntryKind::Pocket => {
            if u < cfg.p_2d {
                FormatFlags { use_2d: true, use_3d: false }
            } else if u < cfg.p_2d + cfg.p_3d {
                FormatFlags { use_2d: false, use_3d: true }
            } else {
                FormatFlags { use_2d: true, use_3d: true }
            }
        }
    })
}

/// Adds `sigma·ε` with ε ~ N(0, I) to every coordinate; returns corrupted
/// coordinates and the drawn ε.
pub fn corrupt_coords<R: Rng>(coords: &[[f64; 3]], sigma: f64, rng: &mut R) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let mut out = Vec::with_capacity(coords.len());
    let mut eps = Vec::with_capacity(coords.len());
    for c in coords {
        let e: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        out.push([c[0] + sigma * e[0], c[1] + sigma * e[1], c[2] + sigma * e[2]]);
        eps.push(e);
    }
    (out, eps)
}

/// Number of masked atoms: `max(1, round(rate·n))`.
pub fn mask_count(n: usize, rate: f64) -> usize {
    ((rate * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Positions (indices into `0..n`) chosen uniformly without replacement, ascending.
pub fn mask_positions<R: Rng>(n: usize, rate: f64, rng: &mut R) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut idx = sample(rng, n, mask_count(n, rate)).into_vec();
    idx.sort_unstable();
    idx
}

/// What a chosen position is replaced with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    Random(usize),
    Keep,
}

/// `[MASK]` always, or the 80/10/10 split when enabled.
pub fn mask_action<R: Rng>(split: bool, vocab: usize, rng: &mut R) -> MaskAction {
    if !split {
        return MaskAction::Mask;
    }
    let u: f64 = rng.random();
    if u < 0.8 {
        MaskAction::Mask
    } else if u < 0.9 {
        MaskAction::Random(rng.random_range(0..vocab))
    } else {
        MaskAction::Keep
    }
}
