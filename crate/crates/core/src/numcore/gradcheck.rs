use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Grads, NumError, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Number of scalar parameters probed.
    pub sample: usize,
    /// Central-difference step.
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { sample: 20, eps: 1e-5, tol: 1e-3, floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compares analytic gradients to central finite differences on randomly
/// chosen scalars. A parameter name is drawn uniformly among trainable
/// parameters, then an element uniformly within it, so small bias tables are
/// probed as often as large weight matrices.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(loss_fn: F, params: &ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport, NumError>
where
    F: Fn(&ParamStore) -> Result<(f64, Grads), NumError>,
{
    let (loss, grads) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(NumError::NonFinite("grad_check loss".into()));
    }
    let names: Vec<&String> =
        params.iter().filter(|(_, p)| p.trainable && !p.value.is_empty()).map(|(n, _)| n).collect();
    if names.is_empty() {
        return Err(NumError::Empty("no trainable parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::with_capacity(opts.sample);
    let mut work = params.clone();
    for _ in 0..opts.sample {
        let name = names[rng.random_range(0..names.len())];
        let len = params.get(name).map(|a| a.len()).unwrap_or(0);
        let index = rng.random_range(0..len);
        let orig = params.get(name).expect("sampled name exists").data()[index];

        work.get_mut(name).expect("name").data_mut()[index] = orig + opts.eps;
        let (plus, _) = loss_fn(&work)?;
        work.get_mut(name).expect("name").data_mut()[index] = orig - opts.eps;
        let (minus, _) = loss_fn(&work)?;
        work.get_mut(name).expect("name").data_mut()[index] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumError::NonFinite("grad_check perturbed loss".into()));
        }
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let analytic = grads.get(name).map(|g| g.data()[index]).unwrap_or(0.0);
        let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
        entries.push(GradCheckEntry {
            name: name.clone(),
            index,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / denom,
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { entries, max_rel_error, tol: opts.tol, passed: max_rel_error <= opts.tol })
}
