use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BitConfig, ModelError, Sample};
use crate::encode::{unreachable_bucket, PairDomainClass};
use crate::molgraph::Domain;
use crate::numcore::{SparseRows, Tape, Var};

/// Additive bias at pairs that involve padding.
pub const BIAS_SENTINEL: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodeMode {
    Fusion,
    DualPocket,
    DualLigand,
    Unimodal,
}

/// Final token matrix and the head-averaged attention of the last block.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub h: Var,
    pub attn_mean: Var,
}

fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
    let Some(rng) = rng.as_deref_mut() else { return x };
    if p <= 0.0 {
        return x;
    }
    let (r, c) = tape.shape(x);
    let keep = 1.0 / (1.0 - p);
    let mask: Rc<[f64]> = (0..r * c).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
    tape.mul_const(x, mask)
}

fn linear(tape: &mut Tape, x: Var, w: &str, b: Option<&str>) -> Result<Var, ModelError> {
    let w = tape.param(w)?;
    let y = tape.matmul(x, w);
    Ok(match b {
        Some(b) => {
            let b = tape.param(b)?;
            tape.add_row(y, b)
        }
        None => y,
    })
}

/// Sum of token, degree and domain embeddings (n×hidden, padding included).
pub fn embed(tape: &mut Tape, cfg: &BitConfig, s: &Sample) -> Result<Var, ModelError> {
    let ids = s.padded_tokens(cfg);
    if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.token_rows()) {
        return Err(ModelError::IdOutOfVocab(bad, cfg.token_rows()));
    }
    let mut degs = s.enc.degrees.clone();
    degs.resize(s.n(), 0);
    if let Some(&bad) = degs.iter().find(|&&d| d > cfg.virtual_degree()) {
        return Err(ModelError::IdOutOfVocab(bad, cfg.degree_cap + 2));
    }
    let mut doms: Vec<usize> = s.domains.iter().map(|d| d.index()).collect();
    doms.resize(s.n(), Domain::Molecule.index());
    let atom = tape.param("embed.atom")?;
    let degree = tape.param("embed.degree")?;
    let domain = tape.param("embed.domain")?;
    let a = tape.select_rows(atom, &ids);
    let d = tape.select_rows(degree, &degs);
    let m = tape.select_rows(domain, &doms);
    let ad = tape.add(a, d);
    Ok(tape.add(ad, m))
}

struct Lookup {
    rows: SparseRows,
    used: bool,
}

impl Lookup {
    fn new() -> Self {
        Self { rows: SparseRows::new(), used: false }
    }

    fn push(&mut self, entries: &[(usize, f64)]) {
        self.used |= !entries.is_empty();
        self.rows.push_row(entries);
    }

    fn empty(&mut self) {
        self.rows.push_empty();
    }

    fn gather(self, tape: &mut Tape, table: Var, parts: &mut Vec<Var>) {
        if self.used {
            parts.push(tape.gather(table, Rc::new(self.rows)));
        }
    }
}

/// Additive attention bias, (n·n)×heads with row `i·n + j`, shared by every block.
///
/// Returns `None` when no channel is active and the sample has no padding.
pub fn attention_bias(tape: &mut Tape, cfg: &BitConfig, s: &Sample) -> Result<Option<Var>, ModelError> {
    let (r, n) = (s.n_real(), s.n());
    let enc = &s.enc;
    let mut parts = Vec::new();
    let class = |i: usize, j: usize| (i < r && j < r).then(|| enc.pair_class[i * r + j]);

    if cfg.enable_2d && s.use_2d {
        let dm = cfg.d_max;
        let unreachable = unreachable_bucket(dm);
        let (mut spd_mol, mut spd_pocket, mut inter, mut virt) =
            (Lookup::new(), Lookup::new(), Lookup::new(), Lookup::new());
        let (mut edge_mol, mut edge_pocket) = (Lookup::new(), Lookup::new());
        for i in 0..n {
            for j in 0..n {
                let c = class(i, j);
                let pocket_expert = cfg.enable_mose && c == Some(PairDomainClass::IntraProt);
                let spd = |p: usize| vec![(enc.spd[p], 1.0)];
                match c {
                    Some(PairDomainClass::IntraMol) | Some(PairDomainClass::IntraProt) => {
                        let p = i * r + j;
                        let (to, other) = if pocket_expert {
                            (&mut spd_pocket, &mut spd_mol)
                        } else {
                            (&mut spd_mol, &mut spd_pocket)
                        };
                        to.push(&spd(p));
                        other.empty();
                        let path = &enc.edge_paths[p];
                        let w = 1.0 / path.len().max(1) as f64;
                        let entries: Vec<(usize, f64)> =
                            path.iter().enumerate().map(|(k, &o)| (o * dm + k, w)).collect();
                        let (to, other) = if pocket_expert {
                            (&mut edge_pocket, &mut edge_mol)
                        } else {
                            (&mut edge_mol, &mut edge_pocket)
                        };
                        to.push(&entries);
                        other.empty();
                        inter.empty();
                        virt.empty();
                    }
                    Some(PairDomainClass::Inter) => {
                        if cfg.enable_mose {
                            spd_mol.empty();
                            inter.push(&[(0, 1.0)]);
                        } else {
                            spd_mol.push(&[(unreachable, 1.0)]);
                            inter.empty();
                        }
                        spd_pocket.empty();
                        edge_mol.empty();
                        edge_pocket.empty();
                        virt.empty();
                    }
                    Some(PairDomainClass::Virtual) => {
                        virt.push(&[(0, 1.0)]);
                        for l in [&mut spd_mol, &mut spd_pocket, &mut inter, &mut edge_mol, &mut edge_pocket] {
                            l.empty();
                        }
                    }
                    None => {
                        for l in [&mut spd_mol, &mut spd_pocket, &mut inter, &mut virt, &mut edge_mol, &mut edge_pocket]
                        {
                            l.empty();
                        }
                    }
                }
            }
        }
        for (lookup, name) in [(spd_mol, "bias2d.mol.spd"), (spd_pocket, "bias2d.pocket.spd")] {
            if lookup.used {
                let t = tape.param(name)?;
                lookup.gather(tape, t, &mut parts);
            }
        }
        for (lookup, expert) in [(edge_mol, "mol"), (edge_pocket, "pocket")] {
            if lookup.used {
                let emb = tape.param(&format!("bias2d.{expert}.edge_emb"))?;
                let w = tape.param(&format!("bias2d.{expert}.edge_w"))?;
                let m = tape.matmul(emb, w);
                let table = tape.reshape(m, 4 * dm, cfg.heads);
                lookup.gather(tape, table, &mut parts);
            }
        }
        for (lookup, name) in [(inter, "bias2d.inter"), (virt, "bias2d.virtual")] {
            if lookup.used {
                let t = tape.param(name)?;
                lookup.gather(tape, t, &mut parts);
            }
        }
    }

    if cfg.enable_3d && s.use_3d {
        let dist = s.enc.distances.as_ref().ok_or(ModelError::MissingCoords)?;
        let mut lists: [(Vec<f64>, Lookup); 2] = [(Vec::new(), Lookup::new()), (Vec::new(), Lookup::new())];
        for i in 0..n {
            for j in 0..n {
                let expert = match class(i, j) {
                    Some(PairDomainClass::IntraMol) | Some(PairDomainClass::IntraProt) => Some(0),
                    Some(PairDomainClass::Inter) => Some(if cfg.enable_mose { 1 } else { 0 }),
                    _ => None,
                };
                for (e, (d, lookup)) in lists.iter_mut().enumerate() {
                    if expert == Some(e) {
                        lookup.push(&[(d.len(), 1.0)]);
                        d.push(dist[i * r + j]);
                    } else {
                        lookup.empty();
                    }
                }
            }
        }
        for ((d, lookup), name) in lists.into_iter().zip(["intra", "inter"]) {
            if !lookup.used {
                continue;
            }
            let means = tape.param(&format!("bias3d.{name}.means"))?;
            let widths = tape.param(&format!("bias3d.{name}.log_widths"))?;
            let proj = tape.param(&format!("bias3d.{name}.proj"))?;
            let phi = tape.gaussian_basis(d.into(), means, widths);
            let b = tape.matmul(phi, proj);
            lookup.gather(tape, b, &mut parts);
        }
    }

    let mut bias = parts.into_iter().reduce(|a, b| tape.add(a, b));
    if s.n_pad > 0 {
        let mut c = vec![0.0; n * n * cfg.heads];
        for i in 0..n {
            for j in 0..n {
                if i >= r || j >= r {
                    c[(i * n + j) * cfg.heads..(i * n + j + 1) * cfg.heads].fill(BIAS_SENTINEL);
                }
            }
        }
        bias = Some(match bias {
            Some(b) => tape.add_const(b, &c),
            None => tape.constant(crate::numcore::Mat::new(n * n, cfg.heads, c)),
        });
    }
    Ok(bias)
}

/// Domain-routed feed-forward: molecule-tagged rows (and padding) through the molecule
/// expert, pocket-tagged rows through the pocket expert. With routing disabled every row
/// uses the molecule expert.
pub fn mode_ffn(tape: &mut Tape, cfg: &BitConfig, h: Var, s: &Sample, layer: usize) -> Result<Var, ModelError> {
    let n = s.n();
    let is_pocket = |i: usize| cfg.enable_mode && i < s.n_real() && s.domains[i] == Domain::Pocket;
    let mol_rows: Vec<usize> = (0..n).filter(|&i| !is_pocket(i)).collect();
    let pocket_rows: Vec<usize> = (0..n).filter(|&i| is_pocket(i)).collect();
    let expert = |tape: &mut Tape, x: Var, e: &str| -> Result<Var, ModelError> {
        let p = format!("block{layer}.ffn.{e}");
        let a = linear(tape, x, &format!("{p}.w1"), Some(&format!("{p}.b1")))?;
        let a = tape.gelu(a);
        linear(tape, a, &format!("{p}.w2"), Some(&format!("{p}.b2")))
    };
    if pocket_rows.is_empty() {
        return expert(tape, h, "mol");
    }
    if mol_rows.is_empty() {
        return expert(tape, h, "pocket");
    }
    let xm = tape.select_rows(h, &mol_rows);
    let xp = tape.select_rows(h, &pocket_rows);
    let fm = expert(tape, xm, "mol")?;
    let fp = expert(tape, xp, "pocket")?;
    let cat = tape.concat_rows(fm, fp);
    let mut back = vec![0; n];
    for (k, &i) in mol_rows.iter().chain(&pocket_rows).enumerate() {
        back[i] = k;
    }
    Ok(tape.select_rows(cat, &back))
}

/// One post-norm block. Returns the block output and its attention probabilities.
pub fn block_forward(
    tape: &mut Tape,
    cfg: &BitConfig,
    h: Var,
    bias: Option<Var>,
    s: &Sample,
    layer: usize,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<(Var, Var), ModelError> {
    let p = format!("block{layer}");
    let q = linear(tape, h, &format!("{p}.attn.wq"), Some(&format!("{p}.attn.bq")))?;
    let k = linear(tape, h, &format!("{p}.attn.wk"), Some(&format!("{p}.attn.bk")))?;
    let v = linear(tape, h, &format!("{p}.attn.wv"), Some(&format!("{p}.attn.bv")))?;
    let probs = tape.attn_probs(q, k, bias, cfg.heads, s.key_mask());
    let dropped = dropout(tape, probs, cfg.dropout_attn, rng);
    let a = tape.attn_apply(dropped, v, cfg.heads);
    let o = linear(tape, a, &format!("{p}.attn.wo"), Some(&format!("{p}.attn.bo")))?;
    let o = dropout(tape, o, cfg.dropout_hidden, rng);
    let res = tape.add(o, h);
    let (g1, b1) = (tape.param(&format!("{p}.ln1.gamma"))?, tape.param(&format!("{p}.ln1.beta"))?);
    let h1 = tape.layer_norm(res, g1, b1);
    let f = mode_ffn(tape, cfg, h1, s, layer)?;
    let f = dropout(tape, f, cfg.dropout_hidden, rng);
    let res = tape.add(f, h1);
    let (g2, b2) = (tape.param(&format!("{p}.ln2.gamma"))?, tape.param(&format!("{p}.ln2.beta"))?);
    Ok((tape.layer_norm(res, g2, b2), probs))
}

/// Full encoder pass. `rng` enables dropout when the configured rates are non-zero.
pub fn encode(
    tape: &mut Tape,
    cfg: &BitConfig,
    s: &Sample,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Encoded, ModelError> {
    let mut rng = rng;
    let h0 = embed(tape, cfg, s)?;
    let mut h = dropout(tape, h0, cfg.dropout_embed, &mut rng);
    let bias = attention_bias(tape, cfg, s)?;
    let mut probs = None;
    for l in 0..cfg.layers {
        let (next, p) = block_forward(tape, cfg, h, bias, s, l, &mut rng)?;
        h = next;
        probs = Some(p);
    }
    let probs = probs.ok_or_else(|| ModelError::Config("model has no layers".into()))?;
    let attn_mean = tape.head_mean(probs, cfg.heads);
    Ok(Encoded { h, attn_mean })
}

/// Per-atom noise prediction at token positions `rows`: Σ_j a_ij Δ_ij (H_j W1 W2).
pub fn noise_head(tape: &mut Tape, enc: &Encoded, s: &Sample, rows: &[usize]) -> Result<Var, ModelError> {
    let dirs = s.padded_dirs().ok_or(ModelError::MissingCoords)?;
    let w1 = tape.param("head.noise.w1")?;
    let w2 = tape.param("head.noise.w2")?;
    let z = tape.matmul(enc.h, w1);
    let z = tape.matmul(z, w2);
    Ok(tape.equivariant(enc.attn_mean, z, dirs, rows.into()))
}

/// Logits over the atom vocabulary at token positions `rows`.
pub fn token_head(tape: &mut Tape, enc: &Encoded, rows: &[usize]) -> Result<Var, ModelError> {
    let x = tape.select_rows(enc.h, rows);
    linear(tape, x, "head.token.w", Some("head.token.b"))
}

/// Two-layer regression head with GELU between, on a 1×hidden input.
pub fn affinity_head(tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
    let a = linear(tape, x, "head.affinity.w1", Some("head.affinity.b1"))?;
    let a = tape.gelu(a);
    linear(tape, a, "head.affinity.w2", Some("head.affinity.b2"))
}

/// Logistic-regression logit on a 1×hidden input.
pub fn classify_head(tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
    linear(tape, x, "head.classify.w", Some("head.classify.b"))
}

/// Linear map into the shared retrieval space followed by unit normalization.
pub fn retrieval_projection(tape: &mut Tape, x: Var, side: Domain) -> Result<Var, ModelError> {
    let name = match side {
        Domain::Molecule => "head.retrieval.ligand",
        Domain::Pocket => "head.retrieval.pocket",
    };
    let y = linear(tape, x, name, None)?;
    Ok(tape.normalize_rows(y))
}

/// Pooled representation for a mode, with the encoder output.
pub fn forward_encode(
    tape: &mut Tape,
    cfg: &BitConfig,
    s: &Sample,
    mode: EncodeMode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Encoded), ModelError> {
    let layout = s.enc.layout;
    let mismatch = |why| Err(ModelError::ModeMismatch { mode, why });
    match mode {
        EncodeMode::Fusion if !(layout.has_mol() && layout.has_pocket()) => return mismatch("fusion needs a complex"),
        EncodeMode::DualPocket if layout.has_mol() || !layout.has_pocket() => {
            return mismatch("dual_pocket needs a pocket-only sample")
        }
        EncodeMode::DualLigand if layout.has_pocket() || !layout.has_mol() => {
            return mismatch("dual_ligand needs a molecule-only sample")
        }
        EncodeMode::DualLigand if s.use_3d => return mismatch("dual_ligand encodes 2D graphs only"),
        EncodeMode::Unimodal if layout.has_pocket() || !layout.has_mol() => {
            return mismatch("unimodal needs a molecule-only sample")
        }
        _ => {}
    }
    let enc = encode(tape, cfg, s, rng)?;
    let pooled = match mode {
        EncodeMode::Fusion | EncodeMode::Unimodal => tape.select_rows(enc.h, &[0]),
        EncodeMode::DualLigand => {
            let x = tape.select_rows(enc.h, &[0]);
            retrieval_projection(tape, x, Domain::Molecule)?
        }
        EncodeMode::DualPocket => {
            let x = tape.select_rows(enc.h, &[0]);
            retrieval_projection(tape, x, Domain::Pocket)?
        }
    };
    Ok((pooled, enc))
}
