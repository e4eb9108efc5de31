use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::BitConfig;
use crate::encode::spd_buckets;
use crate::numcore::{Array, ParamStore};

const HEAD_STD: f64 = 0.02;

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, shape: Vec<usize>, std: f64) -> Array {
        let dist = Normal::new(0.0, std).expect("positive std");
        let rng = &mut self.rng;
        Array::from_fn(shape, |_| dist.sample(rng))
    }

    fn linear(
        &mut self,
        store: &mut ParamStore,
        w: String,
        b: Option<String>,
        fan_in: usize,
        fan_out: usize,
        std: f64,
    ) {
        store.insert(w, self.normal(vec![fan_in, fan_out], std));
        if let Some(b) = b {
            store.insert(b, Array::zeros(vec![fan_out]));
        }
    }
}

/// Fresh backbone, noise head and token head.
///
/// Body weights are N(0, 1/fan_in), embeddings N(0, 1), head weights N(0, 0.02²).
pub fn init_params(cfg: &BitConfig, seed: u64) -> ParamStore {
    let mut s = ParamStore::new();
    let mut g = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
    let d = cfg.hidden;
    let h = cfg.heads;
    let body = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();

    s.insert("embed.atom", g.normal(vec![cfg.token_rows(), d], 1.0));
    s.insert("embed.degree", g.normal(vec![cfg.degree_cap + 2, d], 1.0));
    s.insert("embed.domain", g.normal(vec![2, d], 1.0));

    for l in 0..cfg.layers {
        let p = format!("block{l}");
        for w in ["q", "k", "v", "o"] {
            g.linear(&mut s, format!("{p}.attn.w{w}"), Some(format!("{p}.attn.b{w}")), d, d, body(d));
        }
        for ln in ["ln1", "ln2"] {
            s.insert(format!("{p}.{ln}.gamma"), Array::filled(vec![d], 1.0));
            s.insert(format!("{p}.{ln}.beta"), Array::zeros(vec![d]));
        }
        let f = d * cfg.ffn_mult;
        for e in ["mol", "pocket"] {
            g.linear(&mut s, format!("{p}.ffn.{e}.w1"), Some(format!("{p}.ffn.{e}.b1")), d, f, body(d));
            g.linear(&mut s, format!("{p}.ffn.{e}.w2"), Some(format!("{p}.ffn.{e}.b2")), f, d, body(f));
        }
    }

    for e in ["mol", "pocket"] {
        s.insert(format!("bias2d.{e}.spd"), g.normal(vec![spd_buckets(cfg.d_max), h], HEAD_STD));
        s.insert(format!("bias2d.{e}.edge_emb"), g.normal(vec![4, cfg.edge_dim], 1.0));
        s.insert(format!("bias2d.{e}.edge_w"), g.normal(vec![cfg.edge_dim, cfg.d_max * h], body(cfg.edge_dim)));
    }
    s.insert("bias2d.inter", g.normal(vec![1, h], HEAD_STD));
    s.insert("bias2d.virtual", g.normal(vec![1, h], HEAD_STD));

    let k = cfg.kernels;
    let spacing = if k > 1 { 12.0 / (k - 1) as f64 } else { 12.0 };
    for e in ["intra", "inter"] {
        let means = (0..k).map(|i| if k > 1 { 12.0 * i as f64 / (k - 1) as f64 } else { 6.0 }).collect();
        s.insert(format!("bias3d.{e}.means"), Array::new(vec![k], means).expect("finite means"));
        s.insert(format!("bias3d.{e}.log_widths"), Array::filled(vec![k], spacing.ln()));
        s.insert(format!("bias3d.{e}.proj"), g.normal(vec![k, h], body(k)));
    }

    g.linear(&mut s, "head.noise.w1".into(), None, d, d, body(d));
    g.linear(&mut s, "head.noise.w2".into(), None, d, 1, HEAD_STD);
    g.linear(&mut s, "head.token.w".into(), Some("head.token.b".into()), d, cfg.atom_vocab, HEAD_STD);
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskHead {
    Affinity,
    Retrieval,
    Classify,
}

/// Inserts the parameters of a task head unless they already exist.
pub fn add_task_heads(store: &mut ParamStore, cfg: &BitConfig, head: TaskHead, seed: u64) {
    let mut g = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
    let d = cfg.hidden;
    let body = 1.0 / (d as f64).sqrt();
    match head {
        TaskHead::Affinity if !store.contains("head.affinity.w1") => {
            g.linear(store, "head.affinity.w1".into(), Some("head.affinity.b1".into()), d, d, body);
            g.linear(store, "head.affinity.w2".into(), Some("head.affinity.b2".into()), d, 1, body);
        }
        TaskHead::Retrieval if !store.contains("head.retrieval.pocket") => {
            g.linear(store, "head.retrieval.pocket".into(), None, d, cfg.retrieval_dim, body);
            g.linear(store, "head.retrieval.ligand".into(), None, d, cfg.retrieval_dim, body);
        }
        TaskHead::Classify if !store.contains("head.classify.w") => {
            g.linear(store, "head.classify.w".into(), Some("head.classify.b".into()), d, 1, HEAD_STD);
        }
        _ => {}
    }
}
