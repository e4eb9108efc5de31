mod common;

use bit_core::model::{
    add_task_heads, attention_bias, block_forward, embed, encode, forward_encode, init_params, mode_ffn, noise_head,
    token_head, BitConfig, EncodeMode, ModelError, Preset, Sample, TaskHead, TokenBatch,
};
use bit_core::molgraph::{synth_generate, Atom, Bond, BondOrder, Domain, MolecularGraph, Payload, SynthSpec};
use bit_core::numcore::{Mat, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{apply, max_abs_diff, moved, rotation};

fn tiny() -> BitConfig {
    BitConfig::preset(Preset::Tiny)
}

fn complexes(n: usize, seed: u64) -> Vec<(MolecularGraph, MolecularGraph)> {
    let spec = SynthSpec {
        molecules: 0,
        pockets: 0,
        complexes: n,
        ligand_atoms: [4, 9],
        pocket_atoms: [20, 28],
        ..Default::default()
    };
    synth_generate(seed, &spec)
        .unwrap()
        .into_iter()
        .map(|e| match e.payload {
            Payload::Complex(c) => (c.ligand, c.pocket),
            _ => unreachable!(),
        })
        .collect()
}

/// Encoder output and ligand noise predictions.
fn run(cfg: &BitConfig, params: &ParamStore, s: &Sample) -> (Mat, Option<Mat>) {
    let mut tape = Tape::new(params);
    let enc = encode(&mut tape, cfg, s, None).unwrap();
    let eps = s.dirs.as_ref().map(|_| {
        let v = noise_head(&mut tape, &enc, s, &s.atom_rows()).unwrap();
        tape.value_mat(v)
    });
    (tape.value_mat(enc.h), eps)
}

#[test]
fn rigid_motion_equivariance() {
    let cfg = tiny();
    let params = init_params(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (lig, poc) in complexes(4, 3) {
        let s = Sample::complex(&cfg, &lig, &poc, true, true).unwrap();
        let (h, eps) = run(&cfg, &params, &s);
        let eps = eps.unwrap();
        for _ in 0..3 {
            let r = rotation(&mut rng);
            let t = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let s2 = Sample::complex(&cfg, &moved(&lig, &r, t), &moved(&poc, &r, t), true, true).unwrap();
            let (h2, eps2) = run(&cfg, &params, &s2);
            assert!(max_abs_diff(&h.data, &h2.data) < 1e-9);
            let eps2 = eps2.unwrap();
            let scale = eps.data.iter().map(|v| v.abs()).fold(1e-12, f64::max);
            for row in 0..eps.rows {
                let rotated = apply(&r, [0.0; 3], [eps.data[row * 3], eps.data[row * 3 + 1], eps.data[row * 3 + 2]]);
                let err = max_abs_diff(&rotated, &eps2.data[row * 3..row * 3 + 3]);
                assert!(err / scale < 1e-6, "row {row}: {err}");
            }
        }
        let ident = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let s3 = Sample::complex(
            &cfg,
            &moved(&lig, &ident, [3.0, -7.0, 2.5]),
            &moved(&poc, &ident, [3.0, -7.0, 2.5]),
            true,
            true,
        )
        .unwrap();
        let (_, eps3) = run(&cfg, &params, &s3);
        assert!(max_abs_diff(&eps.data, &eps3.unwrap().data) < 1e-9);
    }
}

#[test]
fn two_atoms_on_axis_give_collinear_noise() {
    let cfg = tiny();
    let params = init_params(&cfg, 4);
    let g = MolecularGraph::new(
        vec![Atom { element: 6, coords: Some([0.0, 0.0, 0.0]) }, Atom { element: 8, coords: Some([1.4, 0.0, 0.0]) }],
        vec![Bond { i: 0, j: 1, order: BondOrder::Double }],
        Domain::Molecule,
    )
    .unwrap();
    let s = Sample::molecule(&cfg, &g, true, true).unwrap();
    let (_, eps) = run(&cfg, &params, &s);
    let eps = eps.unwrap();
    assert_eq!(eps.rows, 2);
    for r in 0..2 {
        assert_eq!(eps.data[r * 3 + 1], 0.0);
        assert_eq!(eps.data[r * 3 + 2], 0.0);
        assert!(eps.data[r * 3] != 0.0);
    }
}

#[test]
fn coincident_atoms_never_produce_nan() {
    let cfg = tiny();
    let params = init_params(&cfg, 4);
    let g = MolecularGraph::new(
        vec![Atom { element: 6, coords: Some([1.0, 1.0, 1.0]) }, Atom { element: 6, coords: Some([1.0, 1.0, 1.0]) }],
        vec![],
        Domain::Molecule,
    )
    .unwrap();
    let s = Sample::molecule(&cfg, &g, true, true).unwrap();
    let (h, eps) = run(&cfg, &params, &s);
    assert!(h.data.iter().all(|v| v.is_finite()));
    assert!(eps.unwrap().data.iter().all(|&v| v == 0.0));
}

#[test]
fn mode_isolation_at_fixed_input() {
    let cfg = tiny();
    let (lig, poc) = complexes(1, 9).remove(0);
    let s = Sample::complex(&cfg, &lig, &poc, true, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let input = Mat::new(s.n(), cfg.hidden, (0..s.n() * cfg.hidden).map(|_| rng.random_range(-1.0..1.0)).collect());
    let ffn = |params: &ParamStore| {
        let mut tape = Tape::new(params);
        let h = tape.constant(input.clone());
        let f = mode_ffn(&mut tape, &cfg, h, &s, 0).unwrap();
        tape.value_mat(f)
    };
    let params = init_params(&cfg, 5);
    let base = ffn(&params);
    let mut perturbed = params.clone();
    for (name, p) in perturbed.iter_mut() {
        if name.starts_with("block0.ffn.pocket.") {
            p.value.data_mut().iter_mut().for_each(|v| *v += 0.37);
        }
    }
    let after = ffn(&perturbed);
    let mut pocket_changed = false;
    for i in 0..s.n() {
        let row = |m: &Mat| m.row(i).to_vec();
        if s.domains[i] == Domain::Molecule {
            assert_eq!(row(&base), row(&after), "molecule row {i} changed");
        } else {
            pocket_changed |= row(&base) != row(&after);
        }
    }
    assert!(pocket_changed);
}

fn perturb(params: &ParamStore, prefix: &str) -> ParamStore {
    let mut p = params.clone();
    for (name, v) in p.iter_mut() {
        if name.starts_with(prefix) {
            v.value.data_mut().iter_mut().enumerate().for_each(|(k, x)| *x += 0.5 + 0.01 * k as f64);
        }
    }
    p
}

#[test]
fn mose_isolation() {
    let cfg = tiny();
    let params = init_params(&cfg, 6);
    let (lig, poc) = complexes(1, 10).remove(0);
    let mol = Sample::molecule(&cfg, &lig, true, true).unwrap();
    let pocket = Sample::pocket(&cfg, &poc, true, true).unwrap();
    let inter3d = perturb(&params, "bias3d.inter");
    assert_eq!(run(&cfg, &params, &mol).0.data, run(&cfg, &inter3d, &mol).0.data);
    assert_eq!(run(&cfg, &params, &pocket).0.data, run(&cfg, &inter3d, &pocket).0.data);
    let pocket2d = perturb(&params, "bias2d.pocket");
    assert_eq!(run(&cfg, &params, &mol).0.data, run(&cfg, &pocket2d, &mol).0.data);
    let mol2d = perturb(&params, "bias2d.mol");
    assert_eq!(run(&cfg, &params, &pocket).0.data, run(&cfg, &mol2d, &pocket).0.data);
    assert_ne!(run(&cfg, &params, &mol).0.data, run(&cfg, &mol2d, &mol).0.data);

    // zeroing the inter projection clears the 3D bias at inter pairs only
    let cfg3 = BitConfig { enable_2d: false, ..cfg.clone() };
    let s = Sample::complex(&cfg3, &lig, &poc, false, true).unwrap();
    let bias = |p: &ParamStore| {
        let mut tape = Tape::new(p);
        let b = attention_bias(&mut tape, &cfg3, &s).unwrap().unwrap();
        tape.value_mat(b)
    };
    let mut zeroed = params.clone();
    zeroed.get_mut("bias3d.inter.proj").unwrap().data_mut().fill(0.0);
    let (b0, b1) = (bias(&params), bias(&zeroed));
    let n = s.n();
    let mut inter = 0;
    for i in 0..n {
        for j in 0..n {
            let c = s.enc.pair_class[i * n + j];
            let (r0, r1) = (b0.row(i * n + j), b1.row(i * n + j));
            match c {
                bit_core::encode::PairDomainClass::Inter => {
                    inter += 1;
                    assert!(r1.iter().all(|&v| v == 0.0));
                    assert!(r0.iter().any(|&v| v != 0.0));
                }
                _ => assert_eq!(r0, r1),
            }
        }
    }
    assert_eq!(inter, 2 * lig.n_atoms() * poc.n_atoms());
}

#[test]
fn padding_never_changes_real_tokens() {
    let cfg = tiny();
    let params = init_params(&cfg, 7);
    let pairs = complexes(2, 11);
    let small = Sample::molecule(&cfg, &pairs[0].0, true, true).unwrap();
    let big = Sample::complex(&cfg, &pairs[1].0, &pairs[1].1, true, true).unwrap();
    let (h_alone, eps_alone) = run(&cfg, &params, &small);
    let batch = TokenBatch::new(vec![small.clone(), big]);
    let padded = &batch.samples[0];
    assert!(padded.n_pad > 0);
    assert_eq!(batch.width(), batch.samples[1].n());
    let (h_pad, eps_pad) = run(&cfg, &params, padded);
    let r = small.n_real();
    assert!(max_abs_diff(&h_alone.data, &h_pad.data[..r * cfg.hidden]) < 1e-12);
    assert!(max_abs_diff(&eps_alone.unwrap().data, &eps_pad.unwrap().data) < 1e-12);
    let mut tape = Tape::new(&params);
    let b = attention_bias(&mut tape, &cfg, padded).unwrap().unwrap();
    let n = padded.n();
    let bm = tape.value_mat(b);
    assert!(bm.row(n - 1).iter().all(|&v| v <= -1e8));
    assert!(bm.row(0).iter().all(|v| v.is_finite() && v.abs() < 1e3));
}

#[test]
fn channel_flags_cut_dependencies() {
    let cfg = tiny();
    let params = init_params(&cfg, 8);
    let (lig, _) = complexes(1, 12).remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = rotation(&mut rng);
    let mut warped = moved(&lig, &r, [0.0; 3]);
    for a in warped.atoms.iter_mut() {
        let c = a.coords.unwrap();
        a.coords = Some([c[0] * 1.3, c[1], c[2] - 0.4]);
    }
    let no3d = |g: &MolecularGraph| run(&cfg, &params, &Sample::molecule(&cfg, g, true, false).unwrap()).0;
    assert_eq!(no3d(&lig).data, no3d(&warped).data);
    let with3d = |g: &MolecularGraph| run(&cfg, &params, &Sample::molecule(&cfg, g, true, true).unwrap()).0;
    assert_ne!(with3d(&lig).data, with3d(&warped).data);

    // same degrees, different bonds
    let mut rebonded = lig.clone();
    for b in rebonded.bonds.iter_mut() {
        b.order = BondOrder::Triple;
    }
    let no2d = |g: &MolecularGraph| run(&cfg, &params, &Sample::molecule(&cfg, g, false, true).unwrap()).0;
    assert_eq!(no2d(&lig).data, no2d(&rebonded).data);
    let with2d = |g: &MolecularGraph| run(&cfg, &params, &Sample::molecule(&cfg, g, true, true).unwrap()).0;
    assert_ne!(with2d(&lig).data, with2d(&rebonded).data);
    let cfg_off = BitConfig { enable_3d: false, ..cfg.clone() };
    let off = |g: &MolecularGraph| run(&cfg_off, &params, &Sample::molecule(&cfg_off, g, true, true).unwrap()).0;
    assert_eq!(off(&lig).data, off(&warped).data);
}

#[test]
fn block_output_is_layer_normalized_and_symmetric() {
    let cfg = tiny();
    let params = init_params(&cfg, 9);
    let (lig, poc) = complexes(1, 13).remove(0);
    let s = Sample::complex(&cfg, &lig, &poc, true, true).unwrap();
    let mut tape = Tape::new(&params);
    let h0 = embed(&mut tape, &cfg, &s).unwrap();
    let bias = attention_bias(&mut tape, &cfg, &s).unwrap();
    let (h1, _) = block_forward(&mut tape, &cfg, h0, bias, &s, 0, &mut None).unwrap();
    let m = tape.value_mat(h1);
    for r in 0..m.rows {
        let row = m.row(r);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6, "row {r}: {mean} {var}");
    }

    // identical rows, no bias, one domain → identical outputs
    let g = MolecularGraph::new(vec![Atom { element: 6, coords: None }; 5], vec![], Domain::Molecule).unwrap();
    let s = Sample::molecule(&cfg, &g, false, false).unwrap();
    let mut tape = Tape::new(&params);
    let x = tape.constant(Mat::new(
        s.n(),
        cfg.hidden,
        (0..s.n() * cfg.hidden).map(|k| ((k % cfg.hidden) as f64).sin()).collect(),
    ));
    let (y, _) = block_forward(&mut tape, &cfg, x, None, &s, 1, &mut None).unwrap();
    let y = tape.value_mat(y);
    for r in 1..y.rows {
        assert_eq!(y.row(r), y.row(0));
    }
}

#[test]
fn embedding_contracts() {
    let cfg = tiny();
    let mut params = init_params(&cfg, 10);
    let (lig, poc) = complexes(1, 14).remove(0);
    let s = Sample::complex(&cfg, &lig, &poc, true, true).unwrap();
    assert_eq!(s.tokens[0], cfg.mol_vnode_id());
    assert_eq!(s.tokens[lig.n_atoms() + 1], cfg.pocket_vnode_id());
    assert_eq!(s.tokens.iter().filter(|&&t| t == cfg.mol_vnode_id()).count(), 1);
    assert_eq!(s.tokens.iter().filter(|&&t| t == cfg.pocket_vnode_id()).count(), 1);

    let h0 = |p: &ParamStore, s: &Sample| {
        let mut tape = Tape::new(p);
        let v = embed(&mut tape, &cfg, s).unwrap();
        tape.value_mat(v)
    };
    let base = h0(&params, &s);
    let mut flipped = s.clone();
    flipped.domains[1] = Domain::Pocket;
    let f = h0(&params, &flipped);
    let dom = params.get("embed.domain").unwrap().data().to_vec();
    let d = cfg.hidden;
    for c in 0..d {
        assert!((f.row(1)[c] - base.row(1)[c] - (dom[d + c] - dom[c])).abs() < 1e-12);
    }
    assert_eq!(f.row(2), base.row(2));

    for name in ["embed.atom", "embed.degree", "embed.domain"] {
        params.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    assert!(h0(&params, &s).data.iter().all(|&v| v == 0.0));
}

#[test]
fn token_head_starts_near_uniform() {
    let cfg = tiny();
    let params = init_params(&cfg, 11);
    let spec = SynthSpec { molecules: 120, pockets: 0, complexes: 0, ligand_atoms: [4, 12], ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut total = 0.0;
    let mut batches = 0;
    for e in synth_generate(21, &spec).unwrap() {
        let Payload::Molecule(g) = &e.payload else { unreachable!() };
        let mut s = Sample::molecule(&cfg, g, true, true).unwrap();
        let pos = s.ligand_rows()[rng.random_range(0..g.n_atoms())];
        let target = s.mask_token(&cfg, pos);
        let mut tape = Tape::new(&params);
        let enc = encode(&mut tape, &cfg, &s, None).unwrap();
        let logits = token_head(&mut tape, &enc, &[pos]).unwrap();
        let l = tape.value(logits).to_vec();
        assert_eq!(l.len(), cfg.atom_vocab);
        let p = bit_core::numcore::stable_softmax(&l, None).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ce = tape.cross_entropy(logits, vec![target].into());
        total += tape.scalar(ce);
        batches += 1;
    }
    let mean = total / batches as f64;
    let ln_v = (cfg.atom_vocab as f64).ln();
    assert!((mean - ln_v).abs() < 0.1 * ln_v, "mean CE {mean} vs ln V {ln_v}");
}

#[test]
fn encode_modes() {
    let cfg = tiny();
    let mut params = init_params(&cfg, 12);
    add_task_heads(&mut params, &cfg, TaskHead::Retrieval, 1);
    let (lig, poc) = complexes(1, 15).remove(0);
    let mut tape = Tape::new(&params);
    let c = Sample::complex(&cfg, &lig, &poc, true, true).unwrap();
    let (v, _) = forward_encode(&mut tape, &cfg, &c, EncodeMode::Fusion, None).unwrap();
    assert_eq!(tape.shape(v), (1, cfg.hidden));
    let p = Sample::pocket(&cfg, &poc, true, true).unwrap();
    let (v, _) = forward_encode(&mut tape, &cfg, &p, EncodeMode::DualPocket, None).unwrap();
    let norm: f64 = tape.value(v).iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-9);
    let l2d = Sample::molecule(&cfg, &lig, true, false).unwrap();
    let (v, _) = forward_encode(&mut tape, &cfg, &l2d, EncodeMode::DualLigand, None).unwrap();
    assert_eq!(tape.shape(v), (1, cfg.retrieval_dim));
    let l3d = Sample::molecule(&cfg, &lig, true, true).unwrap();
    assert!(matches!(
        forward_encode(&mut tape, &cfg, &l3d, EncodeMode::DualLigand, None),
        Err(ModelError::ModeMismatch { .. })
    ));
    assert!(matches!(
        forward_encode(&mut tape, &cfg, &p, EncodeMode::Fusion, None),
        Err(ModelError::ModeMismatch { .. })
    ));
    assert!(matches!(Sample::molecule(&cfg, &lig.without_coords(), true, true), Err(ModelError::MissingCoords)));
}

#[test]
fn dropout_is_seeded() {
    let cfg = BitConfig { dropout_attn: 0.1, dropout_hidden: 0.1, ..tiny() };
    let params = init_params(&cfg, 13);
    let (lig, poc) = complexes(1, 16).remove(0);
    let s = Sample::complex(&cfg, &lig, &poc, true, true).unwrap();
    let out = |seed: Option<u64>| {
        let mut tape = Tape::new(&params);
        let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
        let enc = encode(&mut tape, &cfg, &s, rng.as_mut()).unwrap();
        tape.value(enc.h).to_vec()
    };
    assert_eq!(out(Some(1)), out(Some(1)));
    assert_ne!(out(Some(1)), out(Some(2)));
    assert_ne!(out(Some(1)), out(None));
}
