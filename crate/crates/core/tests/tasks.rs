mod common;

use bit_core::model::{add_task_heads, init_params, BitConfig, EncodeMode, Preset, TaskHead};
use bit_core::molgraph::{synth_generate, ComplexRecord, MolecularGraph, Payload, SynthSpec};
use bit_core::numcore::{Array, Param};
use bit_core::tasks::{
    affinity_finetune, auc_roc, classify_generate, coarse_stage, embed, enrichment_factor, infonce_loss,
    pipeline_screen, predict_affinity, predict_proba, regression_metrics, retrieval_finetune, retrieval_generate,
    roc_enrichment, score_matrix, ClassifySpec, RetrievalConfig, RetrievalSpec, Schedule, TaskError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{auc_oracle, ef_oracle, re_oracle};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn pool_strategy(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=max).prop_flat_map(|n| {
        (prop::collection::vec(0u8..6, n), prop::collection::vec(any::<bool>(), n), 0..n, 0..n).prop_map(
            move |(s, mut l, a, b)| {
                l[a] = true;
                l[if a != b { b } else { (a + 1) % n }] = false;
                (s.into_iter().map(f64::from).collect(), l)
            },
        )
    })
}

proptest! {
    #[test]
    fn enrichment_matches_enumeration((scores, labels) in pool_strategy(50), alpha in 0.01f64..0.99) {
        prop_assert_eq!(enrichment_factor(&scores, &labels, alpha).unwrap(), ef_oracle(&scores, &labels, alpha));
        prop_assert_eq!(roc_enrichment(&scores, &labels, alpha).unwrap(), re_oracle(&scores, &labels, alpha));
    }

    #[test]
    fn auc_matches_pair_enumeration((scores, labels) in pool_strategy(200)) {
        prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), auc_oracle(&scores, &labels));
    }

    #[test]
    fn correlation_and_sd_affine_invariance(
        pred in prop::collection::vec(-5.0f64..5.0, 4..40),
        noise in prop::collection::vec(-1.0f64..1.0, 40),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let y: Vec<f64> = pred.iter().zip(&noise).map(|(p, n)| 2.0 * p + n).collect();
        let Ok(m) = regression_metrics(&pred, &y) else { return Ok(()) };
        let moved: Vec<f64> = pred.iter().map(|p| a * p + b).collect();
        let m2 = regression_metrics(&moved, &y).unwrap();
        prop_assert!(close(m.r, m2.r, 1e-9));
        prop_assert!(close(m.sd, m2.sd, 1e-9 * (1.0 + m.sd)));
    }

    #[test]
    fn infonce_properties(
        q in prop::collection::vec(-1.0f64..1.0, 4),
        pos in prop::collection::vec(-1.0f64..1.0, 4),
        decoys in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..10),
        tau in 0.05f64..1.0,
    ) {
        let l = infonce_loss(&q, &pos, &decoys, tau).unwrap();
        prop_assert!(l >= 0.0);
        let better: Vec<f64> = pos.iter().zip(&q).map(|(p, x)| p + 0.5 * x).collect();
        prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 0.01);
        prop_assert!(infonce_loss(&q, &better, &decoys, tau).unwrap() < l);
    }
}

#[test]
fn regression_examples() {
    let y = [0.0, 1.0, 2.0, 3.5];
    let m = regression_metrics(&y, &y).unwrap();
    assert_eq!((m.rmse, m.mae, m.sd), (0.0, 0.0, 0.0));
    assert!(close(m.r, 1.0, 1e-12));
    let shifted: Vec<f64> = y.iter().map(|v| v + 1.0).collect();
    let m = regression_metrics(&shifted, &y).unwrap();
    assert!(close(m.rmse, 1.0, 1e-12) && close(m.mae, 1.0, 1e-12) && close(m.r, 1.0, 1e-12) && m.sd < 1e-12);
    let m = regression_metrics(&[0.0, 2.0, 1.0], &[0.0, 1.0, 2.0]).unwrap();
    assert!(close(m.rmse, (2.0f64 / 3.0).sqrt(), 1e-12));
    assert!(close(m.mae, 2.0 / 3.0, 1e-12));
    assert!(close(m.r, 0.5, 1e-12));
    assert!(close(m.sd, 0.75f64.sqrt(), 1e-12));
    assert!(matches!(regression_metrics(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]), Err(TaskError::ConstantPredictions)));
}

#[test]
fn screening_examples() {
    assert_eq!(auc_roc(&[0.9, 0.4, 0.8, 0.1], &[true, true, false, false]).unwrap(), 0.75);
    assert!(matches!(auc_roc(&[0.1, 0.2], &[true, true]), Err(TaskError::SingleClass)));
    let n = 1000;
    let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
    let mut labels = vec![false; n];
    for i in [0, 4, 9, 500, 600, 700, 800, 900, 950, 999] {
        labels[i] = true;
    }
    assert!(close(enrichment_factor(&scores, &labels, 0.01).unwrap(), 30.0, 1e-9));
    let saturated: Vec<bool> = (0..n).map(|i| i < 10).collect();
    assert!(close(enrichment_factor(&scores, &saturated, 0.01).unwrap(), 100.0, 1e-9));
    let late: Vec<bool> = (0..n).map(|i| i >= 990).collect();
    assert_eq!(enrichment_factor(&scores, &late, 0.01).unwrap(), 0.0);
    assert!(matches!(enrichment_factor(&scores, &vec![false; n], 0.01), Err(TaskError::NoBinders)));
    let re = roc_enrichment(&scores, &saturated, 0.005).unwrap();
    assert!(close(re, n as f64 / 5.0, 1e-9));
    assert!(close(infonce_loss(&[1.0, 0.0], &[0.0, 1.0], &vec![vec![0.0, 1.0]; 64], 0.07).unwrap(), 65f64.ln(), 1e-12));
    assert!(matches!(infonce_loss(&[1.0], &[1.0], &[vec![1.0]], 0.0), Err(TaskError::ZeroTemperature)));
    let tiny = infonce_loss(&[1.0, 0.0], &[1.0, 0.0], &[vec![-1.0, 0.0]], 0.01).unwrap();
    assert!(tiny < 1e-50);
}

#[test]
fn null_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.5)).collect();
    assert!(close(auc_roc(&scores, &labels).unwrap(), 0.5, 0.05));
    let reps = 200;
    let mut sum = 0.0;
    for _ in 0..reps {
        let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let mut labels = vec![false; 10_000];
        for i in rand::seq::index::sample(&mut rng, 10_000, 100) {
            labels[i] = true;
        }
        sum += roc_enrichment(&scores, &labels, 0.05).unwrap();
    }
    assert!(close(sum / reps as f64, 1.0, 0.2), "mean RE {}", sum / reps as f64);
}

fn small_retrieval() -> RetrievalSpec {
    RetrievalSpec {
        train_pockets_per_family: 2,
        train_ligands_per_family: 4,
        test_pockets_per_family: 1,
        pool_actives: 4,
        pool_size: 34,
        ..Default::default()
    }
}

#[test]
fn dual_scores_are_transposes() {
    let model = BitConfig::preset(Preset::Tiny);
    let mut params = init_params(&model, 3);
    add_task_heads(&mut params, &model, TaskHead::Retrieval, 4);
    let data = retrieval_generate(5, &small_retrieval()).unwrap();
    let lig: Vec<&MolecularGraph> = data.test_ligands.iter().map(|l| &l.graph).collect();
    let poc: Vec<&MolecularGraph> = data.test_pockets.iter().map(|p| &p.graph).collect();
    let le = embed(&params, &model, &lig, EncodeMode::DualLigand).unwrap();
    let pe = embed(&params, &model, &poc, EncodeMode::DualPocket).unwrap();
    let a = score_matrix(&pe, &le);
    let b = score_matrix(&le, &pe);
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(v.to_bits(), b[j][i].to_bits());
        }
    }
    let half = embed(&params, &model, &lig[..7], EncodeMode::DualLigand).unwrap();
    assert_eq!(half, le[..7].to_vec());
    for v in &le {
        assert!(close(v.iter().map(|x| x * x).sum::<f64>(), 1.0, 1e-12));
    }
}

#[test]
fn classifier_outputs_probabilities() {
    let model = BitConfig::preset(Preset::Tiny);
    let mut params = init_params(&model, 3);
    add_task_heads(&mut params, &model, TaskHead::Classify, 4);
    let data = classify_generate(2, &ClassifySpec { molecules: 40, ..Default::default() }).unwrap();
    let ones = data.iter().filter(|d| d.label == 1).count();
    assert!(ones > 0 && ones < 40);
    let mols: Vec<&MolecularGraph> = data.iter().map(|d| &d.graph).collect();
    for p in predict_proba(&params, &model, &mols).unwrap() {
        assert!(p > 0.0 && p < 1.0);
    }
}

fn complexes(n: usize, seed: u64) -> Vec<ComplexRecord> {
    let spec = SynthSpec { molecules: 0, pockets: 0, complexes: n, ..Default::default() };
    synth_generate(seed, &spec)
        .unwrap()
        .into_iter()
        .filter_map(|e| match e.payload {
            Payload::Complex(c) => Some(c),
            _ => None,
        })
        .collect()
}

/// Mean R of untrained models over independent initializations.
#[test]
fn untrained_affinity_baseline() {
    let model = BitConfig::preset(Preset::Desk);
    let inits = 16;
    let mut sum = 0.0;
    for s in 0..inits {
        let data = complexes(64, 100 + s);
        let mut params = init_params(&model, s);
        add_task_heads(&mut params, &model, TaskHead::Affinity, s);
        params.insert_param(
            "head.affinity.norm",
            Param { value: Array::new(vec![2], vec![0.0, 1.0]).unwrap(), trainable: false },
        );
        let refs: Vec<&ComplexRecord> = data.iter().collect();
        let pred = predict_affinity(&params, &model, &refs).unwrap();
        let y: Vec<f64> = data.iter().map(|c| c.affinity.unwrap()).collect();
        sum += regression_metrics(&pred, &y).unwrap().r;
    }
    let mean = sum / inits as f64;
    assert!(mean.abs() < 0.3, "mean untrained R {mean}");
}

#[test]
fn affinity_loss_trend() {
    let model = BitConfig::preset(Preset::Tiny);
    let mut params = init_params(&model, 1);
    let data = complexes(160, 7);
    let sched = Schedule { epochs: 10, batch_size: 8, peak_lr: 1e-3, ..Default::default() };
    let r = affinity_finetune(&mut params, &model, &data, &sched, 2).unwrap();
    assert_eq!(r.train_losses.len(), 10);
    for w in r.train_losses.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "loss rose: {:?}", r.train_losses);
    }
}

#[test]
fn screening_pipeline_contracts() {
    let model = BitConfig::preset(Preset::Tiny);
    let mut dual = init_params(&model, 3);
    add_task_heads(&mut dual, &model, TaskHead::Retrieval, 4);
    let mut cls = init_params(&model, 5);
    add_task_heads(&mut cls, &model, TaskHead::Classify, 6);
    let data = retrieval_generate(8, &small_retrieval()).unwrap();
    let pockets: Vec<&MolecularGraph> = data.test_pockets.iter().map(|p| &p.graph).collect();
    let library: Vec<(String, MolecularGraph)> =
        data.test_ligands.iter().map(|l| (l.id.clone(), l.graph.clone())).collect();
    let a = pipeline_screen(&dual, &cls, &model, &pockets, &library, 6, 3).unwrap();
    let b = pipeline_screen(&dual, &cls, &model, &pockets, &library, 6, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|c| c.rank).collect::<Vec<_>>(), vec![1, 2, 3]);

    let k1 = 5;
    let one = &pockets[..1];
    let full = pipeline_screen(&dual, &cls, &model, one, &library, k1, k1).unwrap();
    let probs: Vec<f64> = full.iter().map(|c| c.stage2_prob).collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]), "m = k1 keeps the stage-2 order");
    let le = embed(&dual, &model, &library.iter().map(|(_, g)| g).collect::<Vec<_>>(), EncodeMode::DualLigand).unwrap();
    let pe = embed(&dual, &model, one, EncodeMode::DualPocket).unwrap();
    let (kept, _) = coarse_stage(&score_matrix(&pe, &le), k1);
    let mut ids: Vec<&str> = full.iter().map(|c| c.id.as_str()).collect();
    let mut expect: Vec<&str> = kept.iter().map(|&i| library[i].0.as_str()).collect();
    ids.sort_unstable();
    expect.sort_unstable();
    assert_eq!(ids, expect);
    assert!(matches!(pipeline_screen(&dual, &cls, &model, one, &library, 2, 3), Err(TaskError::Config(_))));
}

/// Trained dual encoder: at k1 = 10% of a 1000-compound pool, the planted actives survive stage 1.
#[test]
fn planted_actives_survive_coarse_stage() {
    let model = BitConfig::preset(Preset::Desk);
    let mut params = init_params(&model, 1);
    let data = retrieval_generate(11, &RetrievalSpec::default()).unwrap();
    retrieval_finetune(&mut params, &model, &data, &RetrievalConfig::default(), 12).unwrap();
    let le =
        embed(&params, &model, &data.test_ligands.iter().map(|l| &l.graph).collect::<Vec<_>>(), EncodeMode::DualLigand)
            .unwrap();
    let (mut found, mut planted) = (0, 0);
    for f in 0..data.spec.families {
        let (idx, labels) = data.pool(f);
        let pockets: Vec<&MolecularGraph> =
            data.test_pockets.iter().filter(|p| p.label == f).map(|p| &p.graph).collect();
        let pe = embed(&params, &model, &pockets, EncodeMode::DualPocket).unwrap();
        let pool_emb: Vec<Vec<f64>> = idx.iter().map(|&i| le[i].clone()).collect();
        let (kept, _) = coarse_stage(&score_matrix(&pe, &pool_emb), idx.len() / 10);
        planted += labels.iter().filter(|&&l| l).count();
        found += kept.iter().filter(|&&k| labels[k]).count();
    }
    let share = found as f64 / planted as f64;
    assert!(share >= 0.8, "recovered {share}");
}

mod screen_unit {
    use bit_core::tasks::*;

    #[test]
    fn coarse_union_and_order() {
        let scores = vec![vec![0.9, 0.1, 0.5, 0.2], vec![0.0, 0.8, 0.1, 0.3]];
        let (kept, s) = coarse_stage(&scores, 1);
        assert_eq!(kept, vec![0, 1]);
        assert_eq!(s, vec![0.9, 0.8]);
    }

    #[test]
    fn diversity_prefers_far_items() {
        let emb = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 0.0], vec![2.0, 0.0]];
        assert_eq!(max_min_diverse(&[0, 1, 2, 3], &emb, 2), vec![0, 2]);
        assert_eq!(max_min_diverse(&[0, 1, 2, 3], &emb, 3), vec![0, 2, 3]);
        assert_eq!(max_min_diverse(&[0, 1, 2, 3], &emb, 4), vec![0, 1, 2, 3]);
    }
}

mod metrics_unit {
    use bit_core::tasks::*;

    #[test]
    fn regression_examples() {
        let m = regression_metrics(&[0.0, 2.0, 1.0], &[0.0, 1.0, 2.0]).unwrap();
        assert!((m.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.r - 0.5).abs() < 1e-12);
        assert!((m.sd - 0.75f64.sqrt()).abs() < 1e-12);
        let y = [1.0, 3.0, 2.0, 5.0];
        let m = regression_metrics(&y.map(|v| v + 1.0), &y).unwrap();
        assert!((m.rmse - 1.0).abs() < 1e-12 && (m.r - 1.0).abs() < 1e-12 && m.sd < 1e-12);
        assert!(matches!(regression_metrics(&[1.0; 4], &y), Err(TaskError::ConstantPredictions)));
    }

    #[test]
    fn ranking_examples() {
        let auc = auc_roc(&[0.9, 0.4, 0.8, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 0.75);
        assert!(matches!(auc_roc(&[0.1, 0.2], &[true, true]), Err(TaskError::SingleClass)));
        let mut scores = vec![0.0; 1000];
        let mut labels = vec![false; 1000];
        for (i, s) in scores.iter_mut().take(10).enumerate() {
            *s = 1.0 - i as f64 * 1e-3;
        }
        labels[..3].fill(true);
        labels[500..507].fill(true);
        assert!((enrichment_factor(&scores, &labels, 0.01).unwrap() - 30.0).abs() < 1e-9);
        assert!(matches!(enrichment_factor(&scores, &[false; 1000], 0.01), Err(TaskError::NoBinders)));
    }

    #[test]
    fn roc_enrichment_example() {
        // 100 actives, 1000 decoys; 50 actives ranked ahead of the 10th decoy
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..1100 {
            scores.push(-(i as f64));
            labels.push(if i < 60 { i % 6 != 5 } else { i >= 1050 });
        }
        assert_eq!(labels.iter().filter(|&&l| l).count(), 100);
        assert!((roc_enrichment(&scores, &labels, 0.01).unwrap() - 55.0).abs() < 1e-12);
    }

    #[test]
    fn infonce_examples() {
        let q = [1.0, 0.0];
        let decoys = vec![vec![1.0, 0.0]; 64];
        assert!((infonce_loss(&q, &[1.0, 0.0], &decoys, 0.07).unwrap() - 65f64.ln()).abs() < 1e-12);
        let decoys = vec![vec![-1.0, 0.0]; 64];
        assert!(infonce_loss(&q, &[1.0, 0.0], &decoys, 0.07).unwrap() < 1e-9);
        assert!(matches!(infonce_loss(&q, &q, &decoys, 0.0), Err(TaskError::ZeroTemperature)));
    }
}
