//! Command-line driver: configuration, data sourcing, checkpoints and reports.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint;
use crate::config::{EvalTask, RunConfig};
use crate::encode::StructuralEncoding;
use crate::model::{init_params, BitConfig};
use crate::molgraph::synth::random_molecule;
use crate::molgraph::{
    graph_stats, parse_jsonl, synth_generate, write_jsonl, ComplexRecord, DatasetEntry, Payload, SynthSpec,
};
use crate::numcore::{GradCheckOptions, ParamStore};
use crate::pretrain::{build_instance, grad_check_batch, run_pretrain, PretrainData, TrainState};
use crate::tasks::{
    affinity_finetune, classify_finetune, classify_generate, classify_null_control, evaluate_affinity,
    evaluate_classify, evaluate_retrieval, pipeline_screen, retrieval_finetune, retrieval_generate,
};

#[derive(Debug, Parser)]
#[command(name = "bit", version, about = "Cross-domain molecular transformer toolkit")]
pub struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the configured dataset path.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Number of pre-training steps to run in this invocation.
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// Checkpoint to resume from or to evaluate.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset to `<out>/data.jsonl`.
    GenData,
    /// Per-domain shortest-path and degree histograms.
    Stats,
    /// Structural encodings of every entry.
    Encode {
        /// Print encodings as JSON lines on stdout.
        #[arg(long)]
        dump: bool,
    },
    /// Denoising pre-training with a JSONL loss log and a checkpoint.
    Pretrain,
    FinetuneAffinity,
    FinetuneRetrieval,
    FinetuneClassify,
    /// Held-out metrics of a fine-tuned checkpoint for `[eval].task`.
    Eval,
    /// Coarse-to-fine screening of the held-out pool of `[screen].family`.
    Screen {
        /// Classifier checkpoint; defaults to `<out>/classify.ckpt`.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Finite-difference check of the pre-training gradients.
    GradCheck,
}

/// Failure classes mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Metrics report shared by every task.
#[derive(Debug, Serialize)]
pub struct Report {
    pub task: String,
    pub split: String,
    pub metrics: Value,
    pub config_digest: String,
}

struct Ctx {
    cfg: RunConfig,
    digest: String,
    out: PathBuf,
    steps: Option<u64>,
    checkpoint: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn report(&self, task: &str, split: &str, metrics: Value, file: &str) -> Result<()> {
        let r = Report { task: task.into(), split: split.into(), metrics, config_digest: self.digest.clone() };
        let text = serde_json::to_string_pretty(&r)? + "\n";
        fs::write(self.path(file), &text).with_context(|| format!("writing {file}"))?;
        emit(&text)?;
        Ok(())
    }
}

/// Writes to stdout; a closed reader ends output quietly.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            crate::config::ConfigError::Io { .. } => CliError::Runtime(e.into()),
            other => CliError::Usage(other.to_string()),
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(d) = &cli.data {
        cfg.data.path = Some(d.clone());
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Parses arguments and runs one command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    let digest = cfg.digest();
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx { cfg, digest, out, steps: cli.steps, checkpoint: cli.checkpoint };
    match cli.command {
        Command::GenData => gen_data(&ctx),
        Command::Stats => stats(&ctx),
        Command::Encode { dump } => encode(&ctx, dump),
        Command::Pretrain => pretrain(&ctx),
        Command::FinetuneAffinity => finetune_affinity(&ctx),
        Command::FinetuneRetrieval => finetune_retrieval(&ctx),
        Command::FinetuneClassify => finetune_classify(&ctx),
        Command::Eval => eval(&ctx),
        Command::Screen { classifier } => screen(&ctx, classifier),
        Command::GradCheck => grad_check(&ctx),
    }
    .map_err(CliError::Runtime)
}

fn entries(ctx: &Ctx) -> Result<Vec<DatasetEntry>> {
    match &ctx.cfg.data.path {
        Some(p) => parse_jsonl(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(synth_generate(ctx.cfg.seed, &ctx.cfg.synth)?),
    }
}

fn affinity_data(ctx: &Ctx) -> Result<Vec<ComplexRecord>> {
    let all = match &ctx.cfg.data.path {
        Some(_) => entries(ctx)?,
        None => {
            let spec = SynthSpec {
                molecules: 0,
                pockets: 0,
                complexes: ctx.cfg.affinity.synth_complexes,
                ..ctx.cfg.synth.clone()
            };
            synth_generate(ctx.cfg.seed, &spec)?
        }
    };
    Ok(all
        .into_iter()
        .filter_map(|e| match e.payload {
            Payload::Complex(c) if c.affinity.is_some() => Some(c),
            _ => None,
        })
        .collect())
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let data = synth_generate(ctx.cfg.seed, &ctx.cfg.synth)?;
    let path = ctx.path("data.jsonl");
    write_jsonl(BufWriter::new(File::create(&path)?), &data)?;
    eprintln!("wrote {} entries to {}", data.len(), path.display());
    Ok(())
}

fn stats(ctx: &Ctx) -> Result<()> {
    let report = graph_stats(&entries(ctx)?);
    let text = serde_json::to_string_pretty(&report)? + "\n";
    fs::write(ctx.path("stats.json"), &text)?;
    emit(&text)?;
    Ok(())
}

fn encode(ctx: &Ctx, dump: bool) -> Result<()> {
    let model = ctx.cfg.bit_config();
    let mut lines = Vec::new();
    for e in entries(ctx)? {
        let enc = match &e.payload {
            Payload::Molecule(g) => StructuralEncoding::build(Some(g), None, model.d_max, model.degree_cap),
            Payload::Pocket(g) => StructuralEncoding::build(None, Some(g), model.d_max, model.degree_cap),
            Payload::Complex(c) => {
                StructuralEncoding::build(Some(&c.ligand), Some(&c.pocket), model.d_max, model.degree_cap)
            }
        };
        lines.push(serde_json::to_string(&json!({ "id": e.id, "kind": e.kind(), "encoding": enc }))?);
    }
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    if dump {
        emit(&text)?;
    } else {
        fs::write(ctx.path("encodings.jsonl"), text)?;
        eprintln!("wrote {} encodings", lines.len());
    }
    Ok(())
}

fn load_state(path: &Path, model: &BitConfig) -> Result<TrainState> {
    let state = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    if &state.model != model {
        bail!("checkpoint {} was trained with a different model configuration", path.display());
    }
    Ok(state)
}

fn pretrain(ctx: &Ctx) -> Result<()> {
    let model = ctx.cfg.bit_config();
    let pcfg = &ctx.cfg.pretrain;
    let data = PretrainData::from_entries(&entries(ctx)?);
    let resuming = ctx.checkpoint.is_some();
    let mut state = match &ctx.checkpoint {
        Some(p) => {
            let s = load_state(p, &model)?;
            if s.config_digest != ctx.digest {
                bail!("checkpoint {} was produced under a different config (digest {})", p.display(), s.config_digest);
            }
            s
        }
        None => TrainState::new(model.clone(), init_params(&model, ctx.cfg.seed), ctx.cfg.seed, ctx.digest.clone()),
    };
    let steps = ctx.steps.unwrap_or(pcfg.steps.saturating_sub(state.step));
    let log_path = ctx.path("pretrain_log.jsonl");
    let file =
        if resuming { OpenOptions::new().create(true).append(true).open(&log_path)? } else { File::create(&log_path)? };
    let mut log = BufWriter::new(file);
    run_pretrain(&mut state, &data, pcfg, steps, |rec| {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(log, "{line}").map_err(|e| crate::pretrain::PretrainError::Config(format!("writing loss log: {e}")))
    })?;
    log.flush()?;
    checkpoint::save(ctx.path("pretrain.ckpt"), &state)?;
    eprintln!("pre-trained to step {}", state.step);
    Ok(())
}

/// Starting weights for fine-tuning: `--checkpoint`, else the pre-training checkpoint,
/// else random weights when `skip_pretrain` is set.
fn base_params(ctx: &Ctx, model: &BitConfig) -> Result<ParamStore> {
    if let Some(p) = &ctx.checkpoint {
        return Ok(load_state(p, model)?.params);
    }
    if ctx.cfg.skip_pretrain {
        return Ok(init_params(model, ctx.cfg.seed));
    }
    let p = ctx.path("pretrain.ckpt");
    if !p.exists() {
        bail!("no pre-trained checkpoint at {}; run `pretrain`, pass --checkpoint, or set skip_pretrain", p.display());
    }
    Ok(load_state(&p, model)?.params)
}

fn save_params(ctx: &Ctx, name: &str, model: &BitConfig, params: ParamStore) -> Result<()> {
    let state = TrainState::new(model.clone(), params, ctx.cfg.seed, ctx.digest.clone());
    checkpoint::save(ctx.path(name), &state)?;
    Ok(())
}

fn finetune_affinity(ctx: &Ctx) -> Result<()> {
    let model = ctx.cfg.bit_config();
    let mut params = base_params(ctx, &model)?;
    let data = affinity_data(ctx)?;
    let r = affinity_finetune(&mut params, &model, &data, &ctx.cfg.affinity.schedule, ctx.cfg.seed)?;
    save_params(ctx, "affinity.ckpt", &model, params)?;
    let metrics = json!({ "rmse": r.metrics.rmse, "mae": r.metrics.mae, "sd": r.metrics.sd, "r": r.metrics.r,
        "n_train": r.n_train, "n_test": r.n_test, "train_losses": r.train_losses });
    ctx.report("affinity", "test", metrics, "affinity.report.json")
}

fn finetune_retrieval(ctx: &Ctx) -> Result<()> {
    let model = ctx.cfg.bit_config();
    let mut params = base_params(ctx, &model)?;
    let data = retrieval_generate(ctx.cfg.seed, &ctx.cfg.retrieval.data)?;
    let r = retrieval_finetune(&mut params, &model, &data, &ctx.cfg.retrieval.train_config(), ctx.cfg.seed)?;
    save_params(ctx, "retrieval.ckpt", &model, params)?;
    let mut metrics = serde_json::to_value(&r.metrics)?;
    metrics["shuffled_labels"] = json!(ctx.cfg.retrieval.shuffle_labels);
    metrics["train_losses"] = json!(r.train_losses);
    ctx.report("retrieval", "test", metrics, "retrieval.report.json")
}

fn finetune_classify(ctx: &Ctx) -> Result<()> {
    let model = ctx.cfg.bit_config();
    let mut params = base_params(ctx, &model)?;
    let c = &ctx.cfg.classify;
    let data = classify_generate(ctx.cfg.seed, &c.data)?;
    if c.shuffle_labels {
        let n = classify_null_control(&params, &model, &data, &c.schedule, ctx.cfg.seed, c.null_permutations)?;
        let metrics = json!({ "auc": n.mean_auc, "permutation_aucs": n.aucs, "shuffled_labels": true });
        return ctx.report("classify", "test", metrics, "classify.report.json");
    }
    let r = classify_finetune(&mut params, &model, &data, &c.schedule, ctx.cfg.seed, false)?;
    save_params(ctx, "classify.ckpt", &model, params)?;
    let metrics = json!({ "auc": r.auc, "n_train": r.n_train, "n_test": r.n_test, "shuffled_labels": false, "train_losses": r.train_losses });
    ctx.report("classify", "test", metrics, "classify.report.json")
}

fn task_params(ctx: &Ctx, default: &str, model: &BitConfig) -> Result<ParamStore> {
    let p = ctx.checkpoint.clone().unwrap_or_else(|| ctx.path(default));
    Ok(load_state(&p, model)?.params)
}

fn eval(ctx: &Ctx) -> Result<()> {
    let model = ctx.cfg.bit_config();
    let seed = ctx.cfg.seed;
    match ctx.cfg.eval.task {
        EvalTask::Affinity => {
            let params = task_params(ctx, "affinity.ckpt", &model)?;
            let data = affinity_data(ctx)?;
            let m = evaluate_affinity(&params, &model, &data, ctx.cfg.affinity.schedule.test_fraction, seed)?;
            ctx.report("affinity", "test", serde_json::to_value(m)?, "eval.affinity.report.json")
        }
        EvalTask::Retrieval => {
            let params = task_params(ctx, "retrieval.ckpt", &model)?;
            let data = retrieval_generate(seed, &ctx.cfg.retrieval.data)?;
            let m = evaluate_retrieval(&params, &model, &data)?;
            ctx.report("retrieval", "test", serde_json::to_value(m)?, "eval.retrieval.report.json")
        }
        EvalTask::Classify => {
            let params = task_params(ctx, "classify.ckpt", &model)?;
            let data = classify_generate(seed, &ctx.cfg.classify.data)?;
            let auc = evaluate_classify(&params, &model, &data, ctx.cfg.classify.schedule.test_fraction, seed)?;
            ctx.report("classify", "test", json!({ "auc": auc }), "eval.classify.report.json")
        }
    }
}

fn screen(ctx: &Ctx, classifier: Option<PathBuf>) -> Result<()> {
    let model = ctx.cfg.bit_config();
    let dual = task_params(ctx, "retrieval.ckpt", &model)?;
    let cls_path = classifier.unwrap_or_else(|| ctx.path("classify.ckpt"));
    let cls = load_state(&cls_path, &model)?.params;
    let data = retrieval_generate(ctx.cfg.seed, &ctx.cfg.retrieval.data)?;
    let s = &ctx.cfg.screen;
    let pockets: Vec<_> = data.test_pockets.iter().filter(|p| p.label == s.family).map(|p| &p.graph).collect();
    let (pool, _) = data.pool(s.family);
    let library: Vec<_> =
        pool.iter().map(|&i| (data.test_ligands[i].id.clone(), data.test_ligands[i].graph.clone())).collect();
    let picks = pipeline_screen(&dual, &cls, &model, &pockets, &library, s.k1, s.m)?;
    let mut w = BufWriter::new(File::create(ctx.path("screen.jsonl"))?);
    for c in &picks {
        writeln!(w, "{}", serde_json::to_string(c)?)?;
    }
    w.flush()?;
    eprintln!("selected {} candidates", picks.len());
    Ok(())
}

fn grad_check(ctx: &Ctx) -> Result<()> {
    let model = ctx.cfg.bit_config();
    let g = &ctx.cfg.grad_check;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let mut batch = Vec::with_capacity(g.molecules);
    for _ in 0..g.molecules {
        let mol = random_molecule(&mut rng, g.atoms, &[6, 7, 8])?;
        batch.push(build_instance(&model, &ctx.cfg.pretrain, Some(&mol), None, &mut rng)?);
    }
    let params = init_params(&model, ctx.cfg.seed);
    let opts = GradCheckOptions { sample: g.sample, eps: g.eps, tol: g.tol, floor: g.floor, seed: ctx.cfg.seed };
    let rep = grad_check_batch(&params, &model, ctx.cfg.pretrain.lambda, &batch, &opts)?;
    let metrics = json!({ "passed": rep.passed, "max_rel_error": rep.max_rel_error, "tol": rep.tol, "sampled": rep.entries.len() });
    ctx.report("grad-check", "probe", metrics, "grad_check.report.json")?;
    if !rep.passed {
        bail!("gradient check failed: max relative error {} exceeds {}", rep.max_rel_error, rep.tol);
    }
    Ok(())
}
