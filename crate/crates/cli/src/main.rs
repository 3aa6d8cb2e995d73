use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use vgcm::dataset::synthetic::{write_corpus, SyntheticWorldConfig};
use vgcm::dataset::{attach_features, load_annotations, InMemoryFeatures, SeededRandomFeatures};
use vgcm::eval::{
    compute_chain_metrics, render_table, report_to_json, BaselineKind, BaselinePredictor, MetricsReport, StressResult, TableRow,
    VideoPrediction,
};
use vgcm::inference::{
    graph_to_dot, graph_to_json, parallel_map, regressive_extra_passes, regressive_masked_passes, GraphPrediction, InferenceBudget,
    InferenceOptions, Inferencer,
};
use vgcm::model::{load_checkpoint, Vgcm};
use vgcm::refinement::{AuxTextProvider, CachedAuxTexts, RefinementConfig, TemplateAuxTexts};
use vgcm::training::{TrainConfig, Trainer};
use vgcm::types::EventSequence;
use vgcm::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "vgcm", version, about = "Event-level causal discovery in videos: synthesis, training, evaluation, inference")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that receives one sub-directory per run.
    #[arg(long, global = true, default_value = "runs")]
    output: PathBuf,
    /// Worker threads for evaluation and inference.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic planted-graph corpus.
    Synth,
    /// Train a model on an annotation file.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Component to switch off; may be repeated.
        #[arg(long)]
        ablate: Vec<String>,
        /// Continue from a checkpoint written at an epoch boundary.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score chains and graphs against their labels.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        /// Evaluate a reference predictor instead of a checkpoint.
        #[arg(long, value_parser = ["all_causal", "all_noncausal", "seeded_random"])]
        baseline: Option<String>,
        /// Corpus whose relations are all non-causal.
        #[arg(long)]
        stress: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        ablate: Vec<String>,
    },
    /// Infer complete causal graphs.
    Infer {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Nonregressive)]
        mode: Mode,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        ablate: Vec<String>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Nonregressive,
    Regressive,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Synth => synth(c),
        Command::Train { corpus, val, ablate, resume } => train(c, corpus, val.as_deref(), ablate, resume.as_deref()),
        Command::Eval { corpus, checkpoint, baseline, stress, threshold, ablate } => {
            eval(c, corpus, checkpoint.as_deref(), baseline.as_deref(), stress.as_deref(), *threshold, ablate)
        }
        Command::Infer { corpus, checkpoint, mode, threshold, ablate } => infer(c, corpus, checkpoint, *mode, *threshold, ablate),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Creates a fresh run directory named after the subcommand, the seed and
/// a digest of the inputs. An existing directory is never reused.
fn run_dir(c: &Common, command: &str, seed: u64, inputs: &[&str]) -> Result<PathBuf> {
    let mut h = Sha256::new();
    for i in inputs {
        h.update(i.as_bytes());
        h.update([0]);
    }
    let digest: String = h.finalize().iter().take(4).map(|b| format!("{b:02x}")).collect();
    let base = format!("{command}-s{seed}-{digest}");
    mkdir(&c.output)?;
    let mut attempt = 1;
    loop {
        let name = if attempt == 1 { base.clone() } else { format!("{base}-r{attempt}") };
        let dir = c.output.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => attempt += 1,
            Err(e) => return Err(Error::Io { path: dir, source: e }),
        }
    }
}

fn write_manifest(dir: &Path, command: &str, seed: u64, extra: serde_json::Value) -> Result<()> {
    let m = json!({ "command": command, "seed": seed, "version": env!("CARGO_PKG_VERSION"), "details": extra });
    write(&dir.join("run.json"), serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n")
}

fn synth(c: &Common) -> Result<()> {
    let path = c.config.as_deref().ok_or_else(|| Error::Config("synth needs --config".into()))?;
    let text = read(path)?;
    let mut cfg = SyntheticWorldConfig::from_toml(&text)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dir = run_dir(c, "synth", cfg.seed, &[&text])?;
    let summaries = write_corpus(&cfg, &dir)?;
    write_manifest(&dir, "synth", cfg.seed, json!({ "world": cfg, "summary": summaries }))?;
    println!("corpus written to {}", dir.display());
    for s in &summaries {
        println!("{:<7} videos {:>5}  events {:>6}  edge density {:.4}", s.split, s.videos, s.events, s.edge_density());
    }
    Ok(())
}

fn train_config(c: &Common, ablate: &[String]) -> Result<(TrainConfig, String)> {
    let text = match &c.config {
        Some(p) => read(p)?,
        None => String::new(),
    };
    let mut cfg = TrainConfig::from_toml(&text)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    for a in ablate {
        cfg.ablate(a)?;
    }
    cfg.validate()?;
    Ok((cfg, text))
}

/// Loads an annotation file and its visual features. Feature containers
/// named by the records are resolved against the file's directory; records
/// without containers get seeded random features.
fn load_corpus(path: &Path, frames: usize, feature_dim: usize, seed: u64) -> Result<Vec<EventSequence>> {
    let records = load_annotations(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if records.iter().any(|r| r.features_path.is_some()) {
        let store = InMemoryFeatures::from_records(&records, base)?;
        attach_features(&records, &store)
    } else {
        attach_features(&records, &SeededRandomFeatures { frames, feature_dim, seed })
    }
}

fn aux_texts() -> Result<Box<dyn AuxTextProvider>> {
    Ok(match CachedAuxTexts::from_env(TemplateAuxTexts)? {
        Some(cached) => Box::new(cached),
        None => Box::new(TemplateAuxTexts),
    })
}

fn train(c: &Common, corpus: &Path, val: Option<&Path>, ablate: &[String], resume: Option<&Path>) -> Result<()> {
    let (cfg, text) = train_config(c, ablate)?;
    let train = load_corpus(corpus, cfg.frames, cfg.feature_dim, cfg.seed)?;
    let mut val_set = match val {
        Some(p) => load_corpus(p, cfg.frames, cfg.feature_dim, cfg.seed)?,
        None => Vec::new(),
    };
    let mut train_set = train;
    if val.is_none() && cfg.val_fraction > 0.0 {
        let n_val = ((train_set.len() as f64) * cfg.val_fraction).round() as usize;
        val_set = train_set.split_off(train_set.len() - n_val.min(train_set.len() - 1));
    }
    let corpus_text = read(corpus)?;
    let dir = run_dir(c, "train", cfg.seed, &[&text, &corpus_text, &ablate.join(","), &resume.map(|p| p.display().to_string()).unwrap_or_default()])?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    write_manifest(&dir, "train", cfg.seed, json!({ "corpus": corpus, "ablations": ablate, "resume": resume }))?;
    let texts = aux_texts()?;
    let trainer = Trainer::new(cfg).with_output(&dir).with_ablations(ablate.to_vec()).with_jobs(c.jobs).with_texts(texts.as_ref());
    let outcome = match resume {
        Some(p) => trainer.resume(p, &train_set, &val_set)?,
        None => trainer.train(&train_set, &val_set)?,
    };
    if let Some(last) = outcome.log.last() {
        println!(
            "step {} epoch {}  l_c {:.4}  l_r {:.4}  l_v {:.4}  l_s {:.4}  total {:.4}",
            last.step, last.epoch, last.l_c, last.l_r, last.l_v, last.l_s, last.total
        );
    }
    match outcome.log.iter().rev().find_map(|r| r.val_acc) {
        Some(acc) => println!("validation Acc {acc:.2}"),
        None => println!("no validation set"),
    }
    println!("checkpoint {}", dir.join(vgcm::training::FINAL_CHECKPOINT).display());
    Ok(())
}

/// Model, refinement settings and feature shape from a checkpoint.
fn load_model(path: &Path, ablate: &[String]) -> Result<(Vgcm, RefinementConfig)> {
    let ck = load_checkpoint(path).map_err(|e| Error::Config(e.to_string()))?;
    let mut refinement: RefinementConfig =
        ck.header.metadata.get("refinement").and_then(|v| serde_json::from_value(v.clone()).ok()).unwrap_or_default();
    for a in ablate {
        match a.as_str() {
            "refinement" => refinement.enabled = false,
            "frontdoor" => refinement.frontdoor = false,
            "counterfactual" => refinement.counterfactual = false,
            other => return Err(Error::Config(format!("ablation {other:?} applies only at training time"))),
        }
    }
    Ok((ck.model, refinement))
}

fn predictions<'a>(seqs: &'a [EventSequence], chains: Vec<Vec<bool>>, graphs: Vec<Option<vgcm::types::CausalGraph>>) -> Vec<VideoPrediction<'a>> {
    seqs.iter()
        .zip(chains)
        .zip(graphs)
        .map(|((s, chain), graph)| VideoPrediction {
            video_id: &s.video_id,
            chain_pred: chain,
            chain_truth: &s.chain_labels,
            graph_truth: graph.as_ref().and(s.graph()),
            graph_pred: graph,
        })
        .collect()
}

fn eval(
    c: &Common,
    corpus: &Path,
    checkpoint: Option<&Path>,
    baseline: Option<&str>,
    stress: Option<&Path>,
    threshold: f64,
    ablate: &[String],
) -> Result<()> {
    let seed = c.seed.unwrap_or(0);
    let loaded = checkpoint.map(|p| load_model(p, ablate)).transpose()?;
    let (frames, feature_dim) = loaded.as_ref().map_or((8, 64), |(m, _)| (m.config().frames, m.config().feature_dim));
    let texts = aux_texts()?;
    let score = |seqs: &[EventSequence]| -> Result<MetricsReport> {
        let (chains, graphs): (Vec<_>, Vec<_>) = match (&loaded, baseline) {
            (Some((model, refinement)), _) => {
                let inf = Inferencer::new(model, InferenceOptions { threshold, refinement: *refinement }).with_texts(texts.as_ref());
                let graphs = parallel_map(seqs, c.jobs, |s| inf.infer_complete_graph(s)).into_iter().collect::<Result<Vec<_>>>()?;
                graphs.into_iter().map(|g| (g.last_row(threshold), Some(g.graph))).unzip()
            }
            (None, Some(kind)) => {
                let kind = match kind.parse::<BaselineKind>()? {
                    BaselineKind::SeededRandom { p, .. } => BaselineKind::SeededRandom { p, seed },
                    k => k,
                };
                let b = BaselinePredictor::new(kind);
                seqs.iter().map(|s| (b.predict_chain(s), Some(b.predict_graph(s)))).unzip()
            }
            (None, None) => return Err(Error::Config("eval needs --checkpoint or --baseline".into())),
        };
        compute_chain_metrics(predictions(seqs, chains, graphs))
    };
    let main_set = load_corpus(corpus, frames, feature_dim, seed)?;
    let main = score(&main_set)?;
    let stress_result = match stress {
        Some(p) => {
            let set = load_corpus(p, frames, feature_dim, seed)?;
            let report = score(&set)?;
            Some((StressResult::new(&report, &main)?, report))
        }
        None => None,
    };
    let name = match (checkpoint, baseline) {
        (Some(_), _) if ablate.is_empty() => "VGCM".to_string(),
        (Some(_), _) => format!("VGCM w/o {}", ablate.join(",")),
        (None, Some(b)) => b.to_string(),
        _ => unreachable!(),
    };
    let inputs = [
        read(corpus)?,
        checkpoint.map(|p| p.display().to_string()).unwrap_or_default(),
        baseline.unwrap_or_default().to_string(),
        stress.map(|p| p.display().to_string()).unwrap_or_default(),
        threshold.to_string(),
        ablate.join(","),
    ];
    let dir = run_dir(c, "eval", seed, &inputs.iter().map(String::as_str).collect::<Vec<_>>())?;
    let table = render_table(&[TableRow { name: &name, report: &main, stress: stress_result.as_ref().map(|(s, _)| s) }])?;
    write(&dir.join("report.txt"), &table)?;
    write(&dir.join("report.json"), report_to_json(&main)? + "\n")?;
    if let Some((s, report)) = &stress_result {
        write(&dir.join("stress.json"), report_to_json(report)? + "\n")?;
        write(&dir.join("stress_change.json"), serde_json::to_string_pretty(s).expect("stress serializes") + "\n")?;
    }
    write_manifest(&dir, "eval", seed, json!({ "model": name, "corpus": corpus, "threshold": threshold }))?;
    print!("{table}");
    println!("SHD is averaged over the {} videos that carry complete labels", main.per_video.iter().filter(|v| v.shd.is_some()).count());
    println!("report written to {}", dir.display());
    Ok(())
}

fn infer(c: &Common, corpus: &Path, checkpoint: &Path, mode: Mode, threshold: f64, ablate: &[String]) -> Result<()> {
    let seed = c.seed.unwrap_or(0);
    let (model, refinement) = load_model(checkpoint, ablate)?;
    let seqs = load_corpus(corpus, model.config().frames, model.config().feature_dim, seed)?;
    let texts = aux_texts()?;
    let inf = Inferencer::new(&model, InferenceOptions { threshold, refinement }).with_texts(texts.as_ref());
    let graphs: Vec<GraphPrediction> = parallel_map(&seqs, c.jobs, |s| match mode {
        Mode::Nonregressive => inf.infer_complete_graph(s),
        Mode::Regressive => inf.infer_complete_graph_regressive(s),
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mode_name = format!("{mode:?}").to_lowercase();
    let inputs = [read(corpus)?, checkpoint.display().to_string(), mode_name.clone(), threshold.to_string(), ablate.join(",")];
    let dir = run_dir(c, "infer", seed, &inputs.iter().map(String::as_str).collect::<Vec<_>>())?;
    let graph_dir = dir.join("graphs");
    mkdir(&graph_dir)?;
    let mut total = InferenceBudget::default();
    let mut rows = Vec::new();
    for g in &graphs {
        write(&graph_dir.join(format!("{}.json", g.video_id)), graph_to_json(g) + "\n")?;
        write(&graph_dir.join(format!("{}.dot", g.video_id)), graph_to_dot(g))?;
        total += g.budget;
        let n = g.graph.n_events();
        rows.push(json!({
            "video_id": g.video_id,
            "n_events": n,
            "masked_passes": g.budget.masked,
            "forward_passes": g.budget.forward_passes(),
            "refinement_passes": g.budget.refinement,
            "regressive_masked_passes": regressive_masked_passes(n),
            "regressive_extra_masked_passes": regressive_extra_passes(n),
        }));
    }
    let summary = json!({ "mode": mode_name, "seed": seed, "total": total, "videos": rows });
    write(&dir.join("passes.json"), serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    write_manifest(&dir, "infer", seed, json!({ "mode": mode_name, "corpus": corpus, "threshold": threshold }))?;
    println!("{:<16} {:>3} {:>10} {:>12} {:>16}", "video", "N", "masked", "regressive", "regressive extra");
    for g in &graphs {
        let n = g.graph.n_events();
        println!("{:<16} {:>3} {:>10} {:>12} {:>16}", g.video_id, n, g.budget.masked, regressive_masked_passes(n), regressive_extra_passes(n));
    }
    println!("{} graphs ({mode_name}) written to {}", graphs.len(), graph_dir.display());
    Ok(())
}
