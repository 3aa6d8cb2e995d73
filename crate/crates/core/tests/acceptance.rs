//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line; the process exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgcm::dataset::{generate_split, write_corpus, Split, SyntheticWorldConfig};
use vgcm::eval::{compute_chain_metrics, compute_shd, render_table, BaselineKind, BaselinePredictor, MetricsReport, StressResult, TableRow, VideoPrediction};
use vgcm::inference::{graph_to_dot, graph_to_json, regressive_extra_passes, InferenceOptions, Inferencer};
use vgcm::model::{mask_event, Ctx, VideoPass, Vgcm};
use vgcm::refinement::{refine_masked_feature, refine_with, EffectPair, RefinementConfig, TemplateAuxTexts};
use vgcm::tensor::{Graph, Mat, ParamStore};
use vgcm::training::{
    batch_gradients, combined_label, compute_losses, gradient_check, sample_mask, sample_video, ContextMaskSchedule, MaskSpec, TrainConfig,
    Trainer, VideoSample,
};
use vgcm::types::{CausalGraph, CompleteCausalityList, EventSequence, LossWeights};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("SHD oracle", shd_oracle),
        ("baseline identities", baseline_identities),
        ("masking semantics", masking_semantics),
        ("loss composition", loss_composition),
        ("gradient check", gradient_check_criterion),
        ("refinement algebra", refinement_algebra),
        ("complexity contract", complexity_contract),
        ("chain/graph consistency", chain_graph_consistency),
        ("planted-graph recovery", planted_graph_recovery),
        ("OR-label exhaustive", or_label_exhaustive),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|a| *a == id || name.contains(a.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn graph_from_bits(n: usize, bits: u64) -> CausalGraph {
    let mut g = CausalGraph::empty(n);
    let mut b = 0;
    for j in 1..n {
        for i in 0..j {
            if bits >> b & 1 == 1 {
                g.insert(i, j);
            }
            b += 1;
        }
    }
    g
}

fn brute_shd(a: &CausalGraph, b: &CausalGraph) -> usize {
    let n = a.n_events();
    let mut d = 0;
    for j in 0..n {
        for i in 0..j {
            d += usize::from(a.contains(i, j) != b.contains(i, j));
        }
    }
    d
}

fn shd_oracle() -> Outcome {
    let start = Instant::now();
    let mut checked = 0usize;
    // every ordered pair of graphs while that fits the time budget
    for n in 2..=5 {
        let m = n * (n - 1) / 2;
        let graphs: Vec<CausalGraph> = (0..1u64 << m).map(|b| graph_from_bits(n, b)).collect();
        for a in &graphs {
            for b in &graphs {
                ensure!(compute_shd(a, b).unwrap() == brute_shd(a, b), "mismatch at n={n}");
                checked += 1;
            }
        }
    }
    // every graph against structured and random truths beyond that
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 6..=8 {
        let m = n * (n - 1) / 2;
        let mut truths = vec![CausalGraph::empty(n), CausalGraph::complete(n)];
        truths.extend((0..4).map(|_| graph_from_bits(n, rng.random::<u64>() & ((1 << m) - 1))));
        let count: u64 = if n == 6 { 1 << m } else { 20_000 };
        for k in 0..count {
            let bits = if n == 6 { k } else { rng.random::<u64>() & ((1 << m) - 1) };
            let g = graph_from_bits(n, bits);
            for t in &truths {
                ensure!(compute_shd(&g, t).unwrap() == brute_shd(&g, t), "mismatch at n={n}");
                checked += 1;
            }
        }
    }
    for _ in 0..10_000 {
        let n = rng.random_range(2..=11);
        let m = n * (n - 1) / 2;
        let mask = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
        let (a, b) = (graph_from_bits(n, rng.random::<u64>() & mask), graph_from_bits(n, rng.random::<u64>() & mask));
        ensure!(compute_shd(&a, &b).unwrap() == brute_shd(&a, &b), "random mismatch at n={n}");
        checked += 1;
    }
    // two missing edges and one extra edge
    let truth = CausalGraph::from_edges(5, [(0, 4), (1, 4), (2, 4), (0, 2)]).unwrap();
    let pred = CausalGraph::from_edges(5, [(0, 4), (0, 2), (3, 4)]).unwrap();
    ensure!(compute_shd(&pred, &truth).unwrap() == 3, "worked case");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{checked} pairs agree, worked case = 3"))
}

fn chain_report(seqs: &[EventSequence], kind: BaselineKind) -> MetricsReport {
    let b = BaselinePredictor::new(kind);
    compute_chain_metrics(seqs.iter().map(|s| VideoPrediction {
        video_id: &s.video_id,
        chain_pred: b.predict_chain(s),
        chain_truth: &s.chain_labels,
        graph_pred: s.complete_labels.as_ref().map(|_| b.predict_graph(s)),
        graph_truth: s.graph(),
    }))
    .unwrap()
}

fn label_only(id: String, chain: Vec<bool>) -> EventSequence {
    let events = (0..=chain.len())
        .map(|i| vgcm::types::Event { index: i, visual: Mat::zeros(1, 1), caption: vec![3], span: (i as f64, i as f64 + 1.0) })
        .collect();
    EventSequence { video_id: id, events, chain_labels: chain, complete_labels: None }
}

fn check_identities(r: &MetricsReport, all_causal: bool) -> Result<(), String> {
    let t = r.n_relations();
    let p = r.n_pos;
    let (acc, pos, neg) = (r.acc().unwrap(), r.pos(), r.neg());
    let frac = 100.0 * p as f64 / t as f64;
    if all_causal {
        ensure!(pos == Some(100.0) && neg == Some(0.0), "all-causal Pos/Neg {pos:?}/{neg:?}");
        ensure!(acc == frac, "all-causal Acc {acc} vs positive fraction {frac}");
    } else {
        ensure!(pos == Some(0.0) && neg == Some(100.0), "all-noncausal Pos/Neg {pos:?}/{neg:?}");
        ensure!(acc == 100.0 * (t - p) as f64 / t as f64, "all-noncausal Acc {acc}");
    }
    // acc·T = pos·P + neg·(T−P), as counts and as percentages
    ensure!(r.correct() == r.correct_pos + r.correct_neg, "count identity");
    let lhs = acc * t as f64;
    let rhs = pos.unwrap() * p as f64 + neg.unwrap() * (t - p) as f64;
    ensure!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0), "percentage identity {lhs} vs {rhs}");
    Ok(())
}

fn baseline_identities() -> Outcome {
    let world = SyntheticWorldConfig { feature_dim: 8, latent_dim: 4, frames: 2, ..SyntheticWorldConfig::default() };
    let synthetic = common::corpus(&world, Split::Test, 100);
    for kind in [BaselineKind::AllCausal, BaselineKind::AllNonCausal] {
        check_identities(&chain_report(&synthetic, kind), kind == BaselineKind::AllCausal)?;
    }
    // 4239 causal relations out of 10000
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut labels: Vec<bool> = (0..10_000).map(|i| i < 4239).collect();
    for i in (1..labels.len()).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    let seqs: Vec<EventSequence> = labels.chunks(10).enumerate().map(|(i, c)| label_only(format!("v{i:04}"), c.to_vec())).collect();
    let yes = chain_report(&seqs, BaselineKind::AllCausal);
    let no = chain_report(&seqs, BaselineKind::AllNonCausal);
    check_identities(&yes, true)?;
    check_identities(&no, false)?;
    let table = render_table(&[TableRow { name: "all_causal", report: &yes, stress: None }, TableRow { name: "all_noncausal", report: &no, stress: None }])
        .map_err(|e| e.to_string())?;
    let row = |name: &str| table.lines().find(|l| l.starts_with(name)).unwrap().split_whitespace().skip(1).collect::<Vec<_>>().join(" ");
    ensure!(row("all_causal ") == "n/a 0.00 100.00 42.39", "row {:?}", row("all_causal "));
    ensure!(row("all_noncausal") == "n/a 100.00 0.00 57.61", "row {:?}", row("all_noncausal"));
    Ok("all-causal 42.39 / all-noncausal 57.61 at positive fraction 0.4239".into())
}

fn masking_semantics() -> Outcome {
    let model = common::tiny_model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let n = rng.random_range(4..=11);
        let seq = common::random_sequence(n, trial);
        let k = rng.random_range(0..n - 1);
        let mut mask = vec![k];
        if rng.random_bool(0.3) {
            mask.push((k + 1 + rng.random_range(0..n - 2)) % (n - 1));
        }
        let mut other = seq.clone();
        for &m in &mask {
            let e = &mut other.events[m];
            e.visual.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-5.0..5.0));
            e.caption.iter_mut().for_each(|t| *t = rng.random_range(0..400));
            ensure!(mask_event(&seq.events[m]) == mask_event(&mask_event(&seq.events[m])), "mask_event not idempotent");
        }
        let slot = rng.random_range(1..n);
        let a = model.forward_path(&seq, &mask, slot).unwrap();
        let b = model.forward_path(&other, &mask, slot).unwrap();
        ensure!(a == b, "trial {trial}: masked content changed slot {slot}");
    }
    Ok("1000 trials bit-identical".into())
}

fn loss_composition() -> Outcome {
    let w = LossWeights::default();
    ensure!((w.lambda_c, w.lambda_r, w.lambda_v, w.lambda_s) == (1.0, 4.0, 0.25, 0.05), "default weights {w:?}");
    let on = compute_losses(1.0, 1.0, 1.0, 1.0, &w, 1).unwrap();
    ensure!(on.total == 5.3, "total {}", on.total);
    let off = compute_losses(1.0, 1.0, 1.0, 1.0, &w, 0).unwrap();
    ensure!(off.total == 5.25, "gated total {}", off.total);

    // r_k = 0 everywhere: gradients equal those of the objective without l_s
    let model = common::tiny_model(0);
    let cfg = TrainConfig { model_dim: 8, n_heads: 2, feature_dim: common::FEATURE_DIM, frames: common::FRAMES, ..TrainConfig::default() };
    let data = vec![common::random_sequence(6, 1), common::random_sequence(5, 2)];
    let batch: Vec<VideoSample> = data
        .iter()
        .enumerate()
        .map(|(index, s)| VideoSample { index, target: s.n_events() - 1, masks: (0..s.n_events() - 1).map(|k| (MaskSpec::single(k), false)).collect() })
        .collect();
    let (a, la) = batch_gradients(&model, &cfg, &TemplateAuxTexts, &data, &batch, 0).unwrap();
    let (b, _) = batch_gradients(&model, &TrainConfig { lambda_s: 0.0, ..cfg }, &TemplateAuxTexts, &data, &batch, 0).unwrap();
    ensure!(la.sign_gate == 0 && la.l_s == 0.0, "gate still active");
    for id in model.params().ids() {
        ensure!(a.get(id).map(|m| m.data().to_vec()) == b.get(id).map(|m| m.data().to_vec()), "gradient of {} differs", model.params().name(id));
    }
    Ok("total 5.3, gated 5.25, gated gradients identical".into())
}

fn gradient_check_criterion() -> Outcome {
    let start = Instant::now();
    let model = common::tiny_model(5);
    let cfg = TrainConfig { model_dim: 8, n_heads: 2, feature_dim: common::FEATURE_DIM, frames: common::FRAMES, ..TrainConfig::default() };
    let world = common::tiny_world();
    let data = common::corpus(&world, Split::Train, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch: Vec<VideoSample> = (0..data.len()).map(|i| sample_video(&data[i], i, &cfg, &mut rng)).collect();
    let report = gradient_check(&model, &cfg, &TemplateAuxTexts, &data, &batch, 64, 1e-5, 11).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(report.samples.len() == 64, "sampled {}", report.samples.len());
    ensure!(report.max_relative_error <= 1e-4, "max relative error {:.3e}", report.max_relative_error);
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("max relative error {:.2e} over 64 parameters", report.max_relative_error))
}

fn refinement_algebra() -> Outcome {
    let store = ParamStore::new();
    let g = Graph::new(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = |rng: &mut ChaCha8Rng| (0..8).map(|_| f64::from(rng.random_range(-64i32..=64)) / 16.0).collect::<Vec<f64>>();
    for _ in 0..1000 {
        let (o, a, b) = (grid(&mut rng), grid(&mut rng), grid(&mut rng));
        let row = |v: &[f64]| g.constant(Mat::row_vector(v.to_vec()));
        let out = refine_with(row(&o), &EffectPair { f_comp: Some(row(&a)), f_rem: Some(row(&b)) }, |x| x.scale(0.25)).unwrap();
        let want: Vec<f64> = (0..8).map(|i| o[i] + (0.25 * b[i] - 0.25 * a[i])).collect();
        ensure!(out.value().data() == &want[..], "linearity");
        let zero = row(&[0.0; 8]);
        let same = refine_with(row(&o), &EffectPair { f_comp: Some(zero), f_rem: Some(zero) }, |x| x.scale(0.25)).unwrap();
        ensure!(same.value().data() == &o[..], "zero effects changed the feature");
    }
    // the shared decoder maps zero effects to a zero correction
    let model = common::tiny_model(9);
    let g = Graph::new(model.params());
    let cx = Ctx::new(&g);
    let seq = common::random_sequence(6, 3);
    let pass = VideoPass::new(&model, &cx, &seq, 5);
    let o_m = pass.with_mask(&[2]).row(5);
    let zero = cx.c(Mat::zeros(1, model.dim()));
    let same = refine_masked_feature(&model, &cx, o_m, &EffectPair { f_comp: Some(zero), f_rem: Some(zero) }).unwrap();
    ensure!(same.value().data() == o_m.value().data(), "model refinement with zero effects");
    let gate = model.counterfactual_gate(&cx, zero);
    ensure!(gate.value().data().iter().all(|&x| x == 0.0), "zero difference gave a non-zero removal vector");
    Ok("identity and linearity exact; zero difference removes nothing".into())
}

fn complexity_contract() -> Outcome {
    let model = common::tiny_model(0);
    let inf = Inferencer::new(&model, InferenceOptions::default());
    let mut lines = Vec::new();
    for n in 4..=11 {
        let seq = common::random_sequence(n, n as u64);
        let fast = inf.infer_complete_graph(&seq).unwrap();
        let oracle = inf.infer_complete_graph_regressive(&seq).unwrap();
        ensure!(fast.budget.masked == n - 1, "n={n}: non-regressive masked passes {}", fast.budget.masked);
        let prefix: usize = (1..n).map(|j| inf.infer_chain(&prefix_of(&seq, j + 1)).unwrap().budget.masked).sum();
        ensure!(oracle.budget.masked == prefix, "n={n}: regressive {} vs prefix sum {prefix}", oracle.budget.masked);
        let extra = (n - 1) * (n - 2) / 2;
        ensure!(regressive_extra_passes(n) == extra && oracle.budget.masked - fast.budget.masked == extra, "n={n}: extra passes");
        lines.push(format!("{n}:{}/{}", fast.budget.masked, oracle.budget.masked));
    }
    Ok(format!("masked passes linear/regressive {}", lines.join(" ")))
}

fn prefix_of(seq: &EventSequence, len: usize) -> EventSequence {
    let complete = seq.complete_labels.as_ref().unwrap();
    let items = complete.items()[..len - 1].to_vec();
    EventSequence {
        video_id: seq.video_id.clone(),
        events: seq.events[..len].to_vec(),
        chain_labels: items.last().unwrap().clone(),
        complete_labels: Some(CompleteCausalityList::new(items).unwrap()),
    }
}

fn chain_graph_consistency() -> Outcome {
    let world = SyntheticWorldConfig { feature_dim: common::FEATURE_DIM, latent_dim: 4, frames: common::FRAMES, ..SyntheticWorldConfig::default() };
    let seqs = common::corpus(&world, Split::Test, 100);
    let model = common::tiny_model(21);
    let inf = Inferencer::new(&model, InferenceOptions::default());
    for s in &seqs {
        let chain = inf.infer_chain(s).unwrap();
        let graph = inf.infer_complete_graph(s).unwrap();
        let n = s.n_events();
        let row: Vec<u64> = graph.probabilities.iter().filter(|p| p.1 == n - 1).map(|p| p.2.to_bits()).collect();
        let want: Vec<u64> = chain.logits.iter().map(|l| l.probability().to_bits()).collect();
        ensure!(row == want, "{}: last row differs from the chain", s.video_id);
        ensure!(graph.last_row(0.5) == chain.labels, "{}: labels differ", s.video_id);
    }
    Ok("100 videos bit-exact".into())
}

/// Toy preset for planted-graph recovery.
fn recovery_config(refinement: bool) -> TrainConfig {
    // picked on test videos 100..300, which this check never scores
    TrainConfig { model_dim: 32, n_heads: 4, feature_dim: 64, frames: 8, lr: 3e-3, weight_decay: 0.1, batch_size: 8, epochs: 60, refinement, ..TrainConfig::default() }
}

struct Scored {
    report: MetricsReport,
    stress: StressResult,
}

fn score(model: &Vgcm, refinement: RefinementConfig, test: &[EventSequence], stress: &[EventSequence]) -> Scored {
    let inf = Inferencer::new(model, InferenceOptions { threshold: 0.5, refinement });
    let run = |seqs: &[EventSequence]| {
        let graphs: Vec<_> = seqs.iter().map(|s| inf.infer_complete_graph(s).unwrap()).collect();
        compute_chain_metrics(seqs.iter().zip(graphs).map(|(s, g)| VideoPrediction {
            video_id: &s.video_id,
            chain_pred: g.last_row(0.5),
            chain_truth: &s.chain_labels,
            graph_pred: Some(g.graph),
            graph_truth: s.graph(),
        }))
        .unwrap()
    };
    let report = run(test);
    let stress_report = run(stress);
    let stress = StressResult::new(&stress_report, &report).unwrap();
    Scored { report, stress }
}

fn planted_graph_recovery() -> Outcome {
    let world = SyntheticWorldConfig {
        n_videos: 500,
        n_test_videos: 100,
        cause_strength: 2.0,
        noise_std: 0.1,
        confounder_rate: 0.2,
        illusory_rate: 0.2,
        ..SyntheticWorldConfig::default()
    };
    let train = common::corpus(&world, Split::Train, 500);
    let test = common::corpus(&world, Split::Test, 100);
    let stress = common::corpus(&world, Split::Stress, 100);

    let mut trained = BTreeMap::new();
    for refinement in [true, false] {
        let cfg = recovery_config(refinement);
        let start = Instant::now();
        let out = Trainer::new(cfg.clone()).train(&train, &[]).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        ensure!(elapsed <= Duration::from_secs(30 * 60), "training took {elapsed:?}");
        trained.insert(refinement, (score(&out.model, cfg.refinement_config(), &test, &stress), elapsed));
    }
    let (full, full_time) = &trained[&true];
    let (ablated, _) = &trained[&false];
    let acc = full.report.acc().unwrap();
    let shd = full.report.shd_mean().unwrap();
    let baseline_shd = |kind| chain_report(&test, kind).shd_mean().unwrap();
    let (shd_yes, shd_no) = (baseline_shd(BaselineKind::AllCausal), baseline_shd(BaselineKind::AllNonCausal));
    let (d_full, d_ablated) = (full.stress.change.unwrap(), ablated.stress.change.unwrap());
    let detail = format!(
        "Acc {acc:.2} in {:.0}s, SHD {shd:.2} vs baselines {shd_yes:.2}/{shd_no:.2}, stress change {d_full:+.2} vs ablated {d_ablated:+.2} (stress Acc {:.2} vs {:.2}, ablated Acc {:.2})",
        full_time.as_secs_f64(),
        full.stress.accuracy.unwrap(),
        ablated.stress.accuracy.unwrap(),
        ablated.report.acc().unwrap()
    );
    ensure!(acc >= 85.0, "chain accuracy below 85: {detail}");
    ensure!(shd < shd_yes && shd < shd_no, "SHD not below both baselines: {detail}");
    ensure!(d_ablated.abs() > d_full.abs(), "ablation does not widen the stress change: {detail}");
    Ok(detail)
}

fn or_label_exhaustive() -> Outcome {
    let mut subsets = 0usize;
    for n in 2..=6 {
        let p = n - 1;
        for label_bits in 0u32..1 << p {
            let labels: Vec<bool> = (0..p).map(|i| label_bits >> i & 1 == 1).collect();
            for subset in 1u32..1 << p {
                let indices: Vec<usize> = (0..p).filter(|i| subset >> i & 1 == 1).collect();
                let want = label_bits & subset != 0;
                ensure!(combined_label(&labels, &indices) == want, "n={n} labels {label_bits:b} subset {subset:b}");
                subsets += 1;
            }
            // the sampler reports the OR of whatever it masked
            let seq = label_only(format!("n{n}"), labels.clone());
            let schedule = ContextMaskSchedule { multi_mask_prob: 0.5, min_count: 2, max_count: p.max(2), seed: 0 };
            let mut rng = ChaCha8Rng::seed_from_u64(u64::from(label_bits));
            for _ in 0..64 {
                let (spec, label) = sample_mask(&seq, &schedule, &mut rng);
                ensure!(spec.indices.iter().all(|&i| i < p) && spec.indices.contains(&spec.anchor), "bad mask {spec:?}");
                ensure!(label == spec.indices.iter().any(|&i| labels[i]), "sampled label is not the OR for {spec:?}");
            }
        }
    }
    Ok(format!("{subsets} (labels, subset) combinations"))
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let world = SyntheticWorldConfig { seed: 7, ..common::tiny_world() };
    let mut trees = Vec::new();
    for run in 0..2 {
        let root = tmp.path().join(format!("run{run}"));
        let corpus = root.join("corpus");
        write_corpus(&world, &corpus).map_err(|e| e.to_string())?;
        let train = vgcm::dataset::attach_features(
            &vgcm::dataset::load_annotations(&corpus.join("train.json")).unwrap(),
            &vgcm::dataset::InMemoryFeatures::from_records(&vgcm::dataset::load_annotations(&corpus.join("train.json")).unwrap(), &corpus).unwrap(),
        )
        .unwrap();
        let test = generate_split(&world, Split::Test, world.n_test_videos).iter().map(|v| v.to_sequence()).collect::<Vec<_>>();
        let out = Trainer::new(common::tiny_train_config()).with_output(root.join("train")).train(&train, &test).map_err(|e| e.to_string())?;
        let inf = Inferencer::new(&out.model, InferenceOptions::default());
        let mut eval_lines = String::new();
        for s in &test {
            let g = inf.infer_complete_graph(s).unwrap();
            let r = inf.infer_complete_graph_regressive(s).unwrap();
            std::fs::write(root.join(format!("{}.json", s.video_id)), graph_to_json(&g)).unwrap();
            std::fs::write(root.join(format!("{}.dot", s.video_id)), graph_to_dot(&r)).unwrap();
            eval_lines.push_str(&format!("{:?}\n", g.probabilities));
        }
        let report = score(&out.model, RefinementConfig::default(), &test, &common::corpus(&world, Split::Stress, 3));
        eval_lines.push_str(&vgcm::eval::report_to_json(&report.report).unwrap());
        std::fs::write(root.join("eval.txt"), eval_lines).unwrap();
        trees.push(tree(&root));
    }
    ensure!(trees[0] == trees[1], "outputs differ between runs");
    Ok(format!("{} files byte-identical across two runs", trees[0].len()))
}
