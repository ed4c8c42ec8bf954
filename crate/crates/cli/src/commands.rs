use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use tgnv2_core::eval::{
    evaluate, machine_predictor, EvalReport, MovingAverageLabels, MovingAverageMessages, PersistentLabels,
    PipelinePredictor, Predictor, UniformRandom,
};
use tgnv2_core::events::write_labels_csv;
use tgnv2_core::exact::{ExactMachine, ExactMachineConfig};
use tgnv2_core::expressivity::{
    assert_tgn_collapse, assert_tgnv2_separates, sample_counterexample, write_verdicts_csv, VerdictRow,
};
use tgnv2_core::learn::{load_checkpoint, save_checkpoint, write_trace_csv, LearnableModel, ModelConfig, TrainConfig};
use tgnv2_core::pipeline::MessageKind;
use tgnv2_core::synthetic::{generate_synthetic, SyntheticSpec};
use tgnv2_core::verify::{run_trial, Statistic, ORACLE_TOL};

use crate::settings::{data_keys, load_dataset, opt, Common, Dataset, Settings};

fn seed_mix(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(base ^ 0x9e37_79b9_7f4a_7c15, |acc, p| acc.wrapping_mul(0x100_0000_01b3).wrapping_add(*p))
}

#[derive(Debug, Args)]
pub struct VerifyExactArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of nodes
    #[arg(long)]
    pub n: Option<usize>,
    /// Order, or a comma-separated list of orders
    #[arg(long)]
    pub k: Option<String>,
    /// Events per stream
    #[arg(long)]
    pub events: Option<usize>,
    /// Random streams per order and statistic
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ma, persistent, ar or all
    #[arg(long)]
    pub statistic: Option<String>,
}

pub fn verify_exact(a: &VerifyExactArgs) -> Result<bool> {
    let s = Settings::resolve(
        &a.common,
        vec![
            ("n", opt(&a.n)),
            ("k", a.k.clone()),
            ("events", opt(&a.events)),
            ("trials", opt(&a.trials)),
            ("seed", opt(&a.seed)),
            ("statistic", a.statistic.clone()),
        ],
        &["n", "k", "events", "trials", "seed", "statistic"],
    )?;
    let n: usize = s.cfg.parse_or("n", 8)?;
    let ks: Vec<usize> = s.cfg.parse_list("k")?.unwrap_or_else(|| vec![5]);
    let events: usize = s.cfg.parse_or("events", 2000)?;
    let trials: usize = s.cfg.parse_or("trials", 20)?;
    let seed: u64 = s.cfg.parse_or("seed", 0)?;
    let stats = Statistic::parse(s.cfg.get("statistic").unwrap_or("all"))?;
    if ks.is_empty() || ks.contains(&0) {
        bail!("orders must be positive");
    }

    let mut w = csv::Writer::from_writer(s.create("verify_exact.csv")?);
    w.write_record(["trial", "statistic", "n", "k", "events", "max_error", "pass"])?;
    let (mut worst, mut runs, mut failures) = (0.0f64, 0usize, 0usize);
    for trial in 0..trials {
        for &k in &ks {
            for &stat in &stats {
                // persistent ignores k; run it once per trial
                if stat == Statistic::Persistent && k != ks[0] {
                    continue;
                }
                let r = run_trial(trial, seed_mix(seed, &[trial as u64, k as u64]), stat, n, k, events)?;
                w.write_record([
                    r.trial.to_string(),
                    stat.as_str().to_string(),
                    r.n.to_string(),
                    r.k.to_string(),
                    r.events.to_string(),
                    format!("{:e}", r.max_error),
                    r.pass().to_string(),
                ])?;
                worst = worst.max(r.max_error);
                runs += 1;
                failures += usize::from(!r.pass());
            }
        }
    }
    w.flush()?;
    let pass = failures == 0 && runs > 0;
    s.report(json!({
        "command": "verify-exact",
        "runs": runs,
        "failures": failures,
        "max_error": worst,
        "tolerance": ORACLE_TOL,
        "pass": pass,
        "csv": s.path("verify_exact.csv").display().to_string(),
    }));
    Ok(pass)
}

#[derive(Debug, Args)]
pub struct CounterexampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Randomly initialized TGN models
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Counterexample pairs per model
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Order of the tail statistic
    #[arg(long)]
    pub k: Option<usize>,
    /// Longest alpha / beta sequence
    #[arg(long)]
    pub max_len: Option<usize>,
    /// TGN memory and embedding width
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn counterexample(a: &CounterexampleArgs) -> Result<bool> {
    let s = Settings::resolve(
        &a.common,
        vec![
            ("seeds", opt(&a.seeds)),
            ("pairs", opt(&a.pairs)),
            ("k", opt(&a.k)),
            ("max_len", opt(&a.max_len)),
            ("hidden", opt(&a.hidden)),
            ("seed", opt(&a.seed)),
        ],
        &["seeds", "pairs", "k", "max_len", "hidden", "seed"],
    )?;
    let seeds: usize = s.cfg.parse_or("seeds", 20)?;
    let pairs: usize = s.cfg.parse_or("pairs", 10)?;
    let k: usize = s.cfg.parse_or("k", 3)?;
    let max_len: usize = s.cfg.parse_or("max_len", 8)?;
    let hidden: usize = s.cfg.parse_or("hidden", 8)?;
    let seed: u64 = s.cfg.parse_or("seed", 0)?;

    let samples = (0..pairs)
        .map(|p| sample_counterexample(seed_mix(seed, &[1, p as u64]), k, max_len))
        .collect::<tgnv2_core::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut gaps = csv::Writer::from_writer(s.create("counterexample_gaps.csv")?);
    gaps.write_record(["formulation", "pair", "output_gap", "memory_gap", "oracle_error"])?;

    for m in 0..seeds {
        let model = LearnableModel::new(
            MessageKind::Tgn,
            3,
            1,
            ModelConfig {
                hidden,
                seed: seed_mix(seed, &[2, m as u64]),
                ..ModelConfig::default()
            },
        )?;
        let name = format!("tgn-{m}");
        for (p, pair) in samples.iter().enumerate() {
            let v = assert_tgn_collapse(&model, pair)?;
            gaps.write_record([
                name.clone(),
                p.to_string(),
                format!("{:e}", v.output_gap.max(v.embedding_gap)),
                format!("{:e}", v.memory_gap),
                "-".into(),
            ])?;
            rows.push(VerdictRow {
                formulation: name.clone(),
                pair: p,
                collapse: Some(v.pass),
                separation: None,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed_mix(seed, &[3]));
    let ar_weights: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let machines = [
        ("tgnv2-exact-ma", ExactMachine::new(ExactMachineConfig::moving_average(3, k))?),
        ("tgnv2-exact-ar", ExactMachine::new(ExactMachineConfig::autoregressive(3, ar_weights))?),
    ];
    for (name, machine) in &machines {
        for (p, pair) in samples.iter().enumerate() {
            let v = assert_tgnv2_separates(machine, pair)?;
            gaps.write_record([
                name.to_string(),
                p.to_string(),
                "-".into(),
                "-".into(),
                format!("{:e}", v.oracle_error),
            ])?;
            rows.push(VerdictRow {
                formulation: name.to_string(),
                pair: p,
                collapse: None,
                separation: Some(v.pass),
            });
        }
    }
    gaps.flush()?;
    write_verdicts_csv(&rows, s.create("verdicts.csv")?)?;

    let failed = rows
        .iter()
        .filter(|r| r.collapse == Some(false) || r.separation == Some(false))
        .count();
    if !s.json {
        println!("{:<18} {:>4}  {:<8} {:<10}", "formulation", "pair", "collapse", "separation");
        for r in &rows {
            let cell = |v: Option<bool>| match v {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "-",
            };
            println!(
                "{:<18} {:>4}  {:<8} {:<10}",
                r.formulation,
                r.pair,
                cell(r.collapse),
                cell(r.separation)
            );
        }
    }
    let pass = failed == 0 && !rows.is_empty();
    s.report(json!({
        "command": "counterexample",
        "rows": rows.len(),
        "failures": failed,
        "pass": pass,
        "csv": s.path("verdicts.csv").display().to_string(),
    }));
    Ok(pass)
}

pub const HEURISTICS: [&str; 4] = ["persistent-labels", "moving-avg-labels", "moving-avg-messages", "random"];

fn build_predictor(
    method: &str,
    k: usize,
    seed: u64,
    num_nodes: usize,
    checkpoint: Option<&str>,
    batch_size: usize,
) -> Result<Box<dyn Predictor>> {
    Ok(match method {
        "persistent-labels" => Box::new(PersistentLabels::new(num_nodes)),
        "moving-avg-labels" => Box::new(MovingAverageLabels::new(num_nodes, k)),
        "moving-avg-messages" => Box::new(MovingAverageMessages::new(num_nodes, k)),
        "random" => Box::new(UniformRandom::new(seed)),
        "exact-ma" => Box::new(machine_predictor(
            ExactMachine::new(ExactMachineConfig::moving_average(num_nodes, k))?,
            num_nodes,
        )),
        "exact-persistent" => Box::new(machine_predictor(
            ExactMachine::new(ExactMachineConfig::persistent(num_nodes))?,
            num_nodes,
        )),
        "model" => {
            let dir = checkpoint.context("method `model` needs --checkpoint")?;
            let model = load_checkpoint(std::path::Path::new(dir))?;
            if model.num_nodes() != num_nodes {
                bail!(
                    "checkpoint was trained on {} nodes, dataset has {num_nodes}",
                    model.num_nodes()
                );
            }
            let label = format!("model({})", model.kind());
            Box::new(PipelinePredictor::new(model, num_nodes, batch_size, label))
        }
        other => bail!(
            "unknown method `{other}` (expected one of {}, exact-ma, exact-persistent, model)",
            HEURISTICS.join(", ")
        ),
    })
}

fn run_eval(data: &Dataset, predictor: &mut dyn Predictor, split: &str) -> Result<EvalReport> {
    let targets = data.targets(split)?;
    if targets.is_empty() {
        bail!("split `{split}` has no labelled windows");
    }
    Ok(evaluate(predictor, &data.stream, &data.labels, &targets)?)
}

fn eval_record(command: &str, split: &str, period: f64, report: &EvalReport, csv: PathBuf) -> serde_json::Value {
    json!({
        "command": command,
        "period": period,
        "predictor": report.predictor,
        "split": split,
        "windows": report.windows.len(),
        "queries": report.results.len(),
        "ndcg@10_mean": report.mean,
        "ndcg@10_std": report.std,
        "csv": csv.display().to_string(),
    })
}

#[derive(Debug, Args)]
pub struct HeuristicsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Events CSV
    #[arg(long)]
    pub data: Option<String>,
    /// Comma-separated methods, or `all`
    #[arg(long)]
    pub method: Option<String>,
    /// Moving-average order
    #[arg(long)]
    pub k: Option<usize>,
    /// Label window length (default: the span split into 20 windows)
    #[arg(long)]
    pub period: Option<f64>,
    /// all, train, val or test
    #[arg(long)]
    pub split: Option<String>,
    /// Seed for the random baseline
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn heuristics(a: &HeuristicsArgs) -> Result<bool> {
    let mut known = data_keys();
    known.extend(["method", "k", "seed"]);
    let s = Settings::resolve(
        &a.common,
        vec![
            ("data", a.data.clone()),
            ("method", a.method.clone()),
            ("k", opt(&a.k)),
            ("period", opt(&a.period)),
            ("split", a.split.clone()),
            ("seed", opt(&a.seed)),
        ],
        &known,
    )?;
    let data = load_dataset(&s.cfg)?;
    let k: usize = s.cfg.parse_or("k", 3)?;
    let seed: u64 = s.cfg.parse_or("seed", 0)?;
    let split = s.cfg.get("split").unwrap_or("test").to_string();
    let methods: Vec<String> = match s.cfg.get("method").unwrap_or("all") {
        "all" => HEURISTICS.iter().map(|m| m.to_string()).collect(),
        list => list.split(',').map(|m| m.trim().to_string()).collect(),
    };
    let mut ok = true;
    for method in &methods {
        if !HEURISTICS.contains(&method.as_str()) {
            bail!("`{method}` is not a heuristic (expected one of {})", HEURISTICS.join(", "));
        }
        let mut p = build_predictor(method, k, seed, data.stream.num_nodes(), None, 1)?;
        let report = run_eval(&data, p.as_mut(), &split)?;
        let name = format!("heuristics_{method}.csv");
        report.write_windows_csv(s.create(&name)?)?;
        ok &= report.mean.is_finite();
        s.report(eval_record("heuristics", &split, data.period, &report, s.path(&name)));
    }
    Ok(ok)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Events CSV
    #[arg(long)]
    pub data: Option<String>,
    /// A heuristic, exact-ma, exact-persistent or model
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint directory for `--method model`
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Events per memory update when replaying a model
    #[arg(long)]
    pub batch_size: Option<usize>,
}

pub fn eval(a: &EvalArgs) -> Result<bool> {
    let mut known = data_keys();
    known.extend(["method", "k", "seed", "checkpoint", "batch_size"]);
    let s = Settings::resolve(
        &a.common,
        vec![
            ("data", a.data.clone()),
            ("method", a.method.clone()),
            ("k", opt(&a.k)),
            ("period", opt(&a.period)),
            ("split", a.split.clone()),
            ("seed", opt(&a.seed)),
            ("checkpoint", a.checkpoint.clone()),
            ("batch_size", opt(&a.batch_size)),
        ],
        &known,
    )?;
    let data = load_dataset(&s.cfg)?;
    let method = s.cfg.get("method").context("no method given; pass --method")?;
    let k: usize = s.cfg.parse_or("k", 3)?;
    let seed: u64 = s.cfg.parse_or("seed", 0)?;
    let batch_size: usize = s.cfg.parse_or("batch_size", 200)?;
    let split = s.cfg.get("split").unwrap_or("test").to_string();
    let mut p = build_predictor(
        method,
        k,
        seed,
        data.stream.num_nodes(),
        s.cfg.get("checkpoint"),
        batch_size,
    )?;
    let report = run_eval(&data, p.as_mut(), &split)?;
    report.write_windows_csv(s.create("eval_windows.csv")?)?;
    s.report(eval_record("eval", &split, data.period, &report, s.path("eval_windows.csv")));
    Ok(report.mean.is_finite())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Events CSV
    #[arg(long)]
    pub data: Option<String>,
    /// tgn or tgnv2
    #[arg(long)]
    pub message_fn: Option<String>,
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Neighbors sampled per node
    #[arg(long)]
    pub x: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// cosine or zero
    #[arg(long)]
    pub node_encoder: Option<String>,
}

pub fn train(a: &TrainArgs) -> Result<bool> {
    let mut known = data_keys();
    known.push("message_fn");
    known.extend(TrainConfig::KEYS);
    let s = Settings::resolve(
        &a.common,
        vec![
            ("data", a.data.clone()),
            ("message_fn", a.message_fn.clone()),
            ("period", opt(&a.period)),
            ("epochs", opt(&a.epochs)),
            ("learning_rate", opt(&a.learning_rate)),
            ("batch_size", opt(&a.batch_size)),
            ("hidden", opt(&a.hidden)),
            ("heads", opt(&a.heads)),
            ("x", opt(&a.x)),
            ("dropout", opt(&a.dropout)),
            ("seed", opt(&a.seed)),
            ("node_encoder", a.node_encoder.clone()),
        ],
        &known,
    )?;
    let data = load_dataset(&s.cfg)?;
    let kind: MessageKind = s.cfg.get("message_fn").unwrap_or("tgnv2").parse()?;
    if kind == MessageKind::Exact {
        bail!("the exact formulation has no trainable parameters; use verify-exact or eval");
    }
    let config = TrainConfig::from_config(&s.cfg)?;
    let out = tgnv2_core::learn::train(&data.stream, &data.split, kind, &config)?;
    write_trace_csv(&out.trace, s.create("trace.csv")?)?;
    save_checkpoint(&out.model, &s.path("checkpoint"))?;
    s.report(json!({
        "command": "train",
        "message_fn": kind.as_str(),
        "epochs": config.epochs,
        "best_epoch": out.best_epoch,
        "best_val_ndcg@10": out.best_val,
        "test_ndcg@10_at_best": out.test_at_best,
        "trace": s.path("trace.csv").display().to_string(),
        "checkpoint": s.path("checkpoint").display().to_string(),
    }));
    Ok(out.trace.iter().all(|r| r.ndcg.is_finite() && r.loss.is_finite()))
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub num_nodes: Option<usize>,
    #[arg(long)]
    pub num_events: Option<usize>,
    /// constant, pair-means, drifting-mean or ar
    #[arg(long)]
    pub process: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Destinations per source
    #[arg(long)]
    pub fanout: Option<usize>,
    #[arg(long)]
    pub time_step: Option<f64>,
    #[arg(long)]
    pub label_period: Option<f64>,
    #[arg(long)]
    pub value: Option<f64>,
    #[arg(long)]
    pub low: Option<f64>,
    #[arg(long)]
    pub high: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Comma-separated AR weights, newest first
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub mean: Option<f64>,
}

pub fn generate(a: &GenerateArgs) -> Result<bool> {
    let s = Settings::resolve(
        &a.common,
        vec![
            ("num_nodes", opt(&a.num_nodes)),
            ("num_events", opt(&a.num_events)),
            ("process", a.process.clone()),
            ("seed", opt(&a.seed)),
            ("fanout", opt(&a.fanout)),
            ("time_step", opt(&a.time_step)),
            ("label_period", opt(&a.label_period)),
            ("value", opt(&a.value)),
            ("low", opt(&a.low)),
            ("high", opt(&a.high)),
            ("noise", opt(&a.noise)),
            ("step", opt(&a.step)),
            ("weights", a.weights.clone()),
            ("mean", opt(&a.mean)),
        ],
        &SyntheticSpec::KEYS,
    )?;
    let spec = SyntheticSpec::from_config(&s.cfg)?;
    let data = generate_synthetic(&spec)?;
    data.stream.write_csv(s.create("events.csv")?)?;
    write_labels_csv(&data.labels, data.stream.registry(), s.create("labels.csv")?)?;
    s.report(json!({
        "command": "generate",
        "events": data.stream.len(),
        "nodes": data.stream.num_nodes(),
        "labels": data.labels.len(),
        "label_period": spec.label_period,
        "csv": s.path("events.csv").display().to_string(),
    }));
    Ok(true)
}
