//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.
//!
//! Run with `cargo test -p tgnv2-cli --test acceptance`.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tgnv2_core::eval::{evaluate, ndcg_at_k, MovingAverageMessages, UniformRandom};
use tgnv2_core::events::{chronological_split, Event, EventStream, NodeIndex, SplitRatios};
use tgnv2_core::exact::{exact_readout, ExactMachine, ExactMachineConfig};
use tgnv2_core::expressivity::{assert_tgn_collapse, run_stream, sample_counterexample};
use tgnv2_core::heuristics::{moving_average_messages, MessageHistory};
use tgnv2_core::learn::gradcheck::{
    check_attention, check_gru, check_mlp, check_node_encoder, check_time_encoder,
};
use tgnv2_core::learn::{train, LearnableModel, ModelConfig, NodeEncoderMode, TrainConfig};
use tgnv2_core::pipeline::{embed_node, observe_batch, MessageKind, Stages, TemporalState};
use tgnv2_core::synthetic::{generate_synthetic, SyntheticSpec, ValueProcess};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_stream(rng: &mut ChaCha8Rng, n: usize, count: usize) -> EventStream {
    let events = (0..count)
        .map(|i| {
            let src = rng.random_range(0..n);
            let dst = (src + rng.random_range(1..n)) % n;
            Event::scalar(src, dst, (i + 1) as f64, rng.random_range(-5.0..5.0))
        })
        .collect();
    EventStream::from_indexed(events, n).unwrap()
}

/// Largest deviation between each node's machine readout and
/// `sum_c weights[c] * (c-th newest value on the pair)`, after every event.
fn machine_vs_pairs(machine: &ExactMachine, stream: &EventStream, weights: &[f64]) -> f64 {
    let n = stream.num_nodes();
    let k = weights.len();
    let mut state = TemporalState::new(n, machine.memory_dim());
    let mut pairs: HashMap<(usize, usize), VecDeque<f64>> = HashMap::new();
    let mut worst = 0.0f64;
    for ev in stream.events() {
        observe_batch(machine, &mut state, std::slice::from_ref(ev)).unwrap();
        let q = pairs.entry((ev.src.index(), ev.dst.index())).or_default();
        q.push_front(ev.feature[0]);
        q.truncate(k);
        for u in 0..n {
            let got = exact_readout(state.bank.state(NodeIndex::new(u)).unwrap(), machine).unwrap();
            for (v, g) in got.iter().enumerate() {
                let want: f64 = pairs
                    .get(&(u, v))
                    .map_or(0.0, |q| q.iter().zip(weights).map(|(x, w)| x * w).sum());
                worst = worst.max((g - want).abs());
            }
        }
    }
    worst
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let orders = [1, 2, 3, 5];
    let mut worst = 0.0f64;
    for i in 0..20 {
        let n = rng.random_range(2..=8);
        let k = orders[i % orders.len()];
        let stream = random_stream(&mut rng, n, 2000);
        let ar: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cases = [
            (ExactMachineConfig::moving_average(n, k), vec![1.0 / k as f64; k]),
            (ExactMachineConfig::persistent(n), vec![1.0]),
            (ExactMachineConfig::autoregressive(n, ar.clone()), ar),
        ];
        for (cfg, weights) in cases {
            let machine = ExactMachine::new(cfg).unwrap();
            worst = worst.max(machine_vs_pairs(&machine, &stream, &weights));
        }
    }
    outcome(worst <= 1e-9, format!("20 streams x (ma, persistent, ar), max abs error {worst:e}"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<_> = (0..10)
        .map(|p| sample_counterexample(100 + p, 1 + p as usize % 4, 8).unwrap())
        .collect();
    let (mut collapsed, mut trials, mut worst_gap) = (0, 0, 0.0f64);
    for m in 0..20u64 {
        let hidden = [4, 6, 8, 12][rng.random_range(0..4)];
        let model = LearnableModel::new(
            MessageKind::Tgn,
            3,
            1,
            ModelConfig {
                hidden,
                heads: if hidden % 4 == 0 { 4 } else { 2 },
                seed: 1000 + m,
                ..ModelConfig::default()
            },
        )
        .unwrap();
        for pair in &pairs {
            let v = assert_tgn_collapse(&model, pair).unwrap();
            let gap = v.output_gap.max(v.embedding_gap);
            worst_gap = worst_gap.max(gap);
            trials += 1;
            collapsed += usize::from(gap <= 1e-12);
        }
    }

    let mut sep_worst = 0.0f64;
    for pair in &pairs {
        let k = pair.k;
        let mean = |s: &[f64]| s[s.len() - k..].iter().sum::<f64>() / k as f64;
        let (a, b) = (mean(&pair.alphas), mean(&pair.betas));
        let machine = ExactMachine::new(ExactMachineConfig::moving_average(3, k)).unwrap();
        let t = pair.query_time();
        for (stream, want) in [(&pair.g, [0.0, a, b]), (&pair.g_flipped, [0.0, b, a])] {
            let state = run_stream(&machine, stream, 3).unwrap();
            let out = embed_node(&machine, &state, NodeIndex::new(0), t).unwrap();
            for (o, w) in out.iter().zip(want) {
                sep_worst = sep_worst.max((o - w).abs());
            }
        }
    }
    outcome(
        collapsed == trials && sep_worst <= 1e-9,
        format!(
            "TGN collapsed {collapsed}/{trials} (max gap {worst_gap:e}); exact MA readout error {sep_worst:e}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec {
        num_nodes: 8,
        num_events: 200,
        fanout: 3,
        label_period: 20.0,
        seed: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let split = chronological_split(&data.labels, SplitRatios::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        hidden: 8,
        batch_size: 20,
        learning_rate: 0.01,
        node_encoder: NodeEncoderMode::Zero,
        seed: 3,
        ..TrainConfig::default()
    };
    let tgn = train(&data.stream, &split, MessageKind::Tgn, &cfg).unwrap();
    let v2 = train(&data.stream, &split, MessageKind::Tgnv2, &cfg).unwrap();
    let bits = |t: &[tgnv2_core::learn::TraceRow]| -> Vec<(usize, u64, u64)> {
        t.iter().map(|r| (r.epoch, r.ndcg.to_bits(), r.loss.to_bits())).collect()
    };
    let same = bits(&tgn.trace) == bits(&v2.trace);
    let epochs = tgn.trace.iter().map(|r| r.epoch).max().unwrap_or(0);
    outcome(
        same && epochs == 5,
        format!("{} trace rows over {epochs} epochs, bit-identical: {same}", tgn.trace.len()),
    )
}

fn criterion_4() -> Outcome {
    type Check = fn(u64) -> tgnv2_core::Result<tgnv2_core::learn::GradCheckReport>;
    let checks: [(&str, Check); 5] = [
        ("gru", check_gru),
        ("attention", check_attention),
        ("mlp", check_mlp),
        ("time-encoder", check_time_encoder),
        ("node-encoder", check_node_encoder),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, check) in checks {
        let worst = (0..100u64)
            .map(|seed| check(seed).unwrap().max_rel_error)
            .fold(0.0f64, f64::max);
        pass &= worst < 1e-4;
        parts.push(format!("{name} {worst:.1e}"));
    }
    outcome(pass, format!("worst relative error over 100 probes: {}", parts.join(", ")))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = rng.random_range(2..=8);
        let k = rng.random_range(1..=6);
        let stream = random_stream(&mut rng, n, 500);
        let machine = ExactMachine::new(ExactMachineConfig::moving_average(n, k)).unwrap();
        let mut state = TemporalState::new(n, machine.memory_dim());
        let mut history = MessageHistory::unbounded(n);
        history.extend(stream.events());
        let mut times: Vec<f64> = stream.events().iter().map(|e| e.time).collect();
        times.push(times.last().unwrap() + 1.0);
        let mut fed = 0;
        for t in times {
            while fed < stream.len() && stream.events()[fed].time < t {
                observe_batch(&machine, &mut state, &stream.events()[fed..fed + 1]).unwrap();
                fed += 1;
            }
            for u in 0..n {
                let u = NodeIndex::new(u);
                let h = moving_average_messages(&history, u, t, k);
                let m = exact_readout(state.bank.state(u).unwrap(), &machine).unwrap();
                for (a, b) in h.iter().zip(&m) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-9, format!("10 streams, max abs error {worst:e}"))
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..m {
        let mut next = Vec::new();
        for p in &out {
            for i in (0..m).filter(|i| !p.contains(i)) {
                let mut q = p.clone();
                q.push(i);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(1..=6);
        let k = rng.random_range(1..=10);
        let scores: Vec<f64> = (0..m).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
        let rel: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..3.0f64).floor()).collect();
        let gain = |p: &[usize]| -> f64 {
            p.iter()
                .take(k)
                .enumerate()
                .map(|(i, &d)| rel[d] / (i as f64 + 2.0).log2())
                .sum()
        };
        let perms = permutations(m);
        let ideal = perms.iter().map(|p| gain(p)).fold(0.0, f64::max);
        // ranking: descending score, ties by ascending index
        let ranked = perms
            .iter()
            .find(|p| {
                p.windows(2)
                    .all(|w| (scores[w[0]], std::cmp::Reverse(w[0])) > (scores[w[1]], std::cmp::Reverse(w[1])))
            })
            .unwrap();
        let want = if ideal == 0.0 { 0.0 } else { gain(ranked) / ideal };
        let got = ndcg_at_k(&scores, &rel, k).unwrap();
        worst = worst.max((got - want).abs());
    }
    outcome(worst <= 1e-12, format!("200 instances, max abs error {worst:e}"))
}

fn criterion_7() -> Outcome {
    let (mut v2_wins, mut ma_wins) = (0, 0);
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let data = generate_synthetic(&SyntheticSpec {
            num_nodes: 16,
            num_events: 3000,
            fanout: 4,
            label_period: 50.0,
            seed,
            process: ValueProcess::PairMeans {
                low: 1.0,
                high: 10.0,
                noise: 0.5,
            },
            ..SyntheticSpec::default()
        })
        .unwrap();
        let split = chronological_split(&data.labels, SplitRatios::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            hidden: 16,
            batch_size: 100,
            learning_rate: 0.01,
            seed,
            ..TrainConfig::default()
        };
        let tgn = train(&data.stream, &split, MessageKind::Tgn, &cfg).unwrap().test_at_best;
        let v2 = train(&data.stream, &split, MessageKind::Tgnv2, &cfg).unwrap().test_at_best;
        let n = data.stream.num_nodes();
        let ma = evaluate(&mut MovingAverageMessages::new(n, 8), &data.stream, &data.labels, &split.test)
            .unwrap()
            .mean;
        let random = evaluate(&mut UniformRandom::new(seed), &data.stream, &data.labels, &split.test)
            .unwrap()
            .mean;
        v2_wins += usize::from(v2 > tgn);
        ma_wins += usize::from(ma > random);
        rows.push(format!("seed {seed}: tgn {tgn:.3} tgnv2 {v2:.3} ma {ma:.3} random {random:.3}"));
    }
    outcome(
        v2_wins >= 2 && ma_wins == 3,
        format!("tgnv2 > tgn in {v2_wins}/3, ma > random in {ma_wins}/3 [{}]", rows.join("; ")),
    )
}

fn run_cli(args: &[&str], out: &Path) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_tgnv2"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("TGNV2_OUT_DIR")
        .output()
        .expect("run tgnv2");
    status.status.code().unwrap_or(-1)
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("gen.cfg");
    fs::write(&cfg, "num_nodes = 10\nnum_events = 600\nfanout = 3\nlabel_period = 30\nseed = 8\n").unwrap();
    let data_dir = root.path().join("data");
    if run_cli(&["generate", "--config", cfg.to_str().unwrap()], &data_dir) != 0 {
        return outcome(false, "generate failed");
    }
    let events = data_dir.join("events.csv");
    let events = events.to_str().unwrap();
    let ckpt = root.path().join("a-train").join("checkpoint");
    let ckpt = ckpt.to_str().unwrap().to_string();
    let cfg_path = cfg.to_str().unwrap().to_string();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("generate", vec!["generate", "--config", &cfg_path]),
        ("verify-exact", vec!["verify-exact", "--n", "6", "--k", "1,3", "--events", "300", "--trials", "2"]),
        ("counterexample", vec!["counterexample", "--seeds", "3", "--pairs", "4"]),
        ("heuristics", vec!["heuristics", "--data", events, "--period", "30", "--k", "4"]),
        (
            "train",
            vec!["train", "--data", events, "--period", "30", "--epochs", "2", "--hidden", "8", "--batch-size", "50"],
        ),
        ("eval", vec!["eval", "--data", events, "--period", "30", "--method", "random", "--seed", "4"]),
        (
            "eval-model",
            vec!["eval", "--data", events, "--period", "30", "--method", "model", "--checkpoint", &ckpt],
        ),
    ];
    let mut failures = Vec::new();
    for (name, args) in &commands {
        let a = root.path().join(format!("a-{name}"));
        let b = root.path().join(format!("b-{name}"));
        let (ca, cb) = (run_cli(args, &a), run_cli(args, &b));
        if ca != 0 || cb != 0 {
            failures.push(format!("{name} exited {ca}/{cb}"));
            continue;
        }
        let (fa, fb) = (files_under(&a), files_under(&b));
        if fa.is_empty() || fa != fb {
            failures.push(format!("{name} outputs differ"));
        }
    }
    let unknown = run_cli(&["generate", "--no-such-flag"], &root.path().join("x"));
    if unknown != 2 {
        failures.push(format!("unknown flag exited {unknown}"));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} invocations byte-identical across two runs", commands.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("exact machine matches brute-force statistics", criterion_1),
        ("TGN collapses, exact TGNv2 separates", criterion_2),
        ("zeroed node encoder reproduces TGN", criterion_3),
        ("gradients match finite differences", criterion_4),
        ("moving-average heuristic equals MA machine", criterion_5),
        ("NDCG matches permutation oracle", criterion_6),
        ("desk-scale ordering on pair-means data", criterion_7),
        ("CLI outputs are deterministic", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        println!(
            "criterion {} {} : {} ({:.1}s) {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            start.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
