use std::collections::HashMap;

use tgnv2_core::eval::{
    evaluate, machine_predictor, ndcg_at_k, CausalityGuard, MovingAverageMessages, PersistentLabels,
    Predictor, UniformRandom,
};
use tgnv2_core::events::{Event, EventStream, NodeIndex};
use tgnv2_core::exact::{exact_readout, ExactMachine, ExactMachineConfig};
use tgnv2_core::pipeline::{observe_batch, Stages, TemporalState};
use tgnv2_core::synthetic::{generate_synthetic, SyntheticSpec, ValueProcess};

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn dcg(order: &[usize], rel: &[f64], k: usize) -> f64 {
    order
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &d)| rel[d] / ((i + 2) as f64).log2())
        .sum()
}

/// Ideal DCG as the maximum over all orders; the scored order is the
/// lexicographically first permutation sorted by descending score.
fn oracle_ndcg(scores: &[f64], rel: &[f64], k: usize) -> f64 {
    let idx: Vec<usize> = (0..scores.len()).collect();
    let perms = permutations(&idx);
    let ideal = perms.iter().map(|p| dcg(p, rel, k)).fold(0.0, f64::max);
    if ideal == 0.0 {
        return 0.0;
    }
    let ranked = perms
        .iter()
        .find(|p| p.windows(2).all(|w| scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1])))
        .unwrap();
    dcg(ranked, rel, k) / ideal
}

#[test]
fn ndcg_matches_permutation_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let m = rng.random_range(1..=6);
        let k = rng.random_range(1..=10);
        // coarse values force ties in both vectors
        let scores: Vec<f64> = (0..m).map(|_| rng.random_range(0..4) as f64 * 0.5).collect();
        let rel: Vec<f64> = (0..m).map(|_| rng.random_range(0..4) as f64).collect();
        let got = ndcg_at_k(&scores, &rel, k).unwrap();
        let want = oracle_ndcg(&scores, &rel, k);
        assert!((got - want).abs() <= 1e-12, "{scores:?} {rel:?} k={k}: {got} vs {want}");
    }
}

#[test]
fn ndcg_derived_example() {
    let v = ndcg_at_k(&[0.1, 0.9], &[1.0, 0.0], 10).unwrap();
    assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
    assert!(ndcg_at_k(&[1.0], &[1.0, 2.0], 10).is_err());
}

fn pair_means(seed: u64, noise: f64) -> tgnv2_core::synthetic::SyntheticData {
    generate_synthetic(&SyntheticSpec {
        num_nodes: 12,
        num_events: 1500,
        fanout: 4,
        label_period: 50.0,
        seed,
        process: ValueProcess::PairMeans {
            low: 1.0,
            high: 10.0,
            noise,
        },
        ..SyntheticSpec::default()
    })
    .unwrap()
}

#[test]
fn evaluation_is_causal() {
    let data = pair_means(3, 1.0);
    let full = evaluate(
        &mut CausalityGuard::new(MovingAverageMessages::new(12, 4)),
        &data.stream,
        &data.labels,
        &data.labels,
    )
    .unwrap();
    for (label, result) in data.labels.iter().zip(&full.results) {
        let prefix = EventStream::new(
            data.stream.prefix_before(label.window_start).to_vec(),
            data.stream.registry().clone(),
            data.stream.feature_names().to_vec(),
        )
        .unwrap();
        let mut p = MovingAverageMessages::new(12, 4);
        p.observe_events(prefix.events()).unwrap();
        let scores = p.predict(label.source, label.window_start, 12).unwrap();
        assert_eq!(scores, result.scores);
    }
}

#[test]
fn persistent_forecast_wins_on_a_stationary_world() {
    let events: Vec<Event> = (0..400)
        .map(|i| {
            let src = i % 4;
            Event::scalar(src, (src + 1) % 4 + 4, i as f64, 1.0)
        })
        .collect();
    let stream = EventStream::from_indexed(events, 8).unwrap();
    let labels = tgnv2_core::events::compute_affinity_labels(&stream, 40.0, false).unwrap();
    let targets = &labels[8..];
    let persistent = evaluate(&mut PersistentLabels::new(8), &stream, &labels, targets).unwrap();
    assert_eq!(persistent.mean, 1.0);
    let random = evaluate(&mut UniformRandom::new(0), &stream, &labels, targets).unwrap();
    assert!(random.mean < persistent.mean);
}

#[test]
fn random_scores_trail_on_one_relevant_of_a_hundred() {
    let mut rel = vec![0.0; 100];
    rel[37] = 1.0;
    let mut p = UniformRandom::new(5);
    let mean: f64 = (0..500)
        .map(|_| ndcg_at_k(&p.predict(NodeIndex::new(0), 0.0, 100).unwrap(), &rel, 10).unwrap())
        .sum::<f64>()
        / 500.0;
    let mut perfect = vec![0.0; 100];
    perfect[37] = 1.0;
    assert_eq!(ndcg_at_k(&perfect, &rel, 10).unwrap(), 1.0);
    assert!(mean < 0.2, "{mean}");
}

#[test]
fn moving_average_machine_beats_persistent_on_noisy_pair_means() {
    for seed in 0..3 {
        let data = pair_means(seed, 3.0);
        let ma = ExactMachine::new(ExactMachineConfig::moving_average(12, 8)).unwrap();
        let last = ExactMachine::new(ExactMachineConfig::persistent(12)).unwrap();
        let score = |m: ExactMachine| {
            evaluate(&mut machine_predictor(m, 12), &data.stream, &data.labels, &data.labels)
                .unwrap()
                .mean
        };
        let (a, b) = (score(ma), score(last));
        assert!(a > b, "seed {seed}: ma {a} persistent {b}");
    }
}

#[test]
fn heuristic_and_machine_reports_agree() {
    let data = pair_means(7, 1.0);
    let machine = ExactMachine::new(ExactMachineConfig::moving_average(12, 5)).unwrap();
    let a = evaluate(&mut machine_predictor(machine, 12), &data.stream, &data.labels, &data.labels).unwrap();
    let b = evaluate(&mut MovingAverageMessages::new(12, 5), &data.stream, &data.labels, &data.labels).unwrap();
    assert_eq!(a.results.len(), b.results.len());
    for (x, y) in a.results.iter().zip(&b.results) {
        for (s, t) in x.scores.iter().zip(&y.scores) {
            assert!((s - t).abs() <= 1e-9);
        }
    }
    assert!((a.mean - b.mean).abs() <= 1e-9);
}

/// Mean squared error of each machine's readout as a forecast of the next
/// value on the same pair.
fn one_step_errors(stream: &EventStream, machines: &[ExactMachine]) -> Vec<f64> {
    let n = stream.num_nodes();
    machines
        .iter()
        .map(|m| {
            let mut state = TemporalState::new(n, m.memory_dim());
            let mut seen: HashMap<(NodeIndex, NodeIndex), usize> = HashMap::new();
            let (mut total, mut count) = (0.0, 0);
            for ev in stream.events() {
                let c = seen.entry((ev.src, ev.dst)).or_default();
                if *c >= m.k() {
                    let pred = exact_readout(state.bank.state(ev.src).unwrap(), m).unwrap()[ev.dst.index()];
                    total += (pred - ev.amount()).powi(2);
                    count += 1;
                }
                *c += 1;
                observe_batch(m, &mut state, std::slice::from_ref(ev)).unwrap();
            }
            total / count as f64
        })
        .collect()
}

#[test]
fn ar_machine_beats_ma_on_ar_process() {
    let data = generate_synthetic(&SyntheticSpec {
        num_nodes: 6,
        num_events: 3000,
        fanout: 2,
        seed: 9,
        process: ValueProcess::Autoregressive {
            weights: vec![0.9, -0.4],
            noise: 1.0,
            mean: 0.0,
        },
        ..SyntheticSpec::default()
    })
    .unwrap();
    let ar = ExactMachine::new(ExactMachineConfig::autoregressive(6, vec![0.9, -0.4])).unwrap();
    let ma = ExactMachine::new(ExactMachineConfig::moving_average(6, 2)).unwrap();
    let err = one_step_errors(&data.stream, &[ar, ma]);
    assert!(err[0] < err[1], "{err:?}");
}

#[test]
fn constant_process_predicts_the_constant() {
    let data = generate_synthetic(&SyntheticSpec {
        num_nodes: 5,
        num_events: 400,
        fanout: 2,
        process: ValueProcess::Constant { value: 3.0 },
        ..SyntheticSpec::default()
    })
    .unwrap();
    for k in [1, 4] {
        let m = ExactMachine::new(ExactMachineConfig::moving_average(5, k)).unwrap();
        let mut state = TemporalState::new(5, m.memory_dim());
        let mut counts: HashMap<(NodeIndex, NodeIndex), usize> = HashMap::new();
        for ev in data.stream.events() {
            observe_batch(&m, &mut state, std::slice::from_ref(ev)).unwrap();
            let c = counts.entry((ev.src, ev.dst)).or_default();
            *c += 1;
            if *c >= k {
                let r = exact_readout(state.bank.state(ev.src).unwrap(), &m).unwrap();
                assert!((r[ev.dst.index()] - 3.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn same_seed_same_stream() {
    let a = pair_means(21, 0.5);
    let b = pair_means(21, 0.5);
    assert_eq!(a, b);
    assert_ne!(a.stream, pair_means(22, 0.5).stream);
}
