use proptest::prelude::*;

use tgnv2_core::eval::{ndcg_at_k, rank_by_score};
use tgnv2_core::events::{
    chronological_split, compute_affinity_labels, read_csv, CsvSchema, Event, EventStream, NodeIndex,
    SplitRatios,
};
use tgnv2_core::exact::{exact_memory_update, fast_memory_update, ExactMachine, ExactMachineConfig};
use tgnv2_core::heuristics::{moving_average_messages, MessageHistory};
use tgnv2_core::pipeline::{observe_batch, Stages, TemporalState};
use tgnv2_core::verify::{brute_force_statistic, check_against_oracle};

fn raw_events(max_nodes: usize, max_len: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
    (2..=max_nodes).prop_flat_map(move |n| {
        let ev = (0..n, 0..n - 1, -5.0..5.0f64).prop_map(|(s, d, v)| (s, if d >= s { d + 1 } else { d }, v));
        (Just(n), prop::collection::vec(ev, 1..max_len))
    })
}

fn stream_of(n: usize, raw: &[(usize, usize, f64)], gap: f64) -> EventStream {
    let events = raw
        .iter()
        .enumerate()
        .map(|(i, &(s, d, v))| Event::scalar(s, d, i as f64 * gap, v))
        .collect();
    EventStream::from_indexed(events, n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_keeps_events((n, raw) in raw_events(6, 60)) {
        let stream = stream_of(n, &raw, 0.5);
        let mut buf = Vec::new();
        stream.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        prop_assert_eq!(back.len(), stream.len());
        let name = |s: &EventStream, i: NodeIndex| s.registry().name(i).unwrap().to_string();
        for (a, b) in stream.events().iter().zip(back.events()) {
            prop_assert_eq!(name(&stream, a.src), name(&back, b.src));
            prop_assert_eq!(name(&stream, a.dst), name(&back, b.dst));
            prop_assert_eq!(a.time, b.time);
            prop_assert_eq!(&a.feature, &b.feature);
        }
    }

    #[test]
    fn labels_conserve_mass((n, raw) in raw_events(6, 80), period in 0.5..7.0f64) {
        let stream = stream_of(n, &raw, 0.25);
        let labels = compute_affinity_labels(&stream, period, false).unwrap();
        let total: f64 = labels.iter().flat_map(|l| l.affinity.iter()).sum();
        let events: f64 = stream.events().iter().map(|e| e.amount()).sum();
        prop_assert!((total - events).abs() < 1e-9);
        for l in &labels {
            let window = l.window_index;
            let inside: f64 = stream
                .events()
                .iter()
                .filter(|e| e.src == l.source && e.time >= l.window_start && e.time < l.window_end)
                .map(|e| e.amount())
                .sum();
            prop_assert!((l.affinity.iter().sum::<f64>() - inside).abs() < 1e-9, "window {}", window);
        }
        for l in compute_affinity_labels(&stream, period, true).unwrap() {
            let mass: f64 = l.affinity.iter().map(|v| v.abs()).sum();
            prop_assert!(mass == 0.0 || (mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_is_a_chronological_partition((n, raw) in raw_events(5, 120), period in 0.5..3.0f64) {
        let stream = stream_of(n, &raw, 0.25);
        let labels = compute_affinity_labels(&stream, period, false).unwrap();
        prop_assume!(!labels.is_empty());
        let split = chronological_split(&labels, SplitRatios::default()).unwrap();
        prop_assert_eq!(split.train.len() + split.val.len() + split.test.len(), labels.len());
        prop_assert!(!split.train.is_empty());
        let last = |v: &[tgnv2_core::events::AffinityLabel]| v.iter().map(|l| l.window_index).max();
        let first = |v: &[tgnv2_core::events::AffinityLabel]| v.iter().map(|l| l.window_index).min();
        if let (Some(a), Some(b)) = (last(&split.train), first(&split.val)) {
            prop_assert!(a < b);
        }
        if let (Some(a), Some(b)) = (last(&split.val), first(&split.test)) {
            prop_assert!(a < b);
        }
        if let (Some(a), Some(b)) = (last(&split.train), first(&split.test)) {
            prop_assert!(a < b);
        }
    }

    #[test]
    fn fast_update_equals_matrix_update(
        n in 1..6usize,
        k in 1..5usize,
        seed in any::<u64>(),
        e in -10.0..10.0f64,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let machine = ExactMachine::new(ExactMachineConfig::moving_average(n, k)).unwrap();
        let s: Vec<f64> = (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let j = rng.random_range(0..n);
        let a = exact_memory_update(&s, e, j, &machine).unwrap();
        let b = fast_memory_update(&s, e, j, &machine).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn exact_machine_matches_brute_force(
        (n, raw) in raw_events(5, 120),
        k in 1..5usize,
        w in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let stream = stream_of(n, &raw, 1.0);
        let machine = ExactMachine::new(ExactMachineConfig::autoregressive(n, w[..k].to_vec())).unwrap();
        let r = check_against_oracle(&machine, &stream).unwrap();
        prop_assert!(r.max_error <= 1e-9, "{:?}", r);
    }

    #[test]
    fn exact_memory_is_batch_size_independent(
        (n, raw) in raw_events(5, 80),
        k in 1..4usize,
        batch in 2..17usize,
    ) {
        let stream = stream_of(n, &raw, 1.0);
        let machine = ExactMachine::new(ExactMachineConfig::moving_average(n, k)).unwrap();
        let run = |b: usize| {
            let mut state = TemporalState::new(n, machine.memory_dim());
            for chunk in stream.events().chunks(b) {
                observe_batch(&machine, &mut state, chunk).unwrap();
            }
            state.bank.states().to_vec()
        };
        let one = run(1);
        let many = run(batch);
        for (a, b) in one.iter().zip(&many) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn moving_average_heuristic_equals_machine((n, raw) in raw_events(5, 100), k in 1..5usize) {
        let stream = stream_of(n, &raw, 1.0);
        let machine = ExactMachine::new(ExactMachineConfig::moving_average(n, k)).unwrap();
        let mut state = TemporalState::new(n, machine.memory_dim());
        let mut history = MessageHistory::unbounded(n);
        for ev in stream.events() {
            history.push(ev);
        }
        for ev in stream.events() {
            for u in 0..n {
                let node = NodeIndex::new(u);
                let h = moving_average_messages(&history, node, ev.time, k);
                let m = tgnv2_core::exact::exact_readout(state.bank.state(node).unwrap(), &machine).unwrap();
                for (a, b) in h.iter().zip(&m) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
            }
            observe_batch(&machine, &mut state, std::slice::from_ref(ev)).unwrap();
        }
    }

    #[test]
    fn ndcg_is_scale_invariant(
        scores in prop::collection::vec(-5.0..5.0f64, 1..15),
        rel_seed in any::<u64>(),
        c in 0.01..100.0f64,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rel_seed);
        let rel: Vec<f64> = scores.iter().map(|_| rng.random_range(0.0..3.0)).collect();
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        prop_assume!(rank_by_score(&scores) == rank_by_score(&scaled));
        let a = ndcg_at_k(&scores, &rel, 10).unwrap();
        let b = ndcg_at_k(&scaled, &rel, 10).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn ndcg_swap_toward_relevance_never_hurts(
        rel in prop::collection::vec(0.0..3.0f64, 2..12),
        perm_seed in any::<u64>(),
        pick in any::<(usize, usize)>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let m = rel.len();
        let mut ranks: Vec<usize> = (0..m).collect();
        ranks.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let scores: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
        let (i, j) = (pick.0 % m, pick.1 % m);
        prop_assume!(i != j);
        let (hi, lo) = if rel[i] >= rel[j] { (i, j) } else { (j, i) };
        let mut swapped = scores.clone();
        if swapped[hi] < swapped[lo] {
            swapped.swap(hi, lo);
        }
        let before = ndcg_at_k(&scores, &rel, 10).unwrap();
        let after = ndcg_at_k(&swapped, &rel, 10).unwrap();
        prop_assert!(after >= before - 1e-12, "{} -> {}", before, after);
    }
}

#[test]
fn brute_force_statistic_weights_newest_first() {
    assert_eq!(brute_force_statistic(&[1.0, 2.0], &[1.0, 0.0]), 2.0);
    assert_eq!(brute_force_statistic(&[1.0, 2.0], &[0.0, 1.0]), 1.0);
}

#[test]
fn machine_memory_dim_is_n_times_k() {
    let m = ExactMachine::new(ExactMachineConfig::moving_average(4, 3)).unwrap();
    assert_eq!(m.memory_dim(), 12);
}
