//! Criterion benchmarks for `tgnv2-core`; see `benches/`.
