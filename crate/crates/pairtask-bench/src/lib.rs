//! Criterion benchmarks for the pairtask pipeline; see `benches/`.
