//! Criterion benchmarks for stackcast live in `benches/`.
