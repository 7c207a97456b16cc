//! Criterion benchmarks for the graft engine live in `benches/`.
