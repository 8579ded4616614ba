//! Criterion benchmarks for the core solvers; see `benches/solvers.rs`.
