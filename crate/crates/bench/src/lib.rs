//! Criterion benchmarks for `specdual`; see `benches/solver.rs`.
