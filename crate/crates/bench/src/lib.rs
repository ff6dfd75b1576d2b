//! Criterion benchmarks for the learning stack; see `benches/learning.rs`.
