//! Criterion benchmarks for the mesh hot paths; see `benches/`.
