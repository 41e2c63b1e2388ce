//! Criterion benchmarks for the `otmm` kernels live under `benches/`.
