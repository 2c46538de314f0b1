//! Criterion benchmarks for the quadfeat kernels live in `benches/`.
