//! Criterion benchmarks for the motiongrid kernels; see `benches/`.
