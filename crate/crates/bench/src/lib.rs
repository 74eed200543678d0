//! Criterion benchmarks for the detector-tomography pipeline; see `benches/`.
