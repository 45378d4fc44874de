//! Criterion benchmarks for the convolution, neighbor search and model kernels; see `benches/`.
