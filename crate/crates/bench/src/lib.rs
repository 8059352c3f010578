//! Criterion benchmarks for `lanerisk`; see `benches/`.
