//! Benchmark-only crate; the timings live in `benches/`.
