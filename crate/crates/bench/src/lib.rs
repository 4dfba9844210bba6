//! Benchmarks for the estd3 trainer; see `benches/training.rs`.
