//! Benchmarks live in `benches/`; run them with `cargo bench -p itd-bench`.
