//! Criterion benchmarks for the audit primitives; see `benches/`.
