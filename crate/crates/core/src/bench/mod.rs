//! Synthetic instance families and the timing harness.

pub mod harness;
pub mod synthetic;

pub use harness::{
    median, run_benchmark, write_records_csv, BenchOutcome, BenchRecord, BenchSummary, BenchmarkSpec, CellSummary,
    Family, RuntimeRatio,
};
pub use synthetic::{
    gen_conditioned_instance, gen_uniform_instance, log_spaced_singular_values, rng_from_seed, stress_profiles,
};
