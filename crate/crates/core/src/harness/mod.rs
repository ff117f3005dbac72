//! Seeded multi-trial experiments on quadratic objectives, per-iteration
//! aggregation, and CSV output.

mod batch;
mod config;
mod consistency;
mod csv_out;

pub use batch::{
    aggregate, run_batch, run_batch_with, run_trial, theory_alpha, AggregateRow, BatchResult,
    Execution, TrialRecord,
};
pub use config::{
    parse_config, read_matrix_file, read_vector_file, resolve_config, Algorithm,
    ExperimentConfig, SampleSize, C_C_MATCHED_N_D, C_C_MATCHED_N_D2,
};
pub use consistency::{
    consistency_report, emit_consistency_csv, gradient_cosine, write_consistency_csv, Compared,
    ConsistencyRow,
};
pub use csv_out::{
    emit_csv, emit_theory_csv, fmt_f64, parse_aggregate_csv, write_aggregate_csv,
    write_theory_csv, AGGREGATE_HEADER,
};
