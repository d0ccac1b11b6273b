//! Benchmark harness for the incremental learning library: synthetic and
//! on-disk datasets, the class-incremental protocol with its four methods,
//! confusion-matrix metrics, per-increment reports, and parameter sweeps.
//!
//! The `incrlearn` binary in this crate drives everything from the command
//! line; the library surface below is what its subcommands are built from.

pub mod dataset;
pub mod metrics;
pub mod protocol;
pub mod report;
pub mod sweep;

pub use dataset::{
    load_dataset, make_gaussian_mixture, read_cifar_file, read_csv_vectors, write_csv_vectors,
    CifarVariant, DatasetSpec, MixtureSpec, Placement,
};
pub use metrics::ConfusionMatrix;
pub use protocol::{
    class_permutation, desk_gan_config, evaluate_accuracy, run_protocol, BetaMode, FinalState,
    Method, ProtocolConfig, RunOutcome, Selection,
};
pub use report::{
    emit_report, load_report_json, report_to_csv, ExperimentReport, IncrementRecord,
    MemorySummary, ReportFormat, CSV_HEADER,
};
pub use sweep::{
    argmax_beta, best_lambda, beta_rows_to_csv, lambda_grid, lambda_rows_to_csv, sweep_beta,
    sweep_lambda, BetaRow, LambdaRow,
};
