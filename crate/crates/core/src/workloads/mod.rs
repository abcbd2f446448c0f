//! Benchmark and demo workloads: Mandelbrot, matrix multiplication sweeps and
//! MLP training, with their reports.

mod mandelbrot;
mod matmul;
pub mod mlp;
mod report;

pub use mandelbrot::{
    mandelbrot_composed, mandelbrot_counts, mandelbrot_custom, mandelbrot_host, mandelbrot_oracle, mandelbrot_spec,
    mismatch_ppm, run_mandelbrot, MandelbrotMode, MandelbrotParams,
};
pub use matmul::{matmul_host, matmul_oracle, max_norm_rel_err, random_matrix, run_matmul_sweep, SweepVariant};
pub use mlp::{run_mlp_train, MlpConfig};
pub use report::{
    emit_image, emit_report, median, pgm_bytes, write_report, BenchCell, BenchReport, Correctness, ReportFormat, Timing,
};
