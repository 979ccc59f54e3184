//! Dataset generation, evaluation and robustness sweeps.

mod dataset;
mod eval;
mod sweep;

pub use dataset::{
    gen_dataset, load_corpus, load_dataset, load_stereo, manifest_path, read_manifest, render_item,
    simulate_dataset, write_manifest, Condition, DatasetSpec, LabeledClip, ManifestRecord, MANIFEST_FILE,
};
pub use eval::{evaluate, predict, summarize, EvalReport, EvalRow, GccConfig, Method, Prediction, Summary, REPORT_SCHEMA};
pub use sweep::{sweep, sweep_csv, write_sweep_csv, SweepAxis, SweepRow, SWEEP_SCHEMA};
