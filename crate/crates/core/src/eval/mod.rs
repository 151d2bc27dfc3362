mod harness;
mod protocol;
mod tables;

pub use harness::{
    build_eval_matrix, compare_to_baseline, evaluate_pair, evaluate_unseen, pp_delta, ComparisonReport, EvalCell,
    EvalMatrix, MetricDeltas, Preprocessing, Preprocessor, UnseenReport, UnseenRow,
};
pub use protocol::{
    cross_dataset_report, eval_matrix_command, eval_unseen_command, load_report, train_classifier, unseen_report,
    LoadedRun, RunModels,
};
pub use tables::{fmt_metric, fmt_pp, render_tables, round_half_even, Report, TableFormat};
