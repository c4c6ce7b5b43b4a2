//! Experiment orchestration: calibration, relevance evaluation and
//! questionnaire completion, in memory or against an output directory.

mod config;
mod pipeline;
mod runner;

pub use config::{DataPaths, EmbedderSource, ExperimentConfig, ModelSource, RelevanceEvalSettings};

pub use pipeline::{
    calibrate_item, calibrate_items, evaluate_questionnaires, evaluate_relevance, CalibrationSettings, ItemCalibration,
    LogitRow, RelevanceEval, Strength,
};
pub use runner::{
    calibrate_with, calibration_summary_csv, load_vectors, questionnaire_eval_with, relevance_eval_with,
    relevance_summary, report, run_calibration, run_gen_synthetic, run_questionnaire_eval, run_relevance_eval,
    write_manifest, Manifest, QuestionnaireOutcome, SyntheticPaths, MANIFEST,
};
