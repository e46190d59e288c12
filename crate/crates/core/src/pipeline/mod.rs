//! End-to-end detection, song verdicts, evaluation and robustness runs.

mod config;
mod detect;
mod eval;
mod fit;

pub use config::{CountMode, DetectionConfig, PipelineConfig};
pub use detect::{
    count_above, detect_segments, metrics, song_mels, song_verdict, song_verdict_with, write_segment_csv, CountThreshold,
    Detector, Metrics, SegmentScore, Separator, SongVerdict, ENV_SEPARATOR,
};
pub use eval::{
    count_range, manifest_songs, read_provenance, report_from_scores, robustness_eval, score_manifest, segment_metrics,
    sweep_from_scores, sweep_naive, threshold_sweep, write_provenance, Condition, CurvePoint, EvalReport, Provenance,
    RobustnessMode, SongScores,
};
pub use fit::{embed_samples, fit_classifier, fit_embedder, labeled_embeddings, pair_features, PairFeatures};
