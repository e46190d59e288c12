//! Pair datasets: manifests, builders for stem collections and a synthetic
//! singing-voice generator.

mod build;
mod manifest;
pub mod synth;

pub use build::{
    assign_splits, build_d1, build_d2_d3, build_d4, build_synth_corpus, load_stems, median_grid_error, synth_pair,
    verify_regeneration, BuildOptions, CorpusParams, LabelCheck, SynthCorpusConfig, SynthPair, MANIFEST_FILE,
    PARAMS_FILE,
};
pub use manifest::{DatasetManifest, DatasetTag, ManifestEntry, PairKind, Split};
pub use synth::{synth_accompaniment, synth_vocal, AccompanimentSpec, NoteSpec, SingerProfile, SynthVoiceSpec};
