//! Shared inputs for the benchmarks.

use tunedetect::audio::{AudioBuffer, SAMPLE_RATE, SEGMENT_SECONDS};
use tunedetect::corpus::{synth_vocal, NoteSpec, SynthVoiceSpec};

/// Ten seconds of a synthetic vocal with vibrato and a few notes.
pub fn vocal_clip() -> AudioBuffer {
    let notes = [57, 60, 62, 64, 62, 60]
        .iter()
        .enumerate()
        .map(|(i, &midi)| NoteSpec {
            start_s: i as f64 * 1.6,
            end_s: i as f64 * 1.6 + 1.5,
            midi,
            gain: 1.0,
        })
        .collect();
    synth_vocal(&SynthVoiceSpec {
        duration_s: SEGMENT_SECONDS,
        sample_rate: SAMPLE_RATE,
        notes,
        vibrato_cents: 40.0,
        detune_cents: 30.0,
        ..Default::default()
    })
    .expect("valid spec")
}
