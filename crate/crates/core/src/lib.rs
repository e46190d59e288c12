//! Auto-Tune simulation and detection.
//!
//! The simulator tracks the vocal pitch with PYIN, quantizes every voiced
//! frame to the nearest equal-tempered note and resynthesizes with TD-PSOLA.
//! The detector cuts a (separated) vocal into ten-second segments, drops
//! near-silent ones, embeds each 431 x 128 log-mel spectrogram with a CNN
//! trained by semi-hard triplet mining, and scores segments with a small
//! fully connected classifier. A song is flagged when enough segments score
//! above the segment threshold.

pub mod audio;
pub mod augment;
pub mod corpus;
pub mod error;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod pitch;
pub mod retune;

#[cfg(test)]
mod test_support;

pub use audio::{AudioBuffer, Segment};
pub use error::{Error, Result};
pub use features::{MelExtractor, MelSpectrogram};
pub use pitch::{PitchParams, PitchTrack};
