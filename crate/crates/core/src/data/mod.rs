//! On-disk datasets: feature files, manifests and the synthetic generator.

pub mod dataset;
pub mod features;
pub mod synth;

pub use dataset::{Dataset, Manifest, Split, Vocabulary};
pub use features::{load_features, save_features};
pub use synth::{generate, SynthConfig, SynthDataset, SynthMode};
