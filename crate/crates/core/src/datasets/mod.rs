//! Paired dataset ingestion, the paired-to-unpaired split, random patch
//! sampling, and a synthetic underwater degradation for self-contained runs.

mod rgb;
mod manifest;
mod sampling;
mod split;
pub mod synthetic;

pub use rgb::Image;
pub use manifest::{build_manifest, DatasetKind, DatasetManifest, ManifestRecord};
pub use sampling::{sample_patch_batch, LabeledImage, PatchBatch, UnpairedBatch, UnpairedImages};
pub use split::{unpaired_split, UnpairedSplit};
pub use synthetic::{synthesize_underwater, DegradationParams};
