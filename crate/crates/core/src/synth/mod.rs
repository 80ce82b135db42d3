//! Synthetic paired-domain histology: three tissue classes rendered as
//! nuclei layouts, with frozen-section artifacts applied to the FS domain.

mod dataset;
mod render;
mod tiling;

pub use dataset::{derive_seed, generate_dataset, Dataset, ManifestEntry, Split, SynthConfig};
pub use render::{apply_fs_artifacts, render_tissue, AppliedArtifacts, CaseStyle, FsArtifactConfig};
pub use tiling::{reassemble, tile_image, Tile};
