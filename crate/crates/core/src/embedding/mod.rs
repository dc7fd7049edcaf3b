//! Labeled embedding sets, the bundle file format, CSV import, synthetic
//! pairs and leave-one-out query bookkeeping.

mod bundle;
mod csv_import;
mod set;
mod split;
pub mod synth;

pub use bundle::{
    load_bundle, read_manifest, save_bundle, Manifest, LABELS_FILE, MANIFEST_FILE, VECTORS_FILE,
};
pub use csv_import::load_csv;
pub use set::{EmbeddingSet, PairedEmbeddings};
pub use split::{split_gallery_query, LeaveOneOut};
pub use synth::{synth_pair, ClassSpread, Distortion, SynthSpec};
