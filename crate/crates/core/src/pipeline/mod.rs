//! Dataset ingestion: view splitting, face boxes, sequence-wide cropping,
//! phase samples, feature normalization, manifests and the synthetic
//! sequence generator.

mod frames;
pub mod imageio;
mod manifest;
mod samples;
pub mod synth;

pub use frames::{
    crop, crop_resize, detect_bbox, otsu_threshold, select_sequence_bbox, split_views, BBox, MIN_COMPOSITE_WIDTH,
};
pub use manifest::{
    check_subject_disjoint, load_manifest, parse_manifest, records_from_frames, write_manifest, ManifestEntry,
    SequenceRecord, MIN_FRAMES,
};
pub use samples::{
    build_samples, crop_sequence, extract_view, features_from_records, sort_samples, CroppedSequence, NormStats,
    SequenceFeatures, SequenceMeta, TrainingSample, ViewFeatures, STD_FLOOR,
};

#[cfg(test)]
mod tests;
