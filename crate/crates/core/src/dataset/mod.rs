//! On-disk view sequences, training samples, class weights and
//! normalization.

pub mod rseg;
mod sample;
mod stats;
mod store;

pub use sample::{apply_flips, augment_flip, one_hot, stack_sample, Batch, Flips, InputLayout, Sample};
pub use stats::{compute_class_weights, count_labels, denormalize_views, normalize_views, NormStats, Range};
pub use store::{
    frame_path, parse_key_values, read_frame, simulate_dataset, write_frame, DatasetIndex, KeyValues, SequenceInfo,
    SimConfig, Split, View,
};
