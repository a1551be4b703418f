//! Dataset files, stratified splitting and classification metrics.

mod dataset;
mod metrics;
mod split;

pub use dataset::{
    dataset_to_text, escape_field, load_dataset, load_labels, parse_dataset, parse_labels, save_dataset, unescape_field,
};
pub use metrics::{class_distribution, confusion, f1_macro, token_error_share, ConfusionMatrix, DatasetStats};
pub use split::{allocate, stratified_split};
