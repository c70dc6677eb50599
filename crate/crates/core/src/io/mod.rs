//! On-disk formats.

pub mod histogram;
pub mod manifest;
pub mod refset_archive;
pub mod shard;
pub mod tables;

pub use histogram::{export_histogram, Histogram, HistogramRange, HistogramSpec};
pub use manifest::{Manifest, ShardSet};
pub use refset_archive::{read_reference_archive, write_reference_archive, ReferenceArchive};
pub use shard::{read_shard, read_shard_all, write_shard, ShardFlags, ShardHeader, ShardReader};
pub use tables::{
    format_sig, read_metrics_csv, read_score_csv, read_selection, sidecar_path, write_metrics_csv, write_score_csv,
    write_selection, SelectionSidecar,
};
