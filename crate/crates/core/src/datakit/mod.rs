//! Dataset construction: synthetic blobs, tabular CSV ingestion, sensitive
//! attribute tagging and client partitioning.

mod attributes;
mod partition;
mod synth;
mod tabular;

pub use attributes::{AttributeRule, SensitiveAttributeSpec};
pub use partition::{
    partition, partition_with_auxiliary, AuxiliaryDataset, ClientDataset, Partition, PartitionMode,
    PartitionSpec, MAX_DIRICHLET_ATTEMPTS, MIN_TEST_SAMPLES,
};
pub use synth::{
    intrusion_like_csv, intrusion_like_schema, synth_classification, SynthSpec,
    INTRUSION_CATEGORICAL,
};
pub use tabular::{load_csv, read_csv, ColumnRole, ColumnSpec, CsvLoad, CsvSchema, RejectedRow};
