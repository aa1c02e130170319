//! Corpora, noisy-label injection and splits.

pub mod csv_io;
pub mod dataset;
pub mod noise;
pub mod synthetic;

pub use csv_io::{load_csv_dataset, read_csv_dataset, write_csv_dataset, write_manifest_csv, CsvSchema};
pub use dataset::{split_dataset, LabeledDataset, Provenance, Sample, Split, SplitRatios};
pub use noise::{inject_noisy_labels, noisy_count, Injection, NoiseMode, NoiseSpec, NoisyLabelRecord};
pub use synthetic::{generate_synthetic_dataset, motif, motif_oracle, SyntheticSpec, CLS_TOKEN};
