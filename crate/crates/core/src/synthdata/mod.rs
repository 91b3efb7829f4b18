//! Procedural imbalanced segmentation benchmarks, the overlapped continual
//! split, and the `FCLS` dataset format.

mod generate;
mod io;
mod sample;
mod split;

pub use generate::{generate, pixel_class_counts, power_law_frequencies, Benchmark, BenchmarkSpec, ClassStyle, ShapeKind};
pub use io::{read_dataset, read_manifest, write_dataset, write_manifest, Dataset, DATASET_MAGIC, DATASET_VERSION};
pub use sample::{LabelMap, SegSample, BACKGROUND, IGNORE};
pub use split::{collapse_labels, collapse_map, select_step_images, TaskSplit};
