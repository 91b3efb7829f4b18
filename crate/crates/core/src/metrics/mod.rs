//! Confusion matrices, IoU groupings and fairness measures.

mod confusion;
mod fairness;
mod report;
mod spatial;

pub use confusion::ConfusionMatrix;
pub use fairness::{fairness_gap, normalized_entropy, population_std, ClassErrors};
pub use report::{grouped_report, parse_summary, GroupStats, ClassRow, MetricsReport};
pub use spatial::isolated_pixels;
