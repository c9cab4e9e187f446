//! Records, binning, the synthetic funnel generator and dataset files.

mod batch;
mod binning;
mod generator;
mod io;
mod record;

pub use batch::Batch;
pub use binning::{bin_numeric, BinningSpec};
pub use generator::{generate_synthetic, FixedProbabilities, FunnelWorld, GeneratorConfig, SyntheticData};
pub use io::{read_dataset, read_records, write_dataset, write_records};
pub use record::{Behavior, Dataset, ExampleRecord, GroundTruth, Labels};
