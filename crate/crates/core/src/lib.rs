//! Post-processing for zero-shot hierarchical plant segmentation: leaf
//! candidates from sliding-window inference are filtered and merged, stems are
//! fitted to attention maps, and leaves are grouped into plants by their base
//! points.

pub mod error;
pub mod grouping;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod stem;
pub mod synth;
pub mod tiling;
pub mod types;

pub use error::{Error, Result};
pub use mask::BinaryMask;
pub use pipeline::{segment, PipelineRun};
pub use scene::{load_result, load_scene, save_instances, save_scene, Scene, SegmentationResult};
pub use types::PipelineConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
