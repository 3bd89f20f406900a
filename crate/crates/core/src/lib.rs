//! Delta extraction, module-aware compression, grafting and routed fusion
//! of model checkpoints.

pub mod checkpoint;
pub mod compressor;
pub mod container;
pub mod error;
pub mod linalg;
pub mod objectives;
pub mod plan;
pub mod quant;
pub mod router;
pub mod scalar;
pub mod skillpack;
pub mod tensor;
pub mod toy;

pub use checkpoint::{apply, classify, diff, Checkpoint, ClassificationManifest, DeltaMap, ModuleClass};
pub use compressor::{compress_delta, compress_entry, reconstruct_entry, Calibration};
pub use error::{Error, Result};
pub use plan::{CalibrationSpec, ClassStrategies, ClassStrategy, CompressionPlan};
pub use quant::{BitGroup, QuantizedMatrix};
pub use router::{fuse, instantiate_task, route, train_router, FusionRequest, Router, Selector};
pub use scalar::Scalar;
pub use skillpack::{inspect, storage_ratio, SkillPack, StorageStats};
pub use tensor::{DType, Tensor};

pub type Matrix32 = linalg::Matrix<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type SvdFactors32 = linalg::SvdFactors<f32>;
pub type SvdFactors64 = linalg::SvdFactors<f64>;
