//! MV-Net, MVA-Net(a), MVA-Net(b) and TMVA-Net.

mod config;
mod graph;
mod layers;
mod net;
mod params;

pub use config::{ModelConfig, Variant};
pub use graph::{Graph, ShapeGraph, TapeGraph, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE};
pub use layers::{Aspp, BatchNorm, Conv, ConvBlock, DoubleBlock};
pub use net::{Inputs, Model, SegmentationOutput};
pub use params::{BufferId, NamedTensor, ParamId, ParamStore, RunningStats};
