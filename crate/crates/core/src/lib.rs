pub mod clustering;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod ese;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod survival;
pub mod vga;

pub use clustering::{Centroids, GmmModel};
pub use dataio::{load_cohort, BinCuts, Cohort, Patient, SurvivalRecord, SyntheticConfig};
pub use error::{Error, Result};
pub use ese::{SelectionResult, Strategy};
pub use model::{Model, ModelDims};
pub use numerics::{Graph, Matrix, NodeId, ParamId, ParamStore};
pub use pipeline::{ModelCheckpoint, TrainConfig};
pub use vga::ReconstructionLossKind;
