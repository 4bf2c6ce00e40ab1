pub mod bounds;
pub mod cloud;
pub mod corrector;
pub mod error;
pub mod io;
pub mod neurosim;
pub mod preprocess;
pub mod sampling;
pub mod scalar;
pub mod separability;
pub mod verify;

pub use cloud::PointCloud;
pub use error::{Error, Result};
pub use sampling::{DistributionSpec, Seed};
pub use scalar::Scalar;
pub use preprocess::WhiteningModel;

pub type PointCloud64 = PointCloud<f64>;
pub type PointCloud32 = PointCloud<f32>;
pub type WhiteningModel64 = WhiteningModel<f64>;
pub type WhiteningModel32 = WhiteningModel<f32>;
pub type Corrector64 = corrector::Corrector<f64>;
pub type Corrector32 = corrector::Corrector<f32>;
pub type NeuronState64 = neurosim::NeuronState<f64>;
pub type NeuronState32 = neurosim::NeuronState<f32>;
