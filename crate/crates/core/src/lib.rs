//! Numerical laboratory for thin brittle strips: the rescaled Griffith
//! energy on a strip of thickness `h`, its one-dimensional brittle
//! Euler–Bernoulli limit, and the rigidity machinery connecting the two.

pub mod error;
pub mod beam;
pub mod checks;
pub mod compactness;
pub mod counterexamples;
pub mod energy;
pub mod field;
pub mod linalg;
pub mod phasefield;
pub mod recovery;
pub mod tensor;
pub mod truss;

pub use error::{Error, Result};
pub use tensor::{isotropic_tensor, BendingResult, ElasticTensor, TensorSpec};
