//! Job-shop scheduling as a sequential decision process: environment,
//! priority dispatch rules, an exact oracle for tiny instances, and a
//! size-agnostic actor-critic dispatch policy trained by policy gradient
//! under curriculum strategies.

pub mod curriculum;
pub mod env;
pub mod error;
pub mod inference;
pub mod instance;
pub mod nncore;
pub mod oracle;
pub mod pdr;
pub mod policy;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
pub use instance::{Instance, Operation, Time};

pub type Tensor32 = nncore::Tensor<f32>;
pub type ParamStore32 = nncore::ParamStore<f32>;
pub type PolicyNet32 = policy::PolicyNet<f32>;
