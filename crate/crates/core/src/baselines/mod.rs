//! Comparison training regimes.

pub mod compress;
pub mod deepr;
pub mod hashed;
pub mod set;
pub mod thin;

pub use compress::{prune_global_magnitude, CompressionSchedule};
pub use deepr::{deepr_tensor_step, DeepRConfig, Signs};
pub use hashed::{hash_slot, init_hashed, HashedConfig, HashedTensor};
pub use set::{set_step, SetConfig};
pub use thin::{build_thin_dense, ThinDense};
