//! Hand-written layer-wise backpropagation for MLPs and small 3x3 CNNs.

pub mod layers;
pub mod model;
mod spec;

pub use model::{backward, forward, predict, BnState, Cache, GradMode, Mode};
pub use spec::{LayerKind, LayerSpec, NetworkSpec, ParamInfo, ParamRole};
