//! Polar codes and polar lattices for i.i.d. fading channels.

pub mod error;
pub mod fading;
pub mod numeric;
pub mod quantizer;
pub mod construction;
pub mod codec;
pub mod partition;
pub mod lattice;
pub mod shaping;
pub mod stats;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use construction::{PolarCodeSpec, SelectionTarget};
pub use error::{Error, Result};
pub use fading::{CsiMode, FadingChannelSpec, FadingDistribution, FadingKind};
pub use lattice::PolarLattice;
pub use partition::PartitionChain;
pub use quantizer::{DiscreteBmsc, QuantizerParams};
pub use shaping::{DiscreteGaussian, LatticeGaussianSpec, ShapedLattice};
