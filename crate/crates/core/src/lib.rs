//! Exact enumeration of the activation regions of ReLU networks.

pub mod analysis;
pub mod cellenum;
pub mod engine;
pub mod error;
pub mod format;
pub mod geometry;
pub mod network;
pub mod witness;

pub use cellenum::{bound_exh_enum, bound_inc_enum, CellSet, Region, Subroutine};
pub use engine::{expand_task, layerwise_serial, par_layerwise1, EnumerationReport, PoolOptions, Task, TaskResult};
pub use error::{Error, Result};
pub use format::Report;
pub use geometry::{Arrangement, BoundedDomain, Hyperplane, Sign, SignVector};
pub use network::{ActivationPattern, Init, Mlp, NetworkSignVector};
pub use witness::{find_witness, SignedConstraint, WitnessResult};
