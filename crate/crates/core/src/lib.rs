//! Linear structure from motion for oriented omnidirectional cameras.
//!
//! Each camera reports only the direction to every point it sees. With the
//! heading known, every observation is one equation linear in the unknown
//! point and camera coordinates, so reconstruction is a least-squares solve
//! once translation and scale are pinned. The crate covers planar and
//! spatial scenes, moving points, cameras with unknown heading, detection
//! of ambiguous configurations, and synthetic error experiments.

pub mod degeneracy;
pub mod dynamic;
pub mod error;
pub mod experiment;
pub mod model;
pub mod orientation;
pub mod projector;
pub mod reconstruct;
pub mod sampling;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    feasibility_margin, required_visibility_fraction, Axis, BasisKind, CameraClass, CameraRig,
    Dimension, MotionBasis, ObservationSet, Scene, World,
};
pub use reconstruct::{reconstruct, reconstruct_2d, reconstruct_3d, ReconstructionReport};
pub use solver::{solve, Gauge, LinearSystem, SolveDiagnostics, Verdict, DEFAULT_RANK_TOLERANCE};
