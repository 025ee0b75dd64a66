//! Penetration- and inversion-free displacement truncation.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`] — triangle/tet meshes, adjacency, OBJ I/O
//! * [`geom`] — closest points, division planes, Rodrigues, interval boxes
//! * [`broadphase`] — BVH, contact sets, nearest-primitive distances
//! * [`dat`] — isotropic and planar divide-and-truncate, inversion planes
//! * [`rigid`] — curved rigid trajectories and their truncation
//! * [`project`] — metric projection onto half-space polytopes (Dykstra)
//! * [`sim`] — a small time stepper that runs the truncation every iteration
//! * [`verify`] — independent oracles and the random-triangle benchmark
//! * [`scenario`] — JSON scene descriptions and shape generators

// `!(x > 0.0)`-style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod broadphase;
pub mod dat;
pub mod geom;
pub mod mesh;
pub mod project;
pub mod rigid;
pub mod scenario;
pub mod sim;
pub mod verify;

/// 3-vector of `f64` used for every position and displacement.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrix of `f64`.
pub type Mat3 = nalgebra::Matrix3<f64>;

pub use broadphase::ContactSet;
pub use dat::{DatConfig, DisplacementField, LambdaPolicy, TruncationResult};
pub use geom::DivisionPlane;
pub use mesh::{Adjacency, TriMesh};
pub use rigid::{CurvedTruncConfig, RigidIncrement, RigidPose};
pub use sim::{SimConfig, TruncationMode};
