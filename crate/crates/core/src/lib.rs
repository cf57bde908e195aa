//! Dynamic point fields.
//!
//! A dynamic surface is stored as one explicit oriented point set (the
//! canonical frame) plus one small sine-activated residual network per target
//! frame that moves every canonical point to its position in that frame.
//! Fields are fitted with a hand-written reverse-mode autodiff tape against
//! Chamfer, normal, image-space normal, isometric and keypoint objectives.
//!
//! Module map:
//!
//! * [`geometry`]: point sets, meshes, k-d tree, surface sampling, normals.
//! * [`autodiff`]: tensors, the recording tape and finite-difference checks.
//! * [`field`]: the deformation network and its partial application.
//! * [`losses`]: all differentiable objectives.
//! * [`render`]: cameras, mesh normal rasterization, point normal splatting.
//! * [`optim`]: Adam and the reduce-on-plateau schedule.
//! * [`pipelines`]: static fitting, deformation fitting, animation.
//! * [`metrics`]: evaluation-only Chamfer, normal consistency, EPE, accuracy.
//! * [`io`]: PLY/OBJ/CSV/config/checkpoint formats.
//! * [`benchgen`]: synthetic warps with exact ground-truth flow.

pub mod autodiff;
pub mod benchgen;
pub mod field;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod pipelines;
pub mod render;
pub mod rng;

mod error;

pub use error::{Error, Result};
pub use geometry::{PointSet, TriMesh, Vec3};
