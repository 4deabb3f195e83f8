//! Core engine for video-guided trajectory optimization at desk scale.
//!
//! The crate is organized around one loop: an imagined demonstration video is
//! produced and vetted ([`imagination`]), structured state is extracted from it
//! ([`perception`]), the extracted signals are assembled into a cost function
//! ([`supervision`]), and a waypoint trajectory is refined against that cost by
//! CMA-ES ([`optimize`]) inside the built-in simulator ([`sim`]) using the
//! depth/segmentation rasterizer ([`render`]).
//!
//! Everything here is deterministic: the same scene, trajectory, and seed
//! always yield bitwise-identical results. The crate is `no_std` (with
//! `alloc`); IO, file formats, remote providers, and the CLI live in the
//! companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod geometry;
pub mod imagination;
pub mod optimize;
pub mod oracle;
pub mod perception;
pub mod render;
pub mod rng;
pub mod sim;
pub mod supervision;
pub mod task;

pub use geometry::{CameraModel, DepthMap, ObjectId, GeometryError, PointCloud, Pose6D, SegMask, TriMesh};
