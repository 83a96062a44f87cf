//! Spherical-coordinate instance masks for 3D point clouds.
//!
//! An instance is a [`RadialPolygon`]: a center and one ray length per
//! angular sector of a [`SectorGrid`]. Coarse membership is refined by a
//! per-point radial offset (a [`MigrationField`]) and the final mask keeps
//! points whose migrated radius stays within their sector's ray.
//!
//! Modules, bottom-up:
//!
//! - [`geometry`]: spherical transform and sector binning
//! - [`cloud`]: labelled point clouds and the scene text format
//! - [`radial`]: ground-truth polygon targets, containment, AABB baseline
//! - [`migration`]: TP/FP/FN partition and all losses with gradients
//! - [`assembly`]: mask assembly, mask IoU, NMS, RLE masks
//! - [`matching`]: cost matrix and Hungarian assignment
//! - [`metrics`]: AP / AP50 / AP25 / mPrec50 / mRec50
//! - [`synth`]: seeded synthetic scenes
//! - [`ablation`]: component and grid ablations
//! - [`fitter`]: gradient-descent fitting of free proposal parameters
//! - [`gradcheck`]: finite-difference verification of every gradient
//! - [`io`]: prediction files and JSON helpers

pub mod ablation;
pub mod assembly;
pub mod cloud;
pub mod error;
pub mod fitter;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod migration;
pub mod radial;
pub mod synth;

pub use assembly::{assemble_mask, mask_iou, nms, BinaryMask, NmsConfig, Proposal, ScoredMask};
pub use cloud::{GroundTruthInstance, PointCloud, BACKGROUND};
pub use error::{Error, Result};
pub use geometry::{find_sector, from_spherical, to_spherical, Point3, SectorGrid, SphericalCoord};
pub use matching::{hungarian_solve, Assignment, CostMatrix};
pub use metrics::{evaluate, EvalResult};
pub use migration::{LossValue, MarginSign, MigrationField, PointPartition};
pub use radial::{Aabb, RadialPolygon};
pub use synth::{generate_scene, SceneSpec, ShapeFamily};
