//! Single-image camera calibration from a dense set of planar-target
//! correspondences.

pub mod analysis;
pub mod curve;
pub mod error;
pub mod geometry;
pub mod homography;
pub mod io;
pub mod optimize;
pub mod pipeline;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result, Stage};
pub use geometry::{
    apply_distortion, project_ideal, rotation_from_axis_angle, total_disparity, CameraIntrinsics,
    CorrespondenceSet, Point2, Point3, PoseParams, RadialDistortion, SensorSpec,
};
pub use homography::{estimate_homography, extrinsics_from_homography, reproject, Homography};
