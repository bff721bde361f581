//! Targetless camera-LiDAR extrinsic calibration.
//!
//! The extrinsic is recovered by aligning two modalities at once: the LiDAR
//! depth projection against a monocular relative-depth image, and the LiDAR
//! intensity projection against the equalized grayscale image. See the
//! bundled book for a walkthrough.

pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod overlay;
pub mod raster;
pub mod report;
pub mod search;
pub mod structure;
pub mod synthetic;
pub mod texture;

pub use error::{Error, ErrorCategory, Result};
pub use geometry::{CameraIntrinsics, EulerAngles, LidarPoint, PointCloud, RigidTransform};
pub use objective::{evaluate, Evaluation, FramePacket, Objective, ObjectiveConfig, PoseCost};
pub use search::{calibrate, Calibration, SearchConfig, SearchTrace};
pub use metrics::{compute_errors, CalibrationErrors};
pub use report::RunReport;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/conventions.md")]
    mod conventions {}
    #[doc = include_str!("../../../book/src/loss.md")]
    mod loss {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
