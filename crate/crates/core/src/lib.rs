//! One-shot extrinsic calibration of an event camera, a LiDAR and an RGB
//! camera against a cube carrying blinking LEDs on its corners and ArUco
//! markers on its faces, plus a synthetic scene generator with known
//! ground truth.

pub mod dictionary;
pub mod events;
pub mod geometry;
pub mod io;
pub mod lidar;
pub mod pipeline;
pub mod pnp;
pub mod rgb;
pub mod sim;
pub mod target;

pub use geometry::{CameraIntrinsics, Plane, Point2, Point3, Pose};
pub use target::{TargetGeometry, TargetSpec};
