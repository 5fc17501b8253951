pub mod boxes;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod kitti;
pub mod matcher;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod runtime;
pub mod sample;
pub mod scene;

pub use boxes::{Box3D, ObjectClass};
pub use error::{Error, Result};
pub use geometry::CameraRig;
pub use sample::Sample;
