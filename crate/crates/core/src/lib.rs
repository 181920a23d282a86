//! Point-cloud part segmentation with PointNet and inter-point
//! convolutional (IPC-Net) layers, on a small reverse-mode autodiff core.

pub mod analysis;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod ipcnet;
pub mod model;
pub mod par;
pub mod pointnet;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
