pub mod cohort;
pub mod corrext;
pub mod error;
pub mod image;
pub mod imgproc;
pub mod lungseg;
pub mod pathfeat;
pub mod report;
pub mod synth;
pub mod treelab;

pub use error::{Error, Result};
pub use image::GrayImage;
