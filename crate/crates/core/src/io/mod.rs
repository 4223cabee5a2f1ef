//! File formats: the NSLT tensor container, PFM disparity maps, and PNG
//! images/masks/depth.

pub mod container;
pub mod pfm;
pub mod png;
