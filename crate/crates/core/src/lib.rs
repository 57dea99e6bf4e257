//! Splicing fabrication, noise-fingerprint learning and tampering-mask
//! estimation for amplitude SAR tiles.
//!
//! The pipeline:
//!
//! 1. [`synthgrd`] generates amplitude products whose processing chains
//!    (resampling kernel and factor, low-pass, quantization, speckle looks)
//!    differ, standing in for distinct GRD products.
//! 2. [`splicer`] cuts products into tiles and fabricates spliced tiles with
//!    exact ground-truth masks, after editing the donor with [`editops`].
//! 3. [`fingerprint`] trains a DnCNN-style extractor with a distance-based
//!    logistic loss so that patches from the same product map to nearby
//!    fingerprints, then applies it fully convolutionally.
//! 4. [`maskest`] turns a fingerprint into a binary mask with K-means or a
//!    diagonal GMM plus a spatial-compactness rule, or with a small U-Net.
//! 5. [`metrics`] and [`harness`] score masks with balanced accuracy and IoU.

mod error;
pub mod editops;
pub mod fingerprint;
pub mod harness;
pub mod interp;
pub mod maskest;
pub mod metrics;
pub mod model_io;
pub mod raster;
pub mod seeds;
pub mod splicer;
pub mod synthgrd;

pub use error::{Error, Result};
