//! Feature binning: componentwise floor of the feature vector over a
//! per-feature resolution.

use traj_core::MotionFeatures;

use crate::error::{DictError, Result};

/// Default per-feature quantization steps for `[a, v, kappa, omega, alpha]`.
pub const DEFAULT_RESOLUTION: [f64; 5] = [2.0, 1.0, 0.02, 0.1, 0.1];

/// Signed bin coordinates, floor toward negative infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinIndex(pub [i64; 5]);

/// `floor(F / r)` componentwise.
pub fn bin_index(features: &MotionFeatures, resolution: &[f64; 5]) -> Result<BinIndex> {
    for (i, &r) in resolution.iter().enumerate() {
        if !(r > 0.0) {
            return Err(DictError::BadResolution { index: i, value: r });
        }
    }
    let f = features.to_array();
    let mut out = [0i64; 5];
    for i in 0..5 {
        out[i] = (f[i] / resolution[i]).floor() as i64;
    }
    Ok(BinIndex(out))
}
