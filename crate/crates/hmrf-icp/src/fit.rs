//! Closed-form least-squares SE(3) fit of selected correspondences:
//! centroid subtraction, 3x3 cross-covariance SVD, reflection-corrected
//! rotation.

use crate::geometry::{FixedCloud, RigidTransform, StructuredCloud};
use crate::nn::Correspondences;
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Minimum number of inlier pairs for a well-posed fit.
pub const MIN_INLIERS: usize = 3;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least {MIN_INLIERS} inliers, got {count}")]
    TooFewInliers { count: usize },
    #[error("inlier geometry is degenerate (collinear or coincident points)")]
    DegenerateGeometry,
}

/// Boolean membership per valid free pixel, aligned with [`Correspondences`].
#[derive(Debug, Clone)]
pub struct InlierSelection {
    pub mask: Vec<bool>,
}

impl InlierSelection {
    pub fn all(n: usize) -> Self {
        Self {
            mask: vec![true; n],
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Solves `argmin_T sum_{i in S} ||T b_i - c_{I_i}||^2` over rigid transforms.
///
/// The rotation comes from the SVD of the centered cross-covariance with the
/// smallest singular vector sign-flipped when needed to force det +1, so the
/// result is always a proper rotation. Coplanar inlier sets are fine;
/// collinear or coincident ones are rejected.
pub fn fit_rigid(
    free: &StructuredCloud,
    fixed: &FixedCloud,
    corr: &Correspondences,
    sel: &InlierSelection,
) -> Result<RigidTransform, FitError> {
    assert_eq!(sel.mask.len(), corr.len(), "selection misaligned");
    let count = sel.count();
    if count < MIN_INLIERS {
        return Err(FitError::TooFewInliers { count });
    }

    let mut b_centroid = Vector3::zeros();
    let mut c_centroid = Vector3::zeros();
    for k in 0..corr.len() {
        if !sel.mask[k] {
            continue;
        }
        b_centroid += free.points[corr.pixels[k]].coords;
        c_centroid += fixed.points[corr.indices[k]].coords;
    }
    b_centroid /= count as f64;
    c_centroid /= count as f64;

    let mut cov = Matrix3::zeros();
    for k in 0..corr.len() {
        if !sel.mask[k] {
            continue;
        }
        let b = free.points[corr.pixels[k]].coords - b_centroid;
        let c = fixed.points[corr.indices[k]].coords - c_centroid;
        cov += b * c.transpose();
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("3x3 SVD always yields U");
    let v_t = svd.v_t.expect("3x3 SVD always yields V^T");
    let sv = svd.singular_values;
    // Rank < 2 means the inliers do not span a plane.
    if sv[0] <= 0.0 || sv[1] <= sv[0] * 1e-12 {
        return Err(FitError::DegenerateGeometry);
    }

    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let mut v_fixed = v;
    if d < 0.0 {
        v_fixed.column_mut(2).neg_mut();
    }
    let rotation = v_fixed * u.transpose();
    let translation = c_centroid - rotation * b_centroid;
    RigidTransform::new(rotation, translation)
        .map_err(|_| FitError::DegenerateGeometry)
}
