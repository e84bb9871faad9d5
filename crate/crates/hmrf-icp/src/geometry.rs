//! Core 3-D types: rigid transforms, depth maps, structured clouds,
//! error metrics, overlap estimation and pose perturbation.

use nalgebra::{Matrix3, Unit, Vector3};
use thiserror::Error;

/// A point in meters.
pub type Point3 = nalgebra::Point3<f64>;

/// Multiplier on the median intra-cloud spacing used by [`estimate_overlap`].
pub const OVERLAP_TAU: f64 = 2.0;

/// Orthonormality drift above which rotations are re-orthonormalized.
pub const ROTATION_DRIFT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("depth map is {map_w}x{map_h} but intrinsics expect {k_w}x{k_h}")]
    DimensionMismatch {
        map_w: usize,
        map_h: usize,
        k_w: usize,
        k_h: usize,
    },
    #[error("rotation matrix is not orthonormal with determinant +1 (drift {drift:.3e})")]
    InvalidRotation { drift: f64 },
    #[error("axis must be a unit vector, got norm {norm}")]
    NonUnitAxis { norm: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// An element of SE(3): rotation matrix plus translation vector, applied
/// affinely as `R p + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

fn orthonormality_drift(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r;
    let mut drift: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            drift = drift.max((gram[(i, j)] - target).abs());
        }
    }
    drift.max((r.determinant() - 1.0).abs())
}

/// Nearest rotation matrix in the Frobenius sense, via SVD polar
/// decomposition with the determinant forced to +1.
fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("3x3 SVD always yields U");
    let v_t = svd.v_t.expect("3x3 SVD always yields V^T");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * v_t;
    }
    r
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates the rotation invariants (orthonormal, det +1, within 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let drift = orthonormality_drift(&rotation);
        if drift > ROTATION_DRIFT_TOL {
            return Err(GeometryError::InvalidRotation { drift });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` through the origin.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self, GeometryError> {
        let norm = axis.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NonUnitAxis { norm });
        }
        let rotation = nalgebra::Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
        Ok(Self {
            rotation: *rotation.matrix(),
            translation: Vector3::zeros(),
        })
    }

    /// Rotation of `angle` about the line through `center` with direction `axis`.
    pub fn about_point(
        axis: &Vector3<f64>,
        angle: f64,
        center: &Point3,
    ) -> Result<Self, GeometryError> {
        let rot = Self::from_axis_angle(axis, angle)?;
        let c = center.coords;
        let translation = c - rot.rotation * c;
        Ok(Self {
            rotation: rot.rotation,
            translation,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Composition applying `other` first, then `self`. The rotation is
    /// re-orthonormalized if accumulated drift exceeds 1e-9.
    pub fn compose(&self, other: &Self) -> Self {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_drift(&rotation) > ROTATION_DRIFT_TOL {
            rotation = polar_rotation(&rotation);
        }
        Self {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.transpose();
        Self {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    /// Rotation angle in [0, pi].
    pub fn rotation_angle(&self) -> f64 {
        let c = (self.rotation.trace() - 1.0) / 2.0;
        c.clamp(-1.0, 1.0).acos()
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix4(m: &[[f64; 4]; 4]) -> Result<Self, GeometryError> {
        let rotation = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        let translation = Vector3::new(m[0][3], m[1][3], m[2][3]);
        Self::new(rotation, translation)
    }
}

/// Pinhole camera parameters. `fx`, `fy`, `cx`, `cy` are in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if cx < 0.0 || cx >= width as f64 || cy < 0.0 || cy >= height as f64 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects a camera-frame point back to pixel coordinates and depth.
    pub fn project(&self, p: &Point3) -> (f64, f64, f64) {
        (
            p.x * self.fx / p.z + self.cx,
            p.y * self.fy / p.z + self.cy,
            p.z,
        )
    }
}

/// A depth image. `depth[v * width + u]` is in meters; zero marks an
/// unobserved pixel and `valid` mirrors that convention.
#[derive(Debug, Clone)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map from raw depths; non-positive or non-finite values
    /// become invalid pixels carrying depth 0.
    pub fn from_depths(width: usize, height: usize, depths: Vec<f64>) -> Self {
        assert_eq!(depths.len(), width * height, "depth buffer size mismatch");
        let mut depth = depths;
        let mut valid = vec![false; depth.len()];
        for (d, v) in depth.iter_mut().zip(valid.iter_mut()) {
            if d.is_finite() && *d > 0.0 {
                *v = true;
            } else {
                *d = 0.0;
            }
        }
        Self {
            width,
            height,
            depth,
            valid,
        }
    }
}

/// Free-cloud points with their generating pixel lattice. `points` is dense
/// (`width * height`); entries are meaningful only where `valid`.
#[derive(Debug, Clone)]
pub struct StructuredCloud {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Point3>,
    pub valid: Vec<bool>,
}

impl StructuredCloud {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Valid points in row-major pixel order.
    pub fn valid_points(&self) -> impl Iterator<Item = &Point3> {
        self.points
            .iter()
            .zip(self.valid.iter())
            .filter_map(|(p, v)| v.then_some(p))
    }

    /// Treats an unordered point list as a 1-row lattice. Neighbor relations
    /// then follow list order, so the lattice prior is only meaningful for
    /// clouds that came from an actual pixel grid.
    pub fn from_points(points: Vec<Point3>) -> Self {
        let n = points.len();
        Self {
            width: n,
            height: 1,
            valid: vec![true; n],
            points,
        }
    }

    pub fn to_fixed(&self) -> FixedCloud {
        FixedCloud {
            points: self.valid_points().cloned().collect(),
        }
    }
}

/// The reference cloud: plain points, no lattice required.
#[derive(Debug, Clone)]
pub struct FixedCloud {
    pub points: Vec<Point3>,
}

impl FixedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Unprojects a depth map through the pinhole model. A valid pixel (u, v)
/// with depth d maps to (d(u-cx)/fx, d(v-cy)/fy, d); invalid pixels stay
/// invalid.
pub fn unproject(map: &DepthMap, k: &CameraIntrinsics) -> Result<StructuredCloud, GeometryError> {
    if map.width != k.width || map.height != k.height {
        return Err(GeometryError::DimensionMismatch {
            map_w: map.width,
            map_h: map.height,
            k_w: k.width,
            k_h: k.height,
        });
    }
    let mut points = vec![Point3::origin(); map.width * map.height];
    for v in 0..map.height {
        for u in 0..map.width {
            let i = v * map.width + u;
            if map.valid[i] {
                let d = map.depth[i];
                points[i] = Point3::new(
                    d * (u as f64 - k.cx) / k.fx,
                    d * (v as f64 - k.cy) / k.fy,
                    d,
                );
            }
        }
    }
    Ok(StructuredCloud {
        width: map.width,
        height: map.height,
        points,
        valid: map.valid.clone(),
    })
}

/// Applies `t` to every valid point; the validity mask is unchanged.
pub fn apply_structured(t: &RigidTransform, cloud: &StructuredCloud) -> StructuredCloud {
    let points = cloud
        .points
        .iter()
        .zip(cloud.valid.iter())
        .map(|(p, v)| if *v { t.apply(p) } else { *p })
        .collect();
    StructuredCloud {
        width: cloud.width,
        height: cloud.height,
        points,
        valid: cloud.valid.clone(),
    }
}

pub fn apply_fixed(t: &RigidTransform, cloud: &FixedCloud) -> FixedCloud {
    FixedCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
    }
}

/// Norm in meters of the translation of `t * gt^-1`.
pub fn translation_error(t: &RigidTransform, gt: &RigidTransform) -> f64 {
    t.compose(&gt.inverse()).translation().norm()
}

/// Relative rotation angle in radians, `arccos((trace(R_t R_gt^T) - 1) / 2)`.
pub fn rotation_error(t: &RigidTransform, gt: &RigidTransform) -> f64 {
    let rel = t.rotation() * gt.rotation().transpose();
    ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Perturbs a ground-truth pose by a rotation of `angle` about the line with
/// direction `axis` through `centroid`, applied in the source frame before
/// `gt`. The perturbed transform maps `centroid` to the same point as `gt`,
/// and its rotation error against `gt` is exactly `angle`.
pub fn perturb_pose(
    gt: &RigidTransform,
    axis: &Vector3<f64>,
    angle: f64,
    centroid: &Point3,
) -> Result<RigidTransform, GeometryError> {
    let spin = RigidTransform::about_point(axis, angle, centroid)?;
    Ok(gt.compose(&spin))
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let mut sum = Vector3::zeros();
    for p in points {
        sum += p.coords;
    }
    Point3::from(sum / points.len().max(1) as f64)
}

/// Fraction of the free cloud that overlaps the fixed cloud under the
/// ground-truth alignment. A free point counts as overlapping when its
/// nearest-neighbor distance in the fixed cloud is at most
/// [`OVERLAP_TAU`] times the median nearest-neighbor spacing within the
/// aligned free cloud itself.
pub fn estimate_overlap(free: &StructuredCloud, fixed: &FixedCloud, gt: &RigidTransform) -> f64 {
    let aligned = apply_structured(gt, free);
    let pts: Vec<Point3> = aligned.valid_points().cloned().collect();
    if pts.is_empty() || fixed.is_empty() {
        return 0.0;
    }

    let self_cloud = FixedCloud {
        points: pts.clone(),
    };
    let self_index = crate::nn::NnIndex::build(&self_cloud).expect("non-empty cloud");
    let mut spacings: Vec<f64> = (0..pts.len())
        .map(|i| self_index.nearest_excluding(&pts[i], i).1)
        .collect();
    let threshold = if spacings.iter().all(|s| s.is_finite()) {
        OVERLAP_TAU * crate::stats::median(&mut spacings)
    } else {
        f64::INFINITY
    };

    let fixed_index = crate::nn::NnIndex::build(fixed).expect("non-empty cloud");
    let overlapping = pts
        .iter()
        .filter(|p| fixed_index.nearest(p).1 <= threshold)
        .count();
    overlapping as f64 / pts.len() as f64
}
