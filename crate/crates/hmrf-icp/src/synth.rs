//! Deterministic synthetic tabletop scenes with controllable overlap.
//!
//! A scene is a ground plane plus a handful of seeded boxes and spheres. Two
//! depth maps are ray-cast from camera poses along a one-parameter path: the
//! free camera both orbits the scene center and pans away from it, so the
//! shared view shrinks continuously as the path parameter grows. The offset
//! is solved by bisection until the realized overlap (measured exactly the
//! way the registration pipeline measures it) lands within tolerance of the
//! target. Everything is derived from one 64-bit seed, so identical inputs
//! give bitwise-identical clouds.

use crate::geometry::{
    centroid, estimate_overlap, unproject, CameraIntrinsics, DepthMap, FixedCloud, Point3,
    RigidTransform, StructuredCloud,
};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use thiserror::Error;

/// Ray parameter below which hits are ignored (camera near plane, meters).
const NEAR_PLANE: f64 = 0.05;

const MAX_BISECTION_STEPS: usize = 60;

/// Orbit angle (radians) and sideways gaze shift (meters) per unit of path
/// offset. Together they take the pair from identical views at offset 0 to
/// nearly disjoint views at offset 1.
const ORBIT_RATE: f64 = 2.0;
const PAN_RATE: f64 = 2.2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("target overlap {target} outside [0.05, 1.0]")]
    TargetOutOfRange { target: f64 },
    #[error("scene (seed {seed}) cannot reach overlap {target:.2}; minimum reachable {min:.2}")]
    UnreachableOverlap { seed: u64, target: f64, min: f64 },
}

#[derive(Debug, Clone)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub target_overlap: f64,
    /// Accepted |realized - target| gap.
    pub overlap_tol: f64,
    /// Std of the per-pixel Gaussian depth noise, meters.
    pub noise_sigma: f64,
    /// Rays are considered misses beyond this camera depth, meters.
    pub max_depth: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 80,
            height: 60,
            target_overlap: 0.8,
            overlap_tol: 0.05,
            noise_sigma: 0.002,
            max_depth: 4.0,
        }
    }
}

impl SceneParams {
    pub fn with_target(target_overlap: f64) -> Self {
        Self {
            target_overlap,
            ..Self::default()
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(
            0.9 * self.width as f64,
            0.9 * self.width as f64,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
        .expect("derived intrinsics are valid")
    }
}

/// A generated registration problem with exact ground truth.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub free: StructuredCloud,
    pub fixed: FixedCloud,
    /// Aligns the free cloud onto the fixed cloud.
    pub gt: RigidTransform,
    /// Realized overlap, as measured by [`estimate_overlap`].
    pub overlap: f64,
    /// Diagonal of the bounding box of both aligned clouds, meters.
    pub scene_diameter: f64,
    pub seed: u64,
    /// The raw depth map behind `free`, for image export.
    pub free_depth: DepthMap,
    /// (path offset, realized overlap) pairs probed during bisection.
    pub bisection_trace: Vec<(f64, f64)>,
}

enum Primitive {
    /// Ground plane y = 0, bounded to |x|, |z| <= half_extent.
    Plane { half_extent: f64 },
    Aabb { min: Vector3<f64>, max: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

impl Primitive {
    /// Smallest ray parameter beyond the near plane, with the ray expressed
    /// as `origin + t * dir` and `dir` unnormalized.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Plane { half_extent } => {
                if dir.y.abs() < 1e-12 {
                    return None;
                }
                let t = -origin.y / dir.y;
                if t <= NEAR_PLANE {
                    return None;
                }
                let hit = origin + t * dir;
                (hit.x.abs() <= *half_extent && hit.z.abs() <= *half_extent).then_some(t)
            }
            Primitive::Aabb { min, max } => {
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                for axis in 0..3 {
                    let (o, d, lo, hi) = (origin[axis], dir[axis], min[axis], max[axis]);
                    if d.abs() < 1e-12 {
                        if o < lo || o > hi {
                            return None;
                        }
                        continue;
                    }
                    let (t0, t1) = ((lo - o) / d, (hi - o) / d);
                    t_enter = t_enter.max(t0.min(t1));
                    t_exit = t_exit.min(t0.max(t1));
                }
                if t_enter > t_exit {
                    return None;
                }
                if t_enter > NEAR_PLANE {
                    Some(t_enter)
                } else if t_exit > NEAR_PLANE {
                    Some(t_exit)
                } else {
                    None
                }
            }
            Primitive::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = 2.0 * dir.dot(&oc);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / (2.0 * a);
                let t1 = (-b + sq) / (2.0 * a);
                if t0 > NEAR_PLANE {
                    Some(t0)
                } else if t1 > NEAR_PLANE {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }
}

/// Camera pose as camera-to-world. Camera axes: x right, y down, z forward,
/// matching the unprojection convention (v grows downward).
fn look_at(position: Vector3<f64>, target: Vector3<f64>) -> RigidTransform {
    let forward = (target - position).normalize();
    let world_down = Vector3::new(0.0, -1.0, 0.0);
    let x_cam = world_down.cross(&forward).normalize();
    let y_cam = forward.cross(&x_cam);
    let rotation = Matrix3::from_columns(&[x_cam, y_cam, forward]);
    RigidTransform::new(rotation, position).expect("look-at basis is orthonormal")
}

struct Scene {
    primitives: Vec<Primitive>,
    /// Orbit angle of the fixed camera.
    base_azimuth: f64,
    orbit_radius: f64,
    camera_height: f64,
}

impl Scene {
    fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Room shell: floor plus four walls, so every view direction sees
        // structure that pins all six degrees of freedom.
        let half = 1.8;
        let wall_h = 1.7;
        let mut primitives = vec![
            Primitive::Plane { half_extent: half },
            Primitive::Aabb {
                min: Vector3::new(-half - 0.2, 0.0, -half - 0.2),
                max: Vector3::new(half + 0.2, wall_h, -half),
            },
            Primitive::Aabb {
                min: Vector3::new(-half - 0.2, 0.0, half),
                max: Vector3::new(half + 0.2, wall_h, half + 0.2),
            },
            Primitive::Aabb {
                min: Vector3::new(-half - 0.2, 0.0, -half - 0.2),
                max: Vector3::new(-half, wall_h, half + 0.2),
            },
            Primitive::Aabb {
                min: Vector3::new(half, 0.0, -half - 0.2),
                max: Vector3::new(half + 0.2, wall_h, half + 0.2),
            },
        ];
        let n_objects = rng.gen_range(4..=6);
        for _ in 0..n_objects {
            let x = rng.gen_range(-0.8..0.8);
            let z = rng.gen_range(-0.8..0.8);
            if rng.gen_bool(0.5) {
                let hx = rng.gen_range(0.08..0.3);
                let hy = rng.gen_range(0.08..0.3);
                let hz = rng.gen_range(0.08..0.3);
                primitives.push(Primitive::Aabb {
                    min: Vector3::new(x - hx, 0.0, z - hz),
                    max: Vector3::new(x + hx, 2.0 * hy, z + hz),
                });
            } else {
                let r = rng.gen_range(0.08..0.22);
                primitives.push(Primitive::Sphere {
                    center: Vector3::new(x, r, z),
                    radius: r,
                });
            }
        }
        Self {
            primitives,
            base_azimuth: rng.gen_range(0.0..std::f64::consts::TAU),
            orbit_radius: rng.gen_range(1.15..1.45),
            camera_height: rng.gen_range(0.95..1.25),
        }
    }

    /// Pose along the separation path. At offset 0 this is the fixed
    /// camera; growing offsets orbit the camera around the scene and pan
    /// its gaze sideways, shrinking the shared view.
    fn pose(&self, offset: f64) -> RigidTransform {
        let azimuth = self.base_azimuth + ORBIT_RATE * offset;
        let position = Vector3::new(
            self.orbit_radius * azimuth.sin(),
            self.camera_height,
            self.orbit_radius * azimuth.cos(),
        );
        let tangent = Vector3::new(azimuth.cos(), 0.0, -azimuth.sin());
        let target = PAN_RATE * offset * tangent;
        look_at(position, target)
    }

    fn render(
        &self,
        pose: &RigidTransform,
        k: &CameraIntrinsics,
        max_depth: f64,
        noise_sigma: f64,
        noise_seed: u64,
    ) -> DepthMap {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let noise = Normal::new(0.0, noise_sigma).expect("valid sigma");
        let origin = *pose.translation();
        let rot = *pose.rotation();
        let mut depths = vec![0.0; k.width * k.height];
        for v in 0..k.height {
            for u in 0..k.width {
                let dir_cam =
                    Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                let dir = rot * dir_cam;
                let mut t_hit = f64::INFINITY;
                for prim in &self.primitives {
                    if let Some(t) = prim.hit(&origin, &dir) {
                        t_hit = t_hit.min(t);
                    }
                }
                if t_hit <= max_depth {
                    let d = t_hit + noise.sample(&mut rng);
                    depths[v * k.width + u] = d.max(NEAR_PLANE);
                }
            }
        }
        DepthMap::from_depths(k.width, k.height, depths)
    }
}

fn build_pair(
    scene: &Scene,
    params: &SceneParams,
    seed: u64,
    offset: f64,
) -> (StructuredCloud, FixedCloud, RigidTransform, DepthMap) {
    let k = params.intrinsics();
    let fixed_pose = scene.pose(0.0);
    let free_pose = scene.pose(offset);
    let fixed_map = scene.render(
        &fixed_pose,
        &k,
        params.max_depth,
        params.noise_sigma,
        seed ^ 0x5151,
    );
    let free_map = scene.render(
        &free_pose,
        &k,
        params.max_depth,
        params.noise_sigma,
        seed ^ 0xF2EE,
    );
    let fixed = unproject(&fixed_map, &k)
        .expect("matching dimensions")
        .to_fixed();
    let free = unproject(&free_map, &k).expect("matching dimensions");
    let gt = fixed_pose.inverse().compose(&free_pose);
    (free, fixed, gt, free_map)
}

fn assemble(
    scene: &Scene,
    params: &SceneParams,
    seed: u64,
    offset: f64,
    overlap: f64,
    trace: Vec<(f64, f64)>,
) -> ScenePair {
    let (free, fixed, gt, free_depth) = build_pair(scene, params, seed, offset);
    let aligned = crate::geometry::apply_structured(&gt, &free);
    let mut lo = Vector3::from_element(f64::INFINITY);
    let mut hi = Vector3::from_element(f64::NEG_INFINITY);
    for p in fixed.points.iter().chain(aligned.valid_points()) {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    ScenePair {
        free,
        fixed,
        gt,
        overlap,
        scene_diameter: (hi - lo).norm(),
        seed,
        free_depth,
        bisection_trace: trace,
    }
}

/// Generates a scene pair whose realized overlap is within
/// `params.overlap_tol` of `params.target_overlap`, solving the camera
/// offset by bisection. Fully deterministic per (params, seed).
pub fn generate_scene(params: &SceneParams, seed: u64) -> Result<ScenePair, SynthError> {
    let target = params.target_overlap;
    if !(0.05..=1.0).contains(&target) {
        return Err(SynthError::TargetOutOfRange { target });
    }
    let scene = Scene::sample(seed);
    let mut trace = Vec::new();

    let measure = |offset: f64| {
        let (free, fixed, gt, _) = build_pair(&scene, params, seed, offset);
        estimate_overlap(&free, &fixed, &gt)
    };

    if target >= 0.999 {
        let overlap = measure(0.0);
        trace.push((0.0, overlap));
        return Ok(assemble(&scene, params, seed, 0.0, overlap, trace));
    }

    let mut lo = 0.0;
    let lo_ov = measure(0.0);
    trace.push((lo, lo_ov));
    let mut hi = 1.0;
    let hi_ov = measure(hi);
    trace.push((hi, hi_ov));
    if hi_ov > target + params.overlap_tol {
        return Err(SynthError::UnreachableOverlap {
            seed,
            target,
            min: hi_ov,
        });
    }
    if (lo_ov - target).abs() <= params.overlap_tol {
        return Ok(assemble(&scene, params, seed, lo, lo_ov, trace));
    }
    if (hi_ov - target).abs() <= params.overlap_tol {
        return Ok(assemble(&scene, params, seed, hi, hi_ov, trace));
    }

    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let ov = measure(mid);
        trace.push((mid, ov));
        if (ov - target).abs() <= params.overlap_tol {
            return Ok(assemble(&scene, params, seed, mid, ov, trace));
        }
        if ov > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(SynthError::UnreachableOverlap {
        seed,
        target,
        min: hi_ov,
    })
}

/// Seeded uniform directions on the unit sphere, reused across all scenes.
pub fn perturbation_axes(count: usize, seed: u64) -> Vec<Vector3<f64>> {
    assert!(count >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: [f64; 3] = UnitSphere.sample(&mut rng);
            Vector3::new(v[0], v[1], v[2])
        })
        .collect()
}

/// Centroid of the valid free points, the point the perturbation protocol
/// spins around.
pub fn free_centroid(cloud: &StructuredCloud) -> Point3 {
    let pts: Vec<Point3> = cloud.valid_points().cloned().collect();
    centroid(&pts)
}
