//! Point-cloud registration toolkit: iterative closest point with a
//! Markov-random-field outlier model on the depth-map pixel lattice.
//!
//! Depth sensors produce clouds with an underlying 2-D pixel grid. When two
//! such clouds only partially overlap, the non-overlapping points form
//! spatially coherent regions. This crate models the inlier/outlier state of
//! every pixel as a hidden binary field with neighbor coupling, estimated by
//! mean-field EM, and uses the resulting labels to reject outlier
//! correspondences inside the ICP loop. Five classic rejection strategies are
//! provided for comparison, along with a deterministic synthetic scene
//! generator and a benchmark harness.
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --release --example register_synthetic
//! cargo run --release --example rejection_strategies
//! cargo run --release --example field_evolution
//! cargo run --release --example overlap_sweep
//! cargo run --release --example benchmark_protocol
//! cargo run --release --example depth_io
//! ```
//!
//! or with the `hmrf-icp` binary, which exposes the same functionality as
//! `register`, `synth`, `benchmark` and `eval` subcommands.

pub mod bench;
pub mod cli;
pub mod fit;
pub mod geometry;
pub mod hmrf;
pub mod icp;
pub mod io;
pub mod nn;
pub mod reject;
pub mod synth;

mod stats;

pub use fit::{fit_rigid, FitError, InlierSelection};
pub use geometry::{
    apply_fixed, apply_structured, estimate_overlap, perturb_pose, rotation_error,
    translation_error, unproject, CameraIntrinsics, DepthMap, FixedCloud, GeometryError, Point3,
    RigidTransform, StructuredCloud,
};
pub use hmrf::{
    e_step, hmrf_select, init_field, local_prior, m_step, run_em, run_em_observed, HmrfConfig,
    HmrfError, MeanField, MixtureParams,
};
pub use icp::{icp_register, step_magnitudes, IcpConfig, IcpError, IcpResult};
pub use nn::{batch_nearest, Correspondences, NnError, NnIndex};
pub use reject::RejectionStrategy;
pub use synth::{generate_scene, perturbation_axes, SceneParams, ScenePair, SynthError};
