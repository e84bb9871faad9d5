//! The benchmark protocol: perturb each scene's ground truth by a fixed
//! rotation about every axis in a shared list, register with every strategy,
//! and record errors, iteration counts and timing. Failures are data, not
//! errors: a diverged run is scored at its failed state and flagged.

use crate::geometry::{perturb_pose, rotation_error, translation_error};
use crate::icp::{icp_register, IcpConfig, IcpError};
use crate::reject::RejectionStrategy;
use crate::synth::{free_centroid, ScenePair};
use nalgebra::Vector3;
use rayon::prelude::*;

/// Default perturbation angle, pi/30 radians.
pub const DEFAULT_PERTURBATION_ANGLE: f64 = std::f64::consts::PI / 30.0;

/// Outcome of one (scene, axis, strategy) registration.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    /// Results-table label ("all", "pct", ...).
    pub label: &'static str,
    pub translation_error: f64,
    pub rotation_error: f64,
    pub iterations: usize,
    pub elapsed_seconds: f64,
    pub converged: bool,
    pub failed: bool,
    pub initial_em_iterations: Option<usize>,
    /// Per-iteration EM counts, for cap audits.
    pub em_iterations: Vec<usize>,
}

/// One benchmark row: a (scene, axis) cell with one entry per strategy.
#[derive(Debug, Clone)]
pub struct BenchmarkRecord {
    pub scene: usize,
    pub axis: usize,
    pub overlap: f64,
    pub runs: Vec<StrategyRun>,
}

/// Runs the full (scene x axis x strategy) matrix. Cells execute in
/// parallel; records come back in canonical (scene, axis) order with runs in
/// strategy order, independent of completion order.
pub fn run_benchmark(
    scenes: &[ScenePair],
    strategies: &[RejectionStrategy],
    axes: &[Vector3<f64>],
    angle: f64,
    base: &IcpConfig,
) -> Vec<BenchmarkRecord> {
    assert!(!scenes.is_empty() && !strategies.is_empty() && !axes.is_empty());
    let cells: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..axes.len()).map(move |a| (s, a)))
        .collect();
    cells
        .par_iter()
        .map(|&(scene_idx, axis_idx)| {
            let scene = &scenes[scene_idx];
            let centroid = free_centroid(&scene.free);
            let t_init = perturb_pose(&scene.gt, &axes[axis_idx], angle, &centroid)
                .expect("perturbation axes are unit vectors");
            let runs = strategies
                .iter()
                .map(|strategy| {
                    let config = IcpConfig {
                        strategy: strategy.clone(),
                        ..base.clone()
                    };
                    let started = std::time::Instant::now();
                    match icp_register(&scene.free, &scene.fixed, &t_init, &config) {
                        Ok(res) => StrategyRun {
                            label: strategy.label(),
                            translation_error: translation_error(&res.transform, &scene.gt),
                            rotation_error: rotation_error(&res.transform, &scene.gt),
                            iterations: res.iterations,
                            elapsed_seconds: res.elapsed_seconds,
                            converged: res.converged,
                            failed: false,
                            initial_em_iterations: res.initial_em_iterations,
                            em_iterations: res.trace.iter().map(|r| r.em_iterations).collect(),
                        },
                        Err(IcpError::Failed(failure)) => StrategyRun {
                            label: strategy.label(),
                            translation_error: translation_error(&failure.transform, &scene.gt),
                            rotation_error: rotation_error(&failure.transform, &scene.gt),
                            iterations: failure.iterations,
                            elapsed_seconds: started.elapsed().as_secs_f64(),
                            converged: false,
                            failed: true,
                            initial_em_iterations: failure.initial_em_iterations,
                            em_iterations: failure
                                .trace
                                .iter()
                                .map(|r| r.em_iterations)
                                .collect(),
                        },
                        Err(other) => panic!("benchmark inputs violated a precondition: {other}"),
                    }
                })
                .collect();
            BenchmarkRecord {
                scene: scene_idx,
                axis: axis_idx,
                overlap: scene.overlap,
                runs,
            }
        })
        .collect()
}

/// Per-strategy medians of one metric within an overlap decile.
#[derive(Debug, Clone)]
pub struct DecileSummary {
    /// Decile lower bound: 0.0, 0.1, ... 0.9 (overlap 1.0 folds into 0.9).
    pub decile_lo: f64,
    pub count: usize,
    /// (label, median translation error, median rotation error,
    /// median iterations) per strategy, in table order.
    pub per_strategy: Vec<(String, f64, f64, f64)>,
}

fn median_of(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Groups records into overlap deciles and reports per-strategy medians.
pub fn summarize_by_decile(records: &[BenchmarkRecord]) -> Vec<DecileSummary> {
    let mut out = Vec::new();
    for d in 0..10 {
        let lo = d as f64 / 10.0;
        let hi = lo + 0.1;
        let in_decile: Vec<&BenchmarkRecord> = records
            .iter()
            .filter(|r| r.overlap >= lo && (r.overlap < hi || (d == 9 && r.overlap <= 1.0)))
            .collect();
        if in_decile.is_empty() {
            continue;
        }
        let labels: Vec<&'static str> = in_decile[0].runs.iter().map(|r| r.label).collect();
        let per_strategy = labels
            .iter()
            .enumerate()
            .map(|(k, label)| {
                let t = median_of(in_decile.iter().map(|r| r.runs[k].translation_error).collect());
                let r_ = median_of(in_decile.iter().map(|r| r.runs[k].rotation_error).collect());
                let it = median_of(
                    in_decile
                        .iter()
                        .map(|r| r.runs[k].iterations as f64)
                        .collect(),
                );
                (label.to_string(), t, r_, it)
            })
            .collect();
        out.push(DecileSummary {
            decile_lo: lo,
            count: in_decile.len(),
            per_strategy,
        });
    }
    out
}
