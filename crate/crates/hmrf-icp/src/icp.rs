//! The outer ICP loop, generic over the rejection strategy.
//!
//! Loop structure: build the fixed-cloud index once, apply the initial pose,
//! query correspondences, then repeat select-inliers / fit / compose /
//! transform / re-query until the incremental step is small or the iteration
//! cap is hit. With the MRF strategy the hidden field is initialized from the
//! very first correspondences and refined by a long EM run before the first
//! transform is computed, then by short EM runs inside every step. Distances
//! are recomputed only after each localization, so the selection always works
//! on the residuals the previous fit saw.

use crate::fit::{fit_rigid, FitError, InlierSelection, MIN_INLIERS};
use crate::geometry::{apply_structured, FixedCloud, RigidTransform, StructuredCloud};
use crate::hmrf::{self, HmrfConfig, MeanField, MixtureParams};
use crate::nn::{batch_nearest, Correspondences, NnError, NnIndex};
use crate::reject::{self, RejectionStrategy};
use std::time::Instant;
use thiserror::Error;

pub const DEFAULT_MAX_ICP_ITERS: usize = 50;
pub const DEFAULT_TRANS_EPS: f64 = 1e-5;
pub const DEFAULT_ROT_EPS: f64 = 1e-5;

/// Multiplier on the fixed cloud's median spacing used to resolve the
/// dynamic strategy's distance parameter when none is given.
pub const DYNAMIC_D_PARAM_SPACING_FACTOR: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct IcpConfig {
    pub max_icp_iters: usize,
    /// Stop when the step translation norm falls below this (meters) ...
    pub trans_eps: f64,
    /// ... and the step rotation angle below this (radians).
    pub rot_eps: f64,
    pub strategy: RejectionStrategy,
}

impl IcpConfig {
    pub fn with_strategy(strategy: RejectionStrategy) -> Self {
        Self {
            max_icp_iters: DEFAULT_MAX_ICP_ITERS,
            trans_eps: DEFAULT_TRANS_EPS,
            rot_eps: DEFAULT_ROT_EPS,
            strategy,
        }
    }
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self::with_strategy(RejectionStrategy::hmrf())
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone)]
pub struct IcpIteration {
    /// The incremental transform of this iteration.
    pub step: RigidTransform,
    pub step_translation: f64,
    pub step_rotation: f64,
    pub inliers: usize,
    /// Mean residual over the selected inliers, measured on the
    /// correspondences the fit consumed.
    pub mean_inlier_residual: f64,
    /// EM iterations spent inside this step (0 for baseline strategies).
    pub em_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Total free-to-fixed transform, including the initial pose.
    pub transform: RigidTransform,
    pub iterations: usize,
    pub converged: bool,
    pub elapsed_seconds: f64,
    /// EM iterations spent before the first transform (MRF strategy only).
    pub initial_em_iterations: Option<usize>,
    pub trace: Vec<IcpIteration>,
}

/// State at the moment a registration failed; kept so benchmark harnesses
/// can score diverged runs instead of dropping them.
#[derive(Debug, Clone)]
pub struct RegistrationFailure {
    pub transform: RigidTransform,
    pub iterations: usize,
    pub initial_em_iterations: Option<usize>,
    pub trace: Vec<IcpIteration>,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum IcpError {
    #[error("registration failed after {} iterations: {}", .0.iterations, .0.reason)]
    Failed(Box<RegistrationFailure>),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Hmrf(#[from] hmrf::HmrfError),
}

/// Translation norm and rotation angle of an incremental step.
pub fn step_magnitudes(step: &RigidTransform) -> (f64, f64) {
    (step.translation().norm(), step.rotation_angle())
}

enum StrategyState {
    Baseline(BaselineRule),
    Hmrf {
        config: HmrfConfig,
        field: MeanField,
        theta: MixtureParams,
    },
}

enum BaselineRule {
    All,
    Percent(f64),
    Sigma(f64),
    X84(f64),
    Dynamic(f64),
}

impl BaselineRule {
    fn select(&self, corr: &Correspondences) -> InlierSelection {
        match self {
            Self::All => reject::reject_all(corr),
            Self::Percent(f) => reject::reject_percent(corr, *f),
            Self::Sigma(k) => reject::reject_sigma(corr, *k),
            Self::X84(k) => reject::reject_x84(corr, *k),
            Self::Dynamic(d) => reject::reject_dynamic(corr, *d),
        }
    }
}

/// Median nearest-neighbor spacing within the fixed cloud.
fn median_spacing(index: &NnIndex, fixed: &FixedCloud) -> f64 {
    let mut spacings: Vec<f64> = fixed
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| index.nearest_excluding(p, i).1)
        .filter(|d| d.is_finite())
        .collect();
    if spacings.is_empty() {
        1.0
    } else {
        crate::stats::median(&mut spacings)
    }
}

/// Registers the free cloud onto the fixed cloud starting from `t_init`.
pub fn icp_register(
    free: &StructuredCloud,
    fixed: &FixedCloud,
    t_init: &RigidTransform,
    config: &IcpConfig,
) -> Result<IcpResult, IcpError> {
    let start = Instant::now();
    let index = NnIndex::build(fixed)?;
    let mut total = t_init.clone();
    let mut moved = apply_structured(t_init, free);
    let mut corr = batch_nearest(&index, &moved)?;

    let mut initial_em_iterations = None;
    let mut state = match &config.strategy {
        RejectionStrategy::All => StrategyState::Baseline(BaselineRule::All),
        RejectionStrategy::Percent { fraction } => {
            StrategyState::Baseline(BaselineRule::Percent(*fraction))
        }
        RejectionStrategy::Sigma { k } => StrategyState::Baseline(BaselineRule::Sigma(*k)),
        RejectionStrategy::X84 { k } => StrategyState::Baseline(BaselineRule::X84(*k)),
        RejectionStrategy::Dynamic { d_param } => {
            let d = d_param
                .unwrap_or_else(|| DYNAMIC_D_PARAM_SPACING_FACTOR * median_spacing(&index, fixed));
            StrategyState::Baseline(BaselineRule::Dynamic(d))
        }
        RejectionStrategy::Hmrf(hmrf_config) => {
            let (field, theta) = hmrf::init_field(&corr, hmrf_config)?;
            let (field, theta, iters) = hmrf::run_em(
                &corr,
                field,
                theta,
                hmrf_config,
                hmrf_config.em_iters_initial,
            );
            initial_em_iterations = Some(iters);
            StrategyState::Hmrf {
                config: hmrf_config.clone(),
                field,
                theta,
            }
        }
    };

    let mut trace: Vec<IcpIteration> = Vec::new();
    let mut converged = false;

    while trace.len() < config.max_icp_iters {
        let (selection, em_iterations) = match &mut state {
            StrategyState::Baseline(rule) => (rule.select(&corr), 0),
            StrategyState::Hmrf {
                config: hcfg,
                field,
                theta,
            } => {
                let (new_field, new_theta, iters) = hmrf::run_em(
                    &corr,
                    field.clone(),
                    theta.clone(),
                    hcfg,
                    hcfg.em_iters_per_icp,
                );
                *field = new_field;
                *theta = new_theta;
                (hmrf::hmrf_select(field), iters)
            }
        };

        let inliers = selection.count();
        let fail = |reason: String, trace: Vec<IcpIteration>| {
            IcpError::Failed(Box::new(RegistrationFailure {
                transform: total.clone(),
                iterations: trace.len(),
                initial_em_iterations,
                trace,
                reason,
            }))
        };
        if inliers < MIN_INLIERS {
            return Err(fail(
                FitError::TooFewInliers { count: inliers }.to_string(),
                trace,
            ));
        }

        let step = match fit_rigid(&moved, fixed, &corr, &selection) {
            Ok(step) => step,
            Err(e) => return Err(fail(e.to_string(), trace)),
        };

        let mean_inlier_residual = {
            let sum: f64 = corr
                .distances
                .iter()
                .zip(selection.mask.iter())
                .filter_map(|(d, m)| m.then_some(*d))
                .sum();
            sum / inliers as f64
        };

        total = step.compose(&total);
        moved = apply_structured(&step, &moved);
        corr = batch_nearest(&index, &moved)?;

        let (step_translation, step_rotation) = step_magnitudes(&step);
        trace.push(IcpIteration {
            step,
            step_translation,
            step_rotation,
            inliers,
            mean_inlier_residual,
            em_iterations,
        });

        if step_translation < config.trans_eps && step_rotation < config.rot_eps {
            converged = true;
            break;
        }
    }

    Ok(IcpResult {
        transform: total,
        iterations: trace.len(),
        converged,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        initial_em_iterations,
        trace,
    })
}
