//! The five comparison outlier-rejection strategies, plus the strategy
//! selector shared with the MRF-based rejector.
//!
//! All selectors are pure functions of the correspondence distances. Ties are
//! broken by lowest pixel index so results are deterministic and independent
//! of array order. Every selector tops its result up to [`MIN_INLIERS`]
//! correspondences (the smallest residuals) so the downstream rigid fit stays
//! well-posed.

use crate::fit::{InlierSelection, MIN_INLIERS};
use crate::hmrf::HmrfConfig;
use crate::nn::Correspondences;
use crate::stats;

pub const DEFAULT_PERCENT_FRACTION: f64 = 0.9;
pub const DEFAULT_SIGMA_K: f64 = 2.5;
pub const DEFAULT_X84_K: f64 = 5.2;

/// Which correspondences survive step 2 of each ICP iteration.
#[derive(Debug, Clone)]
pub enum RejectionStrategy {
    /// Keep every correspondence.
    All,
    /// Keep the given fraction with smallest residuals.
    Percent { fraction: f64 },
    /// Keep residuals below mean + k standard deviations.
    Sigma { k: f64 },
    /// Keep residuals below median + k median absolute deviations.
    X84 { k: f64 },
    /// Tiered mean/std threshold tuned by a distance parameter. `None`
    /// resolves to 10x the fixed cloud's median nearest-neighbor spacing at
    /// registration time.
    Dynamic { d_param: Option<f64> },
    /// Mean-field EM over the hidden inlier/outlier lattice field.
    Hmrf(HmrfConfig),
}

impl RejectionStrategy {
    pub fn percent() -> Self {
        Self::Percent {
            fraction: DEFAULT_PERCENT_FRACTION,
        }
    }

    pub fn sigma() -> Self {
        Self::Sigma { k: DEFAULT_SIGMA_K }
    }

    pub fn x84() -> Self {
        Self::X84 { k: DEFAULT_X84_K }
    }

    pub fn dynamic() -> Self {
        Self::Dynamic { d_param: None }
    }

    pub fn hmrf() -> Self {
        Self::Hmrf(HmrfConfig::default())
    }

    /// Column label used in results tables.
    pub fn label(&self) -> &'static str {
        match self {
            Self::All => "all",
            Self::Percent { .. } => "pct",
            Self::Sigma { .. } => "sigma",
            Self::X84 { .. } => "x84",
            Self::Dynamic { .. } => "dynamic",
            Self::Hmrf(_) => "hmrf",
        }
    }

    /// The canonical six strategies in results-table order.
    pub fn canonical_set() -> Vec<Self> {
        vec![
            Self::All,
            Self::percent(),
            Self::sigma(),
            Self::x84(),
            Self::dynamic(),
            Self::hmrf(),
        ]
    }
}

/// Indices of correspondences ordered by (distance, pixel index).
fn order_by_distance(corr: &Correspondences) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..corr.len()).collect();
    idx.sort_by(|&a, &b| {
        corr.distances[a]
            .partial_cmp(&corr.distances[b])
            .expect("non-NaN residuals")
            .then_with(|| corr.pixels[a].cmp(&corr.pixels[b]))
    });
    idx
}

/// Expands a selection to the 3 smallest residuals when a threshold rule
/// left fewer than that.
fn enforce_floor(mut sel: InlierSelection, corr: &Correspondences) -> InlierSelection {
    if sel.count() >= MIN_INLIERS.min(corr.len()) {
        return sel;
    }
    for &k in order_by_distance(corr).iter().take(MIN_INLIERS) {
        sel.mask[k] = true;
    }
    sel
}

/// Keeps every valid correspondence.
pub fn reject_all(corr: &Correspondences) -> InlierSelection {
    InlierSelection::all(corr.len())
}

/// Keeps exactly `max(3, floor(fraction * n))` smallest residuals, ties by
/// lowest pixel index.
pub fn reject_percent(corr: &Correspondences, fraction: f64) -> InlierSelection {
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction in (0, 1]");
    let n = corr.len();
    let keep = ((fraction * n as f64).floor() as usize).max(MIN_INLIERS).min(n);
    let mut mask = vec![false; n];
    for &k in order_by_distance(corr).iter().take(keep) {
        mask[k] = true;
    }
    InlierSelection { mask }
}

/// Keeps residuals strictly below mean + k * population std. A zero std
/// (all residuals equal) keeps everything.
pub fn reject_sigma(corr: &Correspondences, k: f64) -> InlierSelection {
    let std = stats::pop_std(&corr.distances);
    if std == 0.0 {
        return InlierSelection::all(corr.len());
    }
    let threshold = stats::mean(&corr.distances) + k * std;
    let mask = corr.distances.iter().map(|d| *d < threshold).collect();
    enforce_floor(InlierSelection { mask }, corr)
}

/// Keeps residuals strictly below median + k * MAD. When the MAD is zero,
/// keeps residuals at or below the median instead.
pub fn reject_x84(corr: &Correspondences, k: f64) -> InlierSelection {
    let med = stats::median(&mut corr.distances.clone());
    let mut devs: Vec<f64> = corr.distances.iter().map(|d| (d - med).abs()).collect();
    let mad = stats::median(&mut devs);
    let mask = if mad == 0.0 {
        corr.distances.iter().map(|d| *d <= med).collect()
    } else {
        let threshold = med + k * mad;
        corr.distances.iter().map(|d| *d < threshold).collect()
    };
    enforce_floor(InlierSelection { mask }, corr)
}

/// Adaptive threshold with a distance parameter: the farther the current
/// mean residual is from `d_param`, the tighter the cut. A zero std keeps
/// everything.
pub fn reject_dynamic(corr: &Correspondences, d_param: f64) -> InlierSelection {
    assert!(d_param > 0.0, "d_param must be positive");
    let mu = stats::mean(&corr.distances);
    let sigma = stats::pop_std(&corr.distances);
    if sigma == 0.0 {
        return InlierSelection::all(corr.len());
    }
    let threshold = if mu < d_param {
        mu + 3.0 * sigma
    } else if mu < 3.0 * d_param {
        mu + 2.0 * sigma
    } else if mu < 6.0 * d_param {
        mu + sigma
    } else {
        stats::median(&mut corr.distances.clone())
    };
    let mask = corr.distances.iter().map(|d| *d < threshold).collect();
    enforce_floor(InlierSelection { mask }, corr)
}
