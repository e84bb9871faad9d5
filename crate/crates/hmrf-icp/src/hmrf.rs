//! Mean-field EM over a hidden inlier/outlier field on the pixel lattice.
//!
//! Each valid pixel carries a hidden state in {-1, +1} (+1 = inlier) whose
//! prior couples to its four lattice neighbors with strength `beta`, and
//! whose observed nearest-neighbor distance is modeled by a per-state
//! Gaussian. The mean-field relaxation replaces neighbor states by their
//! expectations, so the E-step becomes an independent per-pixel update
//!
//! ```text
//! z_i <- tanh(beta * s_i + (L_in(y_i) - L_out(y_i)) / 2)
//! ```
//!
//! with `s_i` the neighbor sum over the previous field and
//! `L(y) = -ln(sigma) - (y - mu)^2 / (2 sigma^2)`. The update is simultaneous
//! (Jacobi): every pixel reads only the previous field, so the sweep is
//! trivially parallel and bitwise deterministic.

use crate::nn::Correspondences;
use crate::stats;
use std::sync::Arc;
use thiserror::Error;

/// Lower bound on mixture standard deviations, in meters.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Mixture weight below which an M-step keeps a component's previous
/// parameters instead of dividing by (almost) zero.
const WEIGHT_FLOOR: f64 = 1e-12;

/// Fields stay strictly inside (-1, 1); tanh saturates to exactly 1.0 in
/// f64 around |x| > 19, so outputs are nudged back inside.
const FIELD_LIMIT: f64 = 1.0 - 1e-15;

#[derive(Debug, Error)]
pub enum HmrfError {
    #[error("need at least {min} correspondences to initialize the field, got {got}")]
    TooFewCorrespondences { min: usize, got: usize },
}

/// Coupling strength and EM schedule.
#[derive(Debug, Clone)]
pub struct HmrfConfig {
    /// Neighbor interaction strength; 0 decouples the lattice.
    pub beta: f64,
    /// Fraction of largest-distance pixels initially labeled outliers.
    pub init_outlier_frac: f64,
    /// EM iteration cap before the first transform is computed.
    pub em_iters_initial: usize,
    /// EM iteration cap inside each ICP step.
    pub em_iters_per_icp: usize,
}

impl Default for HmrfConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            init_outlier_frac: 0.1,
            em_iters_initial: 600,
            em_iters_per_icp: 20,
        }
    }
}

/// Inlier/outlier Gaussian parameters, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub mu_in: f64,
    pub sigma_in: f64,
    pub mu_out: f64,
    pub sigma_out: f64,
}

/// Neighbor topology of the valid pixels, shared between field snapshots.
#[derive(Debug)]
struct Lattice {
    width: usize,
    height: usize,
    /// Lattice index -> compact index, -1 where invalid.
    compact: Vec<i32>,
    /// Compact index -> lattice index.
    pixels: Vec<usize>,
    /// Up/down/left/right compact neighbors, -1 where missing or invalid.
    neighbors: Vec<[i32; 4]>,
}

impl Lattice {
    fn from_correspondences(corr: &Correspondences) -> Self {
        let mut compact = vec![-1i32; corr.width * corr.height];
        for (k, &pix) in corr.pixels.iter().enumerate() {
            compact[pix] = k as i32;
        }
        let w = corr.width as isize;
        let h = corr.height as isize;
        let neighbors = corr
            .pixels
            .iter()
            .map(|&pix| {
                let u = (pix % corr.width) as isize;
                let v = (pix / corr.width) as isize;
                let mut out = [-1i32; 4];
                for (slot, (du, dv)) in [(0, -1), (0, 1), (-1, 0), (1, 0)].iter().enumerate() {
                    let (nu, nv) = (u + du, v + dv);
                    if nu >= 0 && nu < w && nv >= 0 && nv < h {
                        out[slot] = compact[(nv * w + nu) as usize];
                    }
                }
                out
            })
            .collect();
        Self {
            width: corr.width,
            height: corr.height,
            compact,
            pixels: corr.pixels.clone(),
            neighbors,
        }
    }
}

/// The relaxed hidden field: one value in [-1, +1] per valid pixel.
#[derive(Debug, Clone)]
pub struct MeanField {
    values: Vec<f64>,
    lattice: Arc<Lattice>,
}

impl MeanField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Field value of the k-th valid pixel.
    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.lattice.width
    }

    pub fn height(&self) -> usize {
        self.lattice.height
    }

    /// Lattice index (v * width + u) of the k-th valid pixel.
    pub fn pixel(&self, k: usize) -> usize {
        self.lattice.pixels[k]
    }

    /// Whether a lattice pixel carries a field value.
    pub fn is_valid_pixel(&self, pixel: usize) -> bool {
        self.lattice.compact[pixel] >= 0
    }

    /// Sum of the field over the up/down/left/right neighbors of a valid
    /// lattice pixel. Missing or invalid neighbors contribute zero.
    pub fn neighbor_sum(&self, pixel: usize) -> f64 {
        let k = self.lattice.compact[pixel];
        assert!(k >= 0, "neighbor_sum of an invalid pixel");
        self.neighbor_sum_compact(k as usize)
    }

    fn neighbor_sum_compact(&self, k: usize) -> f64 {
        let mut s = 0.0;
        for &n in &self.lattice.neighbors[k] {
            if n >= 0 {
                s += self.values[n as usize];
            }
        }
        s
    }
}

/// Per-state prior from the local mean field: `p_plus = e^{bs} / (e^{bs} +
/// e^{-bs})` computed via tanh so it stays finite for any |beta * s|.
pub fn local_prior(neighbor_sum: f64, beta: f64) -> (f64, f64) {
    let p_plus = 0.5 * (1.0 + (beta * neighbor_sum).tanh());
    (p_plus, 1.0 - p_plus)
}

/// Log of the unnormalized Gaussian density, `-ln(sigma) - (y-mu)^2/(2 sigma^2)`.
fn log_gauss(y: f64, mu: f64, sigma: f64) -> f64 {
    let r = (y - mu) / sigma;
    -sigma.ln() - 0.5 * r * r
}

/// One-site E-step update in the numerically safe log domain.
fn update_site(beta_s: f64, y: f64, theta: &MixtureParams) -> f64 {
    let a_in = beta_s + log_gauss(y, theta.mu_in, theta.sigma_in);
    let a_out = -beta_s + log_gauss(y, theta.mu_out, theta.sigma_out);
    let m = a_in.max(a_out);
    let e_in = (a_in - m).exp();
    let e_out = (a_out - m).exp();
    let z = (e_in - e_out) / (e_in + e_out);
    z.clamp(-FIELD_LIMIT, FIELD_LIMIT)
}

/// Labels the `ceil(frac * n)` largest-distance pixels -1 and the rest +1
/// (ties by pixel index), then sets the mixture parameters to the mean and
/// population standard deviation of each set.
pub fn init_field(
    corr: &Correspondences,
    config: &HmrfConfig,
) -> Result<(MeanField, MixtureParams), HmrfError> {
    let n = corr.len();
    if n < 10 {
        return Err(HmrfError::TooFewCorrespondences { min: 10, got: n });
    }
    let n_out = ((config.init_outlier_frac * n as f64).ceil() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        corr.distances[a]
            .partial_cmp(&corr.distances[b])
            .expect("non-NaN residuals")
            .then_with(|| corr.pixels[a].cmp(&corr.pixels[b]))
    });

    let mut values = vec![1.0; n];
    for &k in order.iter().rev().take(n_out) {
        values[k] = -1.0;
    }

    let inlier_d: Vec<f64> = order[..n - n_out]
        .iter()
        .map(|&k| corr.distances[k])
        .collect();
    let outlier_d: Vec<f64> = order[n - n_out..]
        .iter()
        .map(|&k| corr.distances[k])
        .collect();
    let theta = MixtureParams {
        mu_in: stats::mean(&inlier_d),
        sigma_in: stats::pop_std(&inlier_d).max(SIGMA_FLOOR),
        mu_out: stats::mean(&outlier_d),
        sigma_out: stats::pop_std(&outlier_d).max(SIGMA_FLOOR),
    };

    let lattice = Arc::new(Lattice::from_correspondences(corr));
    Ok((MeanField { values, lattice }, theta))
}

/// Simultaneous E-step: every output reads only the input field.
pub fn e_step(
    field: &MeanField,
    theta: &MixtureParams,
    corr: &Correspondences,
    beta: f64,
) -> MeanField {
    assert_eq!(field.len(), corr.len(), "field misaligned with distances");
    let values = (0..field.len())
        .map(|k| {
            let s = field.neighbor_sum_compact(k);
            update_site(beta * s, corr.distances[k], theta)
        })
        .collect();
    MeanField {
        values,
        lattice: Arc::clone(&field.lattice),
    }
}

/// M-step: weighted means and population variances with weights
/// `(1 +- z_i) / 2`. A component whose total weight is (almost) zero keeps
/// its previous parameters.
pub fn m_step(field: &MeanField, corr: &Correspondences, prev: &MixtureParams) -> MixtureParams {
    assert_eq!(field.len(), corr.len(), "field misaligned with distances");
    let mut w_in_sum = 0.0;
    let mut w_out_sum = 0.0;
    let mut mu_in = 0.0;
    let mut mu_out = 0.0;
    for k in 0..field.len() {
        let z = field.values[k];
        let w_in = (1.0 + z) / 2.0;
        let w_out = (1.0 - z) / 2.0;
        w_in_sum += w_in;
        w_out_sum += w_out;
        mu_in += w_in * corr.distances[k];
        mu_out += w_out * corr.distances[k];
    }

    let component = |w_sum: f64, mu_acc: f64, sign: f64, prev_mu: f64, prev_sigma: f64| {
        if w_sum < WEIGHT_FLOOR {
            return (prev_mu, prev_sigma);
        }
        let mu = mu_acc / w_sum;
        let mut var = 0.0;
        for k in 0..field.len() {
            let w = (1.0 + sign * field.values[k]) / 2.0;
            let d = corr.distances[k] - mu;
            var += w * d * d;
        }
        (mu, (var / w_sum).sqrt().max(SIGMA_FLOOR))
    };

    let (mu_in, sigma_in) = component(w_in_sum, mu_in, 1.0, prev.mu_in, prev.sigma_in);
    let (mu_out, sigma_out) = component(w_out_sum, mu_out, -1.0, prev.mu_out, prev.sigma_out);
    MixtureParams {
        mu_in,
        sigma_in,
        mu_out,
        sigma_out,
    }
}

fn signs(values: &[f64]) -> Vec<bool> {
    values.iter().map(|z| *z > 0.0).collect()
}

/// Alternates M-step then E-step until no field value changes sign against
/// the previous iterate, or against the one before that (period-2
/// oscillations), or the cap is reached. Returns the final state and the
/// number of iterations executed.
///
/// After each M-step the component identities are checked: if the inlier
/// mean drifted above the outlier mean the components are swapped and the
/// field (including its sign history) is negated, preserving the convention
/// that inliers lie closer.
pub fn run_em(
    corr: &Correspondences,
    field: MeanField,
    theta: MixtureParams,
    config: &HmrfConfig,
    max_iters: usize,
) -> (MeanField, MixtureParams, usize) {
    run_em_observed(corr, field, theta, config, max_iters, |_, _| {})
}

/// [`run_em`] with a per-iteration callback, e.g. for dumping field images.
pub fn run_em_observed(
    corr: &Correspondences,
    mut field: MeanField,
    mut theta: MixtureParams,
    config: &HmrfConfig,
    max_iters: usize,
    mut observe: impl FnMut(usize, &MeanField),
) -> (MeanField, MixtureParams, usize) {
    let mut prev_signs = signs(&field.values);
    let mut prev_prev_signs: Option<Vec<bool>> = None;
    let mut iters = 0;

    for q in 1..=max_iters {
        iters = q;
        theta = m_step(&field, corr, &theta);
        if theta.mu_in > theta.mu_out {
            std::mem::swap(&mut theta.mu_in, &mut theta.mu_out);
            std::mem::swap(&mut theta.sigma_in, &mut theta.sigma_out);
            for z in field.values.iter_mut() {
                *z = -*z;
            }
            for s in prev_signs.iter_mut() {
                *s = !*s;
            }
            if let Some(pp) = prev_prev_signs.as_mut() {
                for s in pp.iter_mut() {
                    *s = !*s;
                }
            }
        }
        field = e_step(&field, &theta, corr, config.beta);
        observe(q, &field);

        let current = signs(&field.values);
        let settled = current == prev_signs
            || prev_prev_signs.as_ref().is_some_and(|pp| *pp == current);
        prev_prev_signs = Some(std::mem::replace(&mut prev_signs, current));
        if settled {
            break;
        }
    }
    (field, theta, iters)
}

/// Thresholds the field at zero: strictly positive means inlier.
pub fn hmrf_select(field: &MeanField) -> crate::fit::InlierSelection {
    crate::fit::InlierSelection {
        mask: field.values.iter().map(|z| *z > 0.0).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Full-lattice correspondences with the given distances.
    fn grid_corr(width: usize, height: usize, distances: Vec<f64>) -> Correspondences {
        assert_eq!(distances.len(), width * height);
        Correspondences {
            width,
            height,
            pixels: (0..width * height).collect(),
            indices: vec![0; width * height],
            distances,
        }
    }

    fn uniform_field(corr: &Correspondences, value: f64) -> MeanField {
        MeanField {
            values: vec![value; corr.len()],
            lattice: Arc::new(Lattice::from_correspondences(corr)),
        }
    }

    #[test]
    fn neighbor_sum_interior_corner_invalid() {
        let corr = grid_corr(4, 4, vec![0.1; 16]);
        let field = uniform_field(&corr, 1.0);
        // Interior pixel (1,1) has 4 neighbors.
        assert_abs_diff_eq!(field.neighbor_sum(1 * 4 + 1), 4.0);
        // Corner pixel (0,0) has 2 neighbors.
        let neg = uniform_field(&corr, -1.0);
        assert_abs_diff_eq!(neg.neighbor_sum(0), -2.0);

        // Invalid neighbor contributes 0: drop pixel (2,1), then (1,1) has
        // only three live neighbors.
        let sparse = Correspondences {
            width: 4,
            height: 4,
            pixels: (0..16).filter(|&p| p != 6).collect(),
            indices: vec![0; 15],
            distances: vec![0.1; 15],
        };
        let field = MeanField {
            values: vec![1.0; 15],
            lattice: Arc::new(Lattice::from_correspondences(&sparse)),
        };
        assert_abs_diff_eq!(field.neighbor_sum(5), 3.0);
    }

    #[test]
    fn local_prior_symmetry_and_closed_form() {
        let (p, m) = local_prior(0.0, 2.0);
        assert_abs_diff_eq!(p, 0.5);
        assert_abs_diff_eq!(m, 0.5);

        let (p, m) = local_prior(123.0, 0.0);
        assert_abs_diff_eq!(p, 0.5);
        assert_abs_diff_eq!(m, 0.5);

        // beta = 2, s = 4: p_plus = 1 / (1 + e^{-16}).
        let (p, _) = local_prior(4.0, 2.0);
        assert_abs_diff_eq!(p, 1.0 / (1.0 + (-16.0f64).exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(p, 0.5 * (1.0 + 8.0f64.tanh()), epsilon = 1e-15);
    }

    #[test]
    fn local_prior_sums_to_one_and_survives_huge_arguments() {
        for s in [-500.0, -3.0, 0.0, 1e-9, 7.0, 500.0] {
            let (p, m) = local_prior(s, 2.0);
            assert!((p + m - 1.0).abs() < 1e-15);
            assert!(p.is_finite() && m.is_finite());
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn init_field_marks_largest_distances() {
        let corr = grid_corr(5, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        let config = HmrfConfig::default();
        let (field, theta) = init_field(&corr, &config).unwrap();
        // ceil(0.1 * 10) = 1: exactly the max-distance pixel is -1.
        let negatives: Vec<usize> = (0..10).filter(|&k| field.value(k) < 0.0).collect();
        assert_eq!(negatives, vec![9]);
        assert_abs_diff_eq!(theta.mu_out, 1.0);
        assert_abs_diff_eq!(theta.sigma_out, SIGMA_FLOOR);
        assert_abs_diff_eq!(theta.mu_in, 0.5);
    }

    #[test]
    fn init_field_all_equal_uses_pixel_tie_rule() {
        let corr = grid_corr(5, 2, vec![0.3; 10]);
        let (field, theta) = init_field(&corr, &HmrfConfig::default()).unwrap();
        // Ties resolved by pixel index: the highest pixel index goes out.
        let negatives: Vec<usize> = (0..10).filter(|&k| field.value(k) < 0.0).collect();
        assert_eq!(negatives, vec![9]);
        assert_abs_diff_eq!(theta.mu_in, 0.3);
        assert_abs_diff_eq!(theta.mu_out, 0.3);
        assert_eq!(theta.sigma_in, SIGMA_FLOOR);
        assert_eq!(theta.sigma_out, SIGMA_FLOOR);
    }

    #[test]
    fn init_field_matches_sort_oracle() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..20 {
            let n = 60;
            let distances: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let corr = grid_corr(10, 6, distances.clone());
            let config = HmrfConfig {
                init_outlier_frac: 0.25,
                ..HmrfConfig::default()
            };
            let (field, theta) = init_field(&corr, &config).unwrap();

            let n_out = (0.25f64 * n as f64).ceil() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| distances[a].partial_cmp(&distances[b]).unwrap());
            let outliers: std::collections::HashSet<usize> =
                order[n - n_out..].iter().copied().collect();
            for k in 0..n {
                assert_eq!(field.value(k) < 0.0, outliers.contains(&k));
            }
            let out_d: Vec<f64> = outliers.iter().map(|&k| distances[k]).collect();
            let in_d: Vec<f64> = (0..n)
                .filter(|k| !outliers.contains(k))
                .map(|k| distances[k])
                .collect();
            assert_abs_diff_eq!(theta.mu_out, stats::mean(&out_d), epsilon = 1e-12);
            assert_abs_diff_eq!(theta.sigma_out, stats::pop_std(&out_d), epsilon = 1e-12);
            assert_abs_diff_eq!(theta.mu_in, stats::mean(&in_d), epsilon = 1e-12);
            assert_abs_diff_eq!(theta.sigma_in, stats::pop_std(&in_d), epsilon = 1e-12);
        }
    }

    #[test]
    fn init_field_rejects_tiny_inputs() {
        let corr = grid_corr(3, 3, vec![0.1; 9]);
        assert!(matches!(
            init_field(&corr, &HmrfConfig::default()),
            Err(HmrfError::TooFewCorrespondences { .. })
        ));
    }

    #[test]
    fn e_step_symmetric_point_is_zero() {
        // beta = 0, equal sigmas, y equidistant from both means.
        let corr = grid_corr(4, 3, vec![0.5; 12]);
        let field = uniform_field(&corr, 0.3);
        let theta = MixtureParams {
            mu_in: 0.4,
            sigma_in: 0.1,
            mu_out: 0.6,
            sigma_out: 0.1,
        };
        let out = e_step(&field, &theta, &corr, 0.0);
        for k in 0..out.len() {
            assert_abs_diff_eq!(out.value(k), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn e_step_beta_zero_equals_gmm_responsibilities() {
        let mut rng = StdRng::seed_from_u64(23);
        let distances: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..1.0)).collect();
        let corr = grid_corr(8, 6, distances.clone());
        let field = uniform_field(&corr, 0.2);
        let theta = MixtureParams {
            mu_in: 0.2,
            sigma_in: 0.15,
            mu_out: 0.7,
            sigma_out: 0.2,
        };
        let out = e_step(&field, &theta, &corr, 0.0);
        for (k, y) in distances.iter().enumerate() {
            let density = |mu: f64, sigma: f64| (1.0 / sigma) * (-(y - mu).powi(2) / (2.0 * sigma * sigma)).exp();
            let p_in = density(theta.mu_in, theta.sigma_in);
            let p_out = density(theta.mu_out, theta.sigma_out);
            let expect = (p_in - p_out) / (p_in + p_out);
            assert_abs_diff_eq!(out.value(k), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn e_step_saturated_neighbors_closed_form() {
        // beta = 2, all four neighbors +1, y equidistant, equal sigmas:
        // z = tanh(8).
        let corr = grid_corr(5, 5, vec![0.5; 25]);
        let field = uniform_field(&corr, 1.0);
        let theta = MixtureParams {
            mu_in: 0.4,
            sigma_in: 0.1,
            mu_out: 0.6,
            sigma_out: 0.1,
        };
        let out = e_step(&field, &theta, &corr, 2.0);
        let center = out.value(2 * 5 + 2);
        assert_abs_diff_eq!(center, 8.0f64.tanh(), epsilon = 1e-12);
    }

    #[test]
    fn e_step_outputs_open_interval_and_finite() {
        let corr = grid_corr(4, 4, vec![1e6; 16]);
        let field = uniform_field(&corr, 1.0);
        let theta = MixtureParams {
            mu_in: 0.0,
            sigma_in: SIGMA_FLOOR,
            mu_out: 1e6,
            sigma_out: SIGMA_FLOOR,
        };
        let out = e_step(&field, &theta, &corr, 2.0);
        for k in 0..out.len() {
            let z = out.value(k);
            assert!(z.is_finite());
            assert!(z > -1.0 && z < 1.0);
        }
    }

    #[test]
    fn e_step_relabeling_equivariance() {
        let mut rng = StdRng::seed_from_u64(29);
        let distances: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
        let corr = grid_corr(6, 5, distances);
        let values: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let field = MeanField {
            values: values.clone(),
            lattice: Arc::new(Lattice::from_correspondences(&corr)),
        };
        let theta = MixtureParams {
            mu_in: 0.3,
            sigma_in: 0.12,
            mu_out: 0.8,
            sigma_out: 0.25,
        };
        let flipped = MeanField {
            values: values.iter().map(|z| -z).collect(),
            lattice: Arc::clone(&field.lattice),
        };
        let swapped = MixtureParams {
            mu_in: theta.mu_out,
            sigma_in: theta.sigma_out,
            mu_out: theta.mu_in,
            sigma_out: theta.sigma_in,
        };
        let a = e_step(&field, &theta, &corr, 1.7);
        let b = e_step(&flipped, &swapped, &corr, 1.7);
        for k in 0..30 {
            assert_abs_diff_eq!(a.value(k), -b.value(k), epsilon = 1e-15);
        }
    }

    #[test]
    fn m_step_degenerate_and_uniform_fields() {
        let mut rng = StdRng::seed_from_u64(31);
        let distances: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let corr = grid_corr(5, 4, distances.clone());
        let prev = MixtureParams {
            mu_in: 0.11,
            sigma_in: 0.22,
            mu_out: 0.33,
            sigma_out: 0.44,
        };

        // All +1: inlier component gets plain moments, outlier keeps prev.
        let field = uniform_field(&corr, 1.0);
        let theta = m_step(&field, &corr, &prev);
        assert_abs_diff_eq!(theta.mu_in, stats::mean(&distances), epsilon = 1e-12);
        assert_abs_diff_eq!(theta.sigma_in, stats::pop_std(&distances), epsilon = 1e-12);
        assert_eq!(theta.mu_out, prev.mu_out);
        assert_eq!(theta.sigma_out, prev.sigma_out);

        // All 0: both components get the plain moments.
        let field = uniform_field(&corr, 0.0);
        let theta = m_step(&field, &corr, &prev);
        assert_abs_diff_eq!(theta.mu_in, theta.mu_out);
        assert_abs_diff_eq!(theta.sigma_in, theta.sigma_out);
        assert_abs_diff_eq!(theta.mu_in, stats::mean(&distances), epsilon = 1e-12);
    }

    #[test]
    fn m_step_matches_weighted_moment_oracle() {
        let mut rng = StdRng::seed_from_u64(37);
        for _ in 0..30 {
            let n = 40;
            let distances: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let corr = grid_corr(8, 5, distances.clone());
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let field = MeanField {
                values: values.clone(),
                lattice: Arc::new(Lattice::from_correspondences(&corr)),
            };
            let prev = MixtureParams {
                mu_in: 0.0,
                sigma_in: 1.0,
                mu_out: 0.0,
                sigma_out: 1.0,
            };
            let theta = m_step(&field, &corr, &prev);

            for (sign, mu, sigma) in [
                (1.0, theta.mu_in, theta.sigma_in),
                (-1.0, theta.mu_out, theta.sigma_out),
            ] {
                let w: Vec<f64> = values.iter().map(|z| (1.0 + sign * z) / 2.0).collect();
                let wsum: f64 = w.iter().sum();
                let mu_expect: f64 =
                    w.iter().zip(&distances).map(|(w, y)| w * y).sum::<f64>() / wsum;
                let var_expect: f64 = w
                    .iter()
                    .zip(&distances)
                    .map(|(w, y)| w * (y - mu_expect) * (y - mu_expect))
                    .sum::<f64>()
                    / wsum;
                assert_abs_diff_eq!(mu, mu_expect, epsilon = 1e-12);
                assert_abs_diff_eq!(sigma, var_expect.sqrt().max(SIGMA_FLOOR), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gmm_reduction_one_full_pass() {
        // beta = 0: one M+E pass must match a plain two-component
        // equal-prior GMM EM pass on the same distances.
        let mut rng = StdRng::seed_from_u64(41);
        let n = 50;
        let distances: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    rng.gen_range(0.0..0.3)
                } else {
                    rng.gen_range(0.5..1.0)
                }
            })
            .collect();
        let corr = grid_corr(10, 5, distances.clone());
        let values: Vec<f64> = (0..n)
            .map(|k| if distances[k] < 0.4 { 0.8 } else { -0.8 })
            .collect();
        let field = MeanField {
            values: values.clone(),
            lattice: Arc::new(Lattice::from_correspondences(&corr)),
        };
        let prev = MixtureParams {
            mu_in: 0.1,
            sigma_in: 0.1,
            mu_out: 0.7,
            sigma_out: 0.1,
        };

        let theta = m_step(&field, &corr, &prev);
        let out = e_step(&field, &theta, &corr, 0.0);

        // Independent GMM pass.
        let w_in: Vec<f64> = values.iter().map(|z| (1.0 + z) / 2.0).collect();
        let w_out: Vec<f64> = values.iter().map(|z| (1.0 - z) / 2.0).collect();
        let moments = |w: &[f64]| {
            let wsum: f64 = w.iter().sum();
            let mu: f64 = w.iter().zip(&distances).map(|(w, y)| w * y).sum::<f64>() / wsum;
            let var: f64 = w
                .iter()
                .zip(&distances)
                .map(|(w, y)| w * (y - mu) * (y - mu))
                .sum::<f64>()
                / wsum;
            (mu, var.sqrt().max(SIGMA_FLOOR))
        };
        let (gmu_in, gsig_in) = moments(&w_in);
        let (gmu_out, gsig_out) = moments(&w_out);
        assert_abs_diff_eq!(theta.mu_in, gmu_in, epsilon = 1e-12);
        assert_abs_diff_eq!(theta.sigma_in, gsig_in, epsilon = 1e-12);
        assert_abs_diff_eq!(theta.mu_out, gmu_out, epsilon = 1e-12);
        assert_abs_diff_eq!(theta.sigma_out, gsig_out, epsilon = 1e-12);

        for (k, y) in distances.iter().enumerate() {
            let density = |mu: f64, sigma: f64| {
                (1.0 / sigma) * (-(y - mu).powi(2) / (2.0 * sigma * sigma)).exp()
            };
            let r_in = density(gmu_in, gsig_in);
            let r_out = density(gmu_out, gsig_out);
            let expect = (r_in - r_out) / (r_in + r_out);
            assert_abs_diff_eq!(out.value(k), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn run_em_fixed_point_returns_after_one_iteration() {
        // Clearly separated halves, initialized at the truth.
        let mut distances = vec![0.01; 12];
        distances.extend(vec![0.9; 12]);
        let corr = grid_corr(4, 6, distances);
        let config = HmrfConfig {
            init_outlier_frac: 0.5,
            ..HmrfConfig::default()
        };
        let (field, theta) = init_field(&corr, &config).unwrap();
        let (_, _, iters) = run_em(&corr, field, theta, &config, 600);
        assert_eq!(iters, 1);
    }

    #[test]
    fn run_em_stops_at_cap() {
        let mut rng = StdRng::seed_from_u64(43);
        let distances: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
        let corr = grid_corr(6, 5, distances);
        let (field, theta) = init_field(&corr, &HmrfConfig::default()).unwrap();
        let (_, _, iters) = run_em(&corr, field, theta, &HmrfConfig::default(), 3);
        assert!(iters <= 3);
    }

    #[test]
    fn run_em_detects_period_two_oscillation() {
        // Two adjacent pixels with identical distances give a perfectly
        // neutral likelihood, so a strong coupling makes each pixel copy the
        // other's previous sign: an anti-aligned start flip-flops forever
        // and only the q-1 comparison can stop it.
        let corr = Correspondences {
            width: 2,
            height: 1,
            pixels: vec![0, 1],
            indices: vec![0, 0],
            distances: vec![0.5, 0.5],
        };
        let lattice = Arc::new(Lattice::from_correspondences(&corr));
        let field = MeanField {
            values: vec![1.0, -1.0],
            lattice,
        };
        let theta = MixtureParams {
            mu_in: 0.5,
            sigma_in: 0.5,
            mu_out: 0.5,
            sigma_out: 0.5,
        };
        let config = HmrfConfig {
            beta: 50.0,
            ..HmrfConfig::default()
        };
        let (_, _, iters) = run_em(&corr, field, theta, &config, 600);
        assert_eq!(iters, 2, "period-2 oscillation should stop at the q-1 check");
    }

    #[test]
    fn run_em_segments_bimodal_halves() {
        // A quarter of the points seed the outlier set, so EM has to grow
        // the labeled region across half the lattice on its own.
        let (corr, labels) = bimodal_scene(40, 30, 47);
        let config = HmrfConfig {
            init_outlier_frac: 0.25,
            ..HmrfConfig::default()
        };
        let (field, theta) = init_field(&corr, &config).unwrap();
        let (field, _, iters) = run_em(&corr, field, theta, &config, 600);
        assert!(iters <= 600);
        let agree = (0..corr.len())
            .filter(|&k| (field.value(k) > 0.0) == labels[k])
            .count();
        assert!(
            agree as f64 >= 0.99 * corr.len() as f64,
            "only {agree}/{} labels correct after {iters} iters",
            corr.len()
        );
    }

    /// Left half inlier-like N(0.01, 0.001), right half outlier-like
    /// N(0.5, 0.05). Returns ground-truth inlier labels alongside.
    pub(crate) fn bimodal_scene(
        width: usize,
        height: usize,
        seed: u64,
    ) -> (Correspondences, Vec<bool>) {
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let near = Normal::new(0.01, 0.001).unwrap();
        let far = Normal::new(0.5, 0.05).unwrap();
        let mut distances = Vec::with_capacity(width * height);
        let mut labels = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                let _ = v;
                let inlier = u < width / 2;
                let d: f64 = if inlier {
                    near.sample(&mut rng)
                } else {
                    far.sample(&mut rng)
                };
                distances.push(d.max(1e-9));
                labels.push(inlier);
            }
        }
        (grid_corr(width, height, distances), labels)
    }

    #[test]
    fn hmrf_select_thresholds_at_zero() {
        let corr = grid_corr(5, 2, vec![0.1; 10]);
        let lattice = Arc::new(Lattice::from_correspondences(&corr));
        let field = MeanField {
            values: vec![1.0, -1.0, 0.5, -0.5, 0.0, 1.0, -1.0, 0.2, -0.2, 0.9],
            lattice,
        };
        let sel = hmrf_select(&field);
        assert_eq!(
            sel.mask,
            vec![true, false, true, false, false, true, false, true, false, true]
        );

        let all_pos = MeanField {
            values: vec![1.0; 10],
            lattice: Arc::clone(&field.lattice),
        };
        assert_eq!(hmrf_select(&all_pos).count(), 10);
        let all_neg = MeanField {
            values: vec![-1.0; 10],
            lattice: Arc::clone(&field.lattice),
        };
        assert_eq!(hmrf_select(&all_neg).count(), 0);
    }

    #[test]
    fn em_pass_is_deterministic() {
        let (corr, _) = bimodal_scene(20, 15, 5);
        let config = HmrfConfig::default();
        let run = || {
            let (field, theta) = init_field(&corr, &config).unwrap();
            let (f, t, i) = run_em(&corr, field, theta, &config, 100);
            (f.values, t, i)
        };
        let (a_vals, a_theta, a_iters) = run();
        let (b_vals, b_theta, b_iters) = run();
        assert_eq!(a_vals, b_vals);
        assert_eq!(a_theta, b_theta);
        assert_eq!(a_iters, b_iters);
    }
}
