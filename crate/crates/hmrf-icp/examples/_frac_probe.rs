// Scratch probe: per-strategy registration quality on room scenes.
use hmrf_icp::geometry::{perturb_pose, rotation_error, translation_error};
use hmrf_icp::icp::{icp_register, IcpConfig};
use hmrf_icp::reject::RejectionStrategy;
use hmrf_icp::synth::{free_centroid, generate_scene, perturbation_axes, SceneParams};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

fn main() {
    let angle = std::f64::consts::PI / 30.0;
    let axes = perturbation_axes(16, 7);
    for (label, target, seeds) in [
        ("high", 0.85, vec![201u64, 202, 203, 204, 205, 206]),
        ("mid", 0.65, vec![211u64, 212]),
        ("low", 0.375, vec![301u64, 302, 304, 305, 306, 307, 308]),
    ] {
        for seed in seeds {
            let params = SceneParams { target_overlap: target, overlap_tol: 0.02, ..Default::default() };
            let pair = match generate_scene(&params, seed) {
                Ok(p) => p,
                Err(e) => { println!("{label} seed {seed}: GEN ERR {e}"); continue; }
            };
            let centroid = free_centroid(&pair.free);
            for strategy in [RejectionStrategy::hmrf(), RejectionStrategy::All, RejectionStrategy::percent()] {
                let mut terrs = vec![]; let mut rerrs = vec![]; let mut wins = 0; let mut conv = 0;
                let t0 = std::time::Instant::now();
                for axis in &axes {
                    let t_init = perturb_pose(&pair.gt, axis, angle, &centroid).unwrap();
                    let mut config = IcpConfig::with_strategy(strategy.clone());
                    config.trans_eps = 1e-3;
                    config.rot_eps = 1e-3;
                    match icp_register(&pair.free, &pair.fixed, &t_init, &config) {
                        Ok(res) => {
                            let te = translation_error(&res.transform, &pair.gt);
                            let re = rotation_error(&res.transform, &pair.gt);
                            if res.converged { conv += 1; }
                            if res.converged && te < 0.02 * pair.scene_diameter && re < 0.08 { wins += 1; }
                            terrs.push(te); rerrs.push(re);
                        }
                        Err(_) => { terrs.push(f64::NAN); rerrs.push(f64::NAN); }
                    }
                }
                let ok: Vec<f64> = terrs.iter().filter(|x| x.is_finite()).cloned().collect();
                let okr: Vec<f64> = rerrs.iter().filter(|x| x.is_finite()).cloned().collect();
                println!(
                    "{label} {seed} ov {:.2} diam {:.1} {:>7}: wins {wins:2}/16 conv {conv:2} med_t {:.4} med_r {:.4}  ({:.1}s)",
                    pair.overlap, pair.scene_diameter, strategy.label(),
                    median(ok), median(okr), t0.elapsed().as_secs_f64()
                );
            }
        }
    }
}
