//! The L1 term on batch-norm scales should shrink them relative to plain
//! training from the same initialization and data order.

use radseg_core::detector::{prepare_frame, train_detector, DetTrainConfig, DetectorArch, DetectorNet, PreparedFrame};
use radseg_core::nn::LrSchedule;
use radseg_core::prune::Prunable;
use radseg_core::run::RunFiles;
use radseg_core::sim::{generate_world, render_frame, RadarGeometry};

fn median_abs_gamma(net: &mut DetectorNet) -> f64 {
    let mut v: Vec<f64> = net
        .prunable_bns()
        .iter()
        .flat_map(|(_, bn)| bn.gamma.value.data().iter().map(|g| g.abs()).collect::<Vec<_>>())
        .collect();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn sparsity_training_lowers_median_gamma() {
    let g = RadarGeometry {
        range_bins: 32,
        angle_bins: 32,
        doppler_bins: 16,
        ..Default::default()
    };
    let frames: Vec<PreparedFrame> = (0..16u64)
        .map(|s| {
            let scene = generate_world(s, 1 + (s % 3) as usize, &g).unwrap();
            let (cube, labels) = render_frame(&scene, &g, s + 99);
            prepare_frame(&cube, labels).unwrap()
        })
        .collect();
    let arch = DetectorArch {
        encoder: [8, 16, 16, 16],
        head_hidden: [16, 16, 16],
        ..DetectorArch::new(&g)
    };
    let run = |sparsity: f64| {
        let cfg = DetTrainConfig {
            epochs: 6,
            schedule: LrSchedule::Constant { lr: 1e-3 },
            sparsity,
            seed: 4,
            ..Default::default()
        };
        let net = DetectorNet::new(&arch, 1).unwrap();
        // no validation frames: the final weights are returned
        let mut out = train_detector(net, &frames, &[], &cfg, &RunFiles::default()).unwrap();
        median_abs_gamma(&mut out.net)
    };
    let plain = run(0.0);
    let sparse = run(1e-4);
    assert!(sparse < plain, "median |gamma| {sparse} with sparsity vs {plain} without");
}
