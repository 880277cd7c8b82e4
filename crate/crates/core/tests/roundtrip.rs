use num_complex::Complex64;
use proptest::prelude::*;
use radseg_core::config::RunConfig;
use radseg_core::dataset::{load_frame, save_frame};
use radseg_core::sim::{annotate_rad, generate_world, ComplexRadCube, RadarGeometry};

fn small_geometry() -> RadarGeometry {
    RadarGeometry {
        range_bins: 32,
        angle_bins: 32,
        doppler_bins: 16,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frames_survive_disk_bit_for_bit(seed in 0u64..1000, n in 1usize..=2, scale in -1e6f64..1e6) {
        let g = small_geometry();
        let scene = generate_world(seed, n, &g).unwrap();
        let labels = annotate_rad(&scene, &g);
        let values = (0..g.n_cells())
            .map(|i| Complex64::new(scale * (i as f64).sin(), (seed as f64 + i as f64).cos() / 3.0))
            .collect();
        let cube = ComplexRadCube::from_values(&g, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_frame(dir.path(), "train", "w00_f0000", &cube, &labels).unwrap();
        let (c2, l2) = load_frame(dir.path(), "train", "w00_f0000", None).unwrap();
        prop_assert_eq!(c2, cube);
        prop_assert_eq!(l2, labels);
    }

    #[test]
    fn config_overrides_round_trip(epochs in 1usize..500, fraction in 0.0f64..0.99, d in 0u32..20) {
        let cfg = RunConfig::load_with_overrides(None, &[
            format!("detector.train.epochs={epochs}"),
            format!("pruning.fraction={fraction}"),
            format!("region_growing.max_distance={d}"),
        ]).unwrap();
        prop_assert_eq!(cfg.detector.train.epochs, epochs);
        prop_assert_eq!(cfg.pruning.fraction, fraction);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(RunConfig::load_with_overrides(Some(&p), &[]).unwrap(), cfg);
    }
}
