use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radseg_bench::fixture;
use radseg_core::detector::{batch_channels, DetectorArch, DetectorNet};
use radseg_core::eval::{average_precision, project_to_views};
use radseg_core::nn::{Conv2d, Tensor};
use radseg_core::roi::{grow, label_seeds, GrowConfig};
use radseg_core::sim::{generate_world, render_frame, RadarGeometry};
use radseg_core::sparse::{voxelize, KernelMap, SegArch, SegNet, SubmanifoldConv3};

fn dense(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let conv = Conv2d::new(16, 32, 3, 1, true, &mut rng);
    let x = Tensor::from_fn(&[4, 16, 32, 32], |_| rng.gen_range(-1.0..1.0));
    c.bench_function("conv2d_3x3_16to32_32x32_batch4", |b| b.iter(|| conv.infer(black_box(&x)).unwrap()));

    let f = fixture(3);
    let net = DetectorNet::new(&DetectorArch::new(&f.geometry), 0).unwrap();
    let x = batch_channels(&[&f.log.to_channels()], &f.geometry).unwrap();
    c.bench_function("detector_infer_one_frame", |b| b.iter(|| net.infer(black_box(&x)).unwrap()));
}

fn sparse(c: &mut Criterion) {
    let f = fixture(5);
    let grid = voxelize(&f.roi).unwrap();
    c.bench_function("kernel_map_build", |b| b.iter(|| KernelMap::build(black_box(&grid))));
    let km = KernelMap::build(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let conv = SubmanifoldConv3::new(4, 32, true, &mut rng);
    c.bench_function("submanifold_conv3_4to32", |b| b.iter(|| conv.infer(black_box(&grid.features), &km).unwrap()));
    let net = SegNet::new(&SegArch::default(), 0).unwrap();
    c.bench_function("segmenter_predict_one_frame", |b| b.iter(|| net.predict(black_box(&f.roi)).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let g = RadarGeometry::default();
    let scene = generate_world(9, 4, &g).unwrap();
    c.bench_function("render_frame", |b| b.iter(|| render_frame(black_box(&scene), &g, 4)));

    let f = fixture(7);
    let seeds = label_seeds(&f.labels, &f.geometry);
    for d in [3, 6, 8] {
        let cfg = GrowConfig {
            max_distance: d,
            ..Default::default()
        };
        c.bench_function(&format!("grow_distance_{d}"), |b| b.iter(|| grow(black_box(&f.log), &seeds, &cfg).unwrap()));
    }
    let net = SegNet::new(&SegArch::default(), 0).unwrap();
    let preds = net.predict(&f.roi).unwrap();
    c.bench_function("project_to_views", |b| b.iter(|| project_to_views(black_box(&preds), &f.geometry)));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scored: Vec<(f64, bool)> = (0..5000).map(|_| (rng.gen_range(0.0..1.0), rng.gen_bool(0.6))).collect();
    c.bench_function("average_precision_5000", |b| {
        b.iter_batched(|| scored.clone(), |s| average_precision(&s, 3500), BatchSize::SmallInput)
    });
}

criterion_group!(benches, dense, sparse, pipeline);
criterion_main!(benches);
