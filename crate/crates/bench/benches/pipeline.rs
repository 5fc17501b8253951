use criterion::{black_box, criterion_group, criterion_main, Criterion};
use splitstereo::detector::{nms_indices, PointDetector};
use splitstereo::geometry::disparity_to_point;
use splitstereo::matcher::StereoMatcher;
use splitstereo::metrics::{iou_3d, rotated_iou_bev};
use splitstereo::pipeline::cloud_from_estimate;
use splitstereo::scene::generate_scene;
use splitstereo_bench::{box_row, desk_frame};

fn geometry(c: &mut Criterion) {
    let (cfg, s) = desk_frame();
    let rig = cfg.rig();
    c.bench_function("disparity_to_point", |b| {
        b.iter(|| disparity_to_point(black_box(40.0), black_box(20.0), black_box(7.5), &rig))
    });
    let boxes = box_row(2);
    c.bench_function("rotated_iou_bev", |b| b.iter(|| rotated_iou_bev(black_box(&boxes[0]), black_box(&boxes[1]))));
    c.bench_function("iou_3d", |b| b.iter(|| iou_3d(black_box(&boxes[0]), black_box(&boxes[1]))));
    let row = box_row(200);
    c.bench_function("nms_200", |b| b.iter(|| nms_indices(black_box(&row), 0.1)));
    let d = s.disparity.clone().unwrap();
    let conf = d.map(|_| 1.0);
    let fg = s.fg_mask.clone().unwrap();
    c.bench_function("pseudo_cloud_64x128", |b| {
        b.iter(|| cloud_from_estimate(&d, &conf, &fg, &cfg, 2048, &rig, 0))
    });
}

fn models(c: &mut Criterion) {
    splitstereo::runtime::keep_heap_resident();
    let (cfg, s) = desk_frame();
    let mut g = c.benchmark_group("models");
    g.sample_size(10);
    g.bench_function("generate_scene_64x128", |b| b.iter(|| generate_scene(&cfg.scene, &cfg.rig(), black_box(7))));
    let matcher = StereoMatcher::new(cfg.matcher_config(), 1).unwrap();
    let fg = s.fg_mask.clone().unwrap();
    g.bench_function("matcher_forward_64x128", |b| b.iter(|| matcher.forward(&s.left, &s.right, &fg)));
    let d = s.disparity.clone().unwrap();
    let cloud = cloud_from_estimate(&d, &d.map(|_| 1.0), &fg, &cfg, 2048, &cfg.rig(), 0).unwrap();
    let det = PointDetector::new(cfg.car_detector_config(), 2).unwrap();
    g.bench_function("detector_2048_points", |b| b.iter(|| det.detect(black_box(&cloud))));
    g.finish();
}

criterion_group!(benches, geometry, models);
criterion_main!(benches);
