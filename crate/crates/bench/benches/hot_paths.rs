use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use roomforge::field::{render_ray, LossWeights, TrainConfig, Trainer};
use roomforge::mesh::{marching_cubes, ExtractionConfig};
use roomforge::scene::{assemble_scene, brute_force_hit, default_preview_camera, FloorPlan, PlacementSlot, TraceScene};
use roomforge::{Ray, Vec3};
use roomforge_bench::{sphere_dataset, sphere_field};

fn bench_render_ray(c: &mut Criterion) {
    let field = sphere_field(128);
    let ray = Ray::new(Vec3::new(0.05, -4.0, 0.1), Vec3::new(0.0, 1.0, 0.0));
    c.bench_function("render_ray/128cube/128samples", |b| b.iter(|| render_ray(black_box(&field), &ray, 0.1, 10.0, 128).unwrap()));
}

fn bench_marching_cubes(c: &mut Criterion) {
    let field = sphere_field(64);
    let cfg = ExtractionConfig::default();
    c.bench_function("marching_cubes/64cube", |b| b.iter(|| marching_cubes(black_box(&field), &cfg).unwrap()));
}

fn room() -> TraceScene {
    let mesh = roomforge::mesh::extract_mesh(&sphere_field(48), &ExtractionConfig::default()).unwrap();
    let plan = FloorPlan {
        name: "bench".into(),
        floor_polygon: vec![[0.0, 0.0], [5.0, 0.0], [5.0, 4.0], [0.0, 4.0]],
        wall_height: 2.5,
        slots: (0..4)
            .map(|i| PlacementSlot {
                id: format!("s{i}"),
                category: "ball".into(),
                position: Vec3::new(1.0 + i as f64, 2.0, 0.0),
                yaw: 0.0,
                extent: Vec3::splat(0.8),
            })
            .collect(),
    };
    let mut assets = BTreeMap::new();
    assets.insert("ball".to_string(), vec![mesh]);
    let scene = assemble_scene(&plan, &assets, 0).unwrap();
    TraceScene::new(&scene.world_mesh())
}

fn bench_bvh(c: &mut Criterion) {
    let trace = room();
    let plan_cam = {
        let plan = FloorPlan {
            name: "bench".into(),
            floor_polygon: vec![[0.0, 0.0], [5.0, 0.0], [5.0, 4.0], [0.0, 4.0]],
            wall_height: 2.5,
            slots: vec![],
        };
        default_preview_camera(&plan, 64, 64)
    };
    let rays: Vec<Ray> = (0..64 * 64).map(|i| plan_cam.pixel_ray(i % 64, i / 64)).collect();
    let mut g = c.benchmark_group("trace_64x64");
    g.sample_size(10);
    g.bench_function("bvh", |b| b.iter(|| rays.iter().filter_map(|r| trace.bvh.intersect(r)).count()));
    g.bench_function("brute_force", |b| b.iter(|| rays.iter().filter_map(|r| brute_force_hit(trace.bvh.triangles(), r)).count()));
    g.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let ds = sphere_dataset(16, 64);
    let cfg = TrainConfig {
        resolution: 64,
        rays_per_batch: 1024,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg.initial_field().unwrap(), &ds, LossWeights::default(), cfg).unwrap();
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    g.bench_function("64cube/1024rays/128samples", |b| b.iter(|| trainer.train_step().unwrap()));
    g.finish();
}

criterion_group!(benches, bench_render_ray, bench_marching_cubes, bench_bvh, bench_train_step);
criterion_main!(benches);
